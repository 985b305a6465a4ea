//! Declarative experiment configuration: a flat key = value file with
//! sections (TOML), one file per experiment. The paper-style experiment
//! configs shipped in `configs/` at the repository root are instances of
//! this schema.

use crate::error::{Error, Result};
use crate::gp::MleNormalisation;
use crate::solver::StrategyKind;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Problem identifier: burgers | porous | burgers_forced.
    pub problem: String,
    /// Reserved for stochastic extensions; echoed into reports.
    #[serde(default)]
    pub seed: Option<u64>,
    pub prior: PriorConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    DefaultMatern,
    RationalQuadratic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub kind: PriorKind,
    /// Temporal length-scale.
    pub rho_t: f64,
    /// Spatial length-scale.
    pub rho_x: f64,
    /// Matern smoothness indices per axis (ignored by the rational quadratic).
    #[serde(default = "default_beta_t")]
    pub beta_t: u32,
    #[serde(default = "default_beta_x")]
    pub beta_x: u32,
}

fn default_beta_t() -> u32 {
    1
}

fn default_beta_x() -> u32 {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    LagMean,
    PorousQ1,
    PorousQ2,
}

impl StrategyName {
    pub fn kind(self) -> StrategyKind {
        match self {
            StrategyName::LagMean => StrategyKind::LagMean,
            StrategyName::PorousQ1 => StrategyKind::PorousQ1,
            StrategyName::PorousQ2 => StrategyKind::PorousQ2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MleNorm {
    PerStep,
    PerObservation,
}

impl MleNorm {
    pub fn to_gp(self) -> MleNormalisation {
        match self {
            MleNorm::PerStep => MleNormalisation::PerStep,
            MleNorm::PerObservation => MleNormalisation::PerObservation,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_strategy")]
    pub strategy: StrategyName,
    #[serde(default)]
    pub conserve_mass: bool,
    #[serde(default = "default_mle_norm")]
    pub mle_normalisation: MleNorm,
    #[serde(default = "default_z_floor")]
    pub z_floor: f64,
}

fn default_strategy() -> StrategyName {
    StrategyName::LagMean
}

fn default_mle_norm() -> MleNorm {
    MleNorm::PerStep
}

fn default_z_floor() -> f64 {
    1e-6
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            strategy: default_strategy(),
            conserve_mass: false,
            mle_normalisation: default_mle_norm(),
            z_floor: default_z_floor(),
        }
    }
}

/// Grid sizes are `n = 2^i + 1`, `m = 2^j + 1` over the exponent lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub i: Vec<u32>,
    pub j: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

fn default_out_dir() -> String {
    "out".to_string()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_out_dir(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Refinement factor of the truth substitute relative to the largest
    /// sweep grid; only consulted when the problem has no closed-form truth.
    #[serde(default = "default_refine")]
    pub refine: usize,
}

fn default_refine() -> usize {
    256
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            refine: default_refine(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        crate::problems::problem_by_id(&self.problem)?;
        if self.sweep.i.is_empty() || self.sweep.j.is_empty() {
            return Err(Error::Config("sweep exponent lists must be nonempty".into()));
        }
        for &e in self.sweep.i.iter().chain(self.sweep.j.iter()) {
            if !(2..=7).contains(&e) {
                return Err(Error::Config(format!(
                    "sweep exponent {e} outside [2, 7] (grid sizes 5..129)"
                )));
            }
        }
        if self.prior.rho_t <= 0.0 || self.prior.rho_x <= 0.0 {
            return Err(Error::Config("length-scales must be positive".into()));
        }
        if self.solver.z_floor <= 0.0 {
            return Err(Error::Config("z_floor must be positive".into()));
        }
        Ok(())
    }
}
