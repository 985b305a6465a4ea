//! Configuration-driven experiment runner: single solves and sweeps over
//! `(2^i + 1, 2^j + 1)` grids, baseline comparisons with budget parity, and
//! report emission (metrics.csv, report.json, fields/*.csv).

pub mod config;

use crate::baselines::{crank_nicolson, reference_solution, ReferenceSolution};
use crate::error::{Error, Result};
use crate::kernels::{TensorKernel, UnivariateKernel};
use crate::metrics::{sup_error, z_score, MetricRow, CSV_HEADER};
use crate::problems::{problem_by_id, PDEProblem, PROBLEM_IDS};
use crate::solver::{
    default_prior, solve_pnm, Grid, LinearisationStrategy, SolveOptions, SolveReport,
};
use config::{ExperimentConfig, PriorKind};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "PNM_OUT_DIR";

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub max_workers: Option<usize>,
    /// Subset of sweep cells as (i, j) exponent pairs.
    pub cells: Option<Vec<(u32, u32)>>,
}

/// Parses `--cells i:j[,i:j...]`.
pub fn parse_cells(spec: &str) -> Result<Vec<(u32, u32)>> {
    spec.split(',')
        .map(|pair| {
            let mut it = pair.split(':');
            let i = it.next().and_then(|v| v.trim().parse().ok());
            let j = it.next().and_then(|v| v.trim().parse().ok());
            match (i, j, it.next()) {
                (Some(i), Some(j), None) => Ok((i, j)),
                _ => Err(Error::Config(format!(
                    "bad cell spec {pair:?}, expected i:j"
                ))),
            }
        })
        .collect()
}

fn build_prior(cfg: &ExperimentConfig) -> Result<TensorKernel> {
    match cfg.prior.kind {
        PriorKind::DefaultMatern => default_prior(
            (cfg.prior.beta_t, cfg.prior.beta_x),
            cfg.prior.rho_t,
            cfg.prior.rho_x,
        ),
        PriorKind::RationalQuadratic => Ok(TensorKernel::new(
            UnivariateKernel::rational_quadratic(1.0, cfg.prior.rho_t)?,
            UnivariateKernel::rational_quadratic(1.0, cfg.prior.rho_x)?,
        )),
    }
}

fn solve_options(cfg: &ExperimentConfig) -> SolveOptions {
    SolveOptions {
        conserve_mass: cfg.solver.conserve_mass,
        mle_normalisation: cfg.solver.mle_normalisation.to_gp(),
        z_floor: cfg.solver.z_floor,
        ..SolveOptions::default()
    }
}

fn sweep_cells(cfg: &ExperimentConfig, overrides: &Overrides) -> Result<Vec<(u32, u32)>> {
    let mut cells = Vec::new();
    for &i in &cfg.sweep.i {
        for &j in &cfg.sweep.j {
            cells.push((i, j));
        }
    }
    if let Some(subset) = &overrides.cells {
        cells.retain(|c| subset.contains(c));
        if cells.is_empty() {
            return Err(Error::Config(
                "--cells selection matches no sweep cell".into(),
            ));
        }
    }
    Ok(cells)
}

fn resolve_out_dir(cfg: &ExperimentConfig, overrides: &Overrides) -> PathBuf {
    if let Some(dir) = &overrides.out_dir {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(&cfg.output.dir)
}

/// Ground truth for a cell: the problem's closed form, or the reference.
enum Truth<'a> {
    ClosedForm(&'a PDEProblem),
    Reference(&'a ReferenceSolution),
}

impl Truth<'_> {
    fn field(&self, grid: &Grid) -> Array2<f64> {
        Array2::from_shape_fn((grid.n(), grid.m()), |(i, j)| {
            let (t, x) = (grid.t_nodes[i], grid.x_nodes[j]);
            match self {
                Truth::ClosedForm(p) => p.truth(t, x).expect("closed-form truth"),
                Truth::Reference(r) => r.eval(t, x),
            }
        })
    }
}

#[derive(Serialize)]
struct CellReport {
    i: u32,
    j: u32,
    n: usize,
    m: usize,
    e_inf: f64,
    z: f64,
    z_clipped_nodes: usize,
    z_skipped_nodes: usize,
    z_infinite_sentinel: bool,
    sigma_hat: f64,
    runtime_s: f64,
    f_evals: u64,
    g_evals: u64,
    h_evals: u64,
    jitter_events: Vec<crate::gp::JitterEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    e_inf_cn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f_evals_cn: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    budget_parity: Option<bool>,
}

struct CellOutcome {
    report: CellReport,
    row: MetricRow,
    fields_csv: String,
}

fn run_cell(
    cfg: &ExperimentConfig,
    template: &PDEProblem,
    truth: &Truth,
    (i, j): (u32, u32),
) -> Result<CellOutcome> {
    let start = Instant::now();
    let n = (1usize << i) + 1;
    let m = (1usize << j) + 1;
    let problem = template.clone_fresh();
    let grid = Grid::for_problem(&problem, n, m)?;
    let prior = build_prior(cfg)?;
    let strategy = LinearisationStrategy::from_kind(cfg.solver.strategy.kind())?;
    let options = solve_options(cfg);
    let mut report = solve_pnm(&problem, &grid, &prior, &strategy, &options)?;

    let truth_field = truth.field(&grid);
    let e_inf = sup_error(&report.mean_field, &truth_field)?;
    let z = z_score(
        &report.mean_field,
        &report.unit_std_field,
        report.sigma_hat,
        &truth_field,
        options.z_floor,
    )?;
    report.e_inf = Some(e_inf);
    report.z_score = Some(z.value);
    let runtime_s = start.elapsed().as_secs_f64();

    let fields_csv = fields_csv(&report, &truth_field);
    let cost = report.cost;
    Ok(CellOutcome {
        report: CellReport {
            i,
            j,
            n,
            m,
            e_inf,
            z: z.value,
            z_clipped_nodes: z.clipped,
            z_skipped_nodes: z.skipped,
            z_infinite_sentinel: z.infinite_sentinel,
            sigma_hat: report.sigma_hat,
            runtime_s,
            f_evals: cost.f,
            g_evals: cost.g,
            h_evals: cost.h,
            jitter_events: report.jitter_events.clone(),
            e_inf_cn: None,
            f_evals_cn: None,
            budget_parity: None,
        },
        row: MetricRow {
            n,
            m,
            e_inf,
            z: z.value,
            sigma_hat: report.sigma_hat,
            runtime_s,
            f_evals: cost.f,
            g_evals: cost.g,
            h_evals: cost.h,
            jitter_events: report.jitter_events.len(),
        },
        fields_csv,
    })
}

fn fields_csv(report: &SolveReport, truth_field: &Array2<f64>) -> String {
    let grid = &report.grid;
    let mut out = String::from("t,x,mean,std,truth\n");
    for i in 0..grid.n() {
        for j in 0..grid.m() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                grid.t_nodes[i],
                grid.x_nodes[j],
                report.mean_field[(i, j)],
                report.std_field[(i, j)],
                truth_field[(i, j)]
            ));
        }
    }
    out
}

fn with_pool<T: Send>(max_workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match max_workers {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn write_outputs(
    out_dir: &Path,
    rows: &[MetricRow],
    fields: &[((u32, u32), String)],
    report_json: &serde_json::Value,
) -> Result<()> {
    std::fs::create_dir_all(out_dir.join("fields"))?;
    let mut metrics = String::from(CSV_HEADER);
    metrics.push('\n');
    for row in rows {
        metrics.push_str(&row.csv_line());
        metrics.push('\n');
    }
    std::fs::write(out_dir.join("metrics.csv"), metrics)?;
    let mut file = std::fs::File::create(out_dir.join("report.json"))?;
    writeln!(file, "{}", serde_json::to_string_pretty(report_json).unwrap())?;
    for ((i, j), csv) in fields {
        std::fs::write(out_dir.join("fields").join(format!("cell_i{i}_j{j}.csv")), csv)?;
    }
    Ok(())
}

fn build_reference(cfg: &ExperimentConfig, template: &PDEProblem) -> Result<ReferenceSolution> {
    let n_max = (1usize << cfg.sweep.i.iter().copied().max().unwrap()) + 1;
    let m_max = (1usize << cfg.sweep.j.iter().copied().max().unwrap()) + 1;
    reference_solution(template, (n_max, m_max), cfg.reference.refine)
}

/// Runs the sweep described by the config: one solve per cell, metrics
/// against the closed-form truth or the reference, and report files in the
/// output directory. Returns the resolved output directory.
pub fn run(cfg: &ExperimentConfig, overrides: &Overrides) -> Result<PathBuf> {
    cfg.validate()?;
    let out_dir = resolve_out_dir(cfg, overrides);
    let template = problem_by_id(&cfg.problem)?;
    let cells = sweep_cells(cfg, overrides)?;

    let reference = if template.has_truth() {
        None
    } else {
        Some(build_reference(cfg, &template)?)
    };
    let truth = match &reference {
        Some(r) => Truth::Reference(r),
        None => Truth::ClosedForm(&template),
    };

    let outcomes: Vec<Result<CellOutcome>> = with_pool(overrides.max_workers, || {
        cells
            .par_iter()
            .map(|&cell| run_cell(cfg, &template, &truth, cell))
            .collect()
    })?;
    let outcomes: Vec<CellOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let rows: Vec<MetricRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    let fields: Vec<((u32, u32), String)> = outcomes
        .iter()
        .map(|o| ((o.report.i, o.report.j), o.fields_csv.clone()))
        .collect();
    let report = json!({
        "command": "run",
        "versions": {"pnm": env!("CARGO_PKG_VERSION")},
        "problem": cfg.problem,
        "config": cfg,
        "reference": reference.as_ref().map(|r| json!({
            "refine": r.refine,
            "est_truth_error": r.est_truth_error,
        })),
        "cells": outcomes.iter().map(|o| &o.report).collect::<Vec<_>>(),
    });
    write_outputs(&out_dir, &rows, &fields, &report)?;

    if let Some(r) = &reference {
        let smallest = rows.iter().map(|r| r.e_inf).fold(f64::INFINITY, f64::min);
        r.richardson_gate(smallest, 0.1)?;
    }
    Ok(out_dir)
}

/// Runs the PNM and Crank-Nicolson on the same grids with identical
/// f-evaluation budgets, emitting compare.csv alongside the usual outputs.
pub fn compare(cfg: &ExperimentConfig, overrides: &Overrides) -> Result<PathBuf> {
    cfg.validate()?;
    if cfg.problem != "burgers_forced" {
        return Err(Error::Config(format!(
            "compare requires problem = \"burgers_forced\", got {:?}",
            cfg.problem
        )));
    }
    let out_dir = resolve_out_dir(cfg, overrides);
    let template = problem_by_id(&cfg.problem)?;
    let cells = sweep_cells(cfg, overrides)?;
    let reference = build_reference(cfg, &template)?;
    let truth = Truth::Reference(&reference);

    let outcomes: Vec<Result<CellOutcome>> = with_pool(overrides.max_workers, || {
        cells
            .par_iter()
            .map(|&cell| {
                let mut outcome = run_cell(cfg, &template, &truth, cell)?;
                // classical comparator on its own instance, same grid
                let cn_problem = template.clone_fresh();
                let grid = Grid::for_problem(&cn_problem, outcome.report.n, outcome.report.m)?;
                let field = crank_nicolson(&cn_problem, &grid)?;
                let truth_field = truth.field(&grid);
                let e_inf_cn = sup_error(&field.values, &truth_field)?;
                let f_cn = cn_problem.eval_counts().f;
                outcome.report.e_inf_cn = Some(e_inf_cn);
                outcome.report.f_evals_cn = Some(f_cn);
                outcome.report.budget_parity = Some(f_cn == outcome.report.f_evals);
                Ok(outcome)
            })
            .collect()
    })?;
    let outcomes: Vec<CellOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let rows: Vec<MetricRow> = outcomes.iter().map(|o| o.row.clone()).collect();
    let fields: Vec<((u32, u32), String)> = outcomes
        .iter()
        .map(|o| ((o.report.i, o.report.j), o.fields_csv.clone()))
        .collect();
    let parity = outcomes
        .iter()
        .all(|o| o.report.budget_parity == Some(true));
    let report = json!({
        "command": "compare",
        "versions": {"pnm": env!("CARGO_PKG_VERSION")},
        "problem": cfg.problem,
        "config": cfg,
        "reference": {
            "refine": reference.refine,
            "est_truth_error": reference.est_truth_error,
        },
        "budget_parity": parity,
        "cells": outcomes.iter().map(|o| &o.report).collect::<Vec<_>>(),
    });
    write_outputs(&out_dir, &rows, &fields, &report)?;

    let mut compare_csv = String::from("n,m,e_inf_pnm,e_inf_cn,f_evals_pnm,f_evals_cn\n");
    for o in &outcomes {
        compare_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            o.report.n,
            o.report.m,
            o.report.e_inf,
            o.report.e_inf_cn.unwrap(),
            o.report.f_evals,
            o.report.f_evals_cn.unwrap()
        ));
    }
    std::fs::write(out_dir.join("compare.csv"), compare_csv)?;

    let smallest = rows.iter().map(|r| r.e_inf).fold(f64::INFINITY, f64::min);
    reference.richardson_gate(smallest, 0.1)?;
    if !parity {
        return Err(Error::Config(
            "budget parity violated: PNM and Crank-Nicolson f-evaluation counts differ".into(),
        ));
    }
    Ok(out_dir)
}

/// Problem identifiers accepted in configs.
pub fn list_problems() -> Vec<&'static str> {
    PROBLEM_IDS.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_spec_parsing() {
        assert_eq!(parse_cells("2:3").unwrap(), vec![(2, 3)]);
        assert_eq!(parse_cells("2:3,4:5").unwrap(), vec![(2, 3), (4, 5)]);
        assert!(parse_cells("2").is_err());
        assert!(parse_cells("a:b").is_err());
        assert!(parse_cells("2:3:4").is_err());
    }

    #[test]
    fn out_dir_resolution_prefers_override() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
problem = "burgers"
[prior]
kind = "default-matern"
rho_t = 6.0
rho_x = 3.0
[sweep]
i = [2]
j = [2]
[output]
dir = "from-config"
"#,
        )
        .unwrap();
        let with_override = Overrides {
            out_dir: Some(PathBuf::from("from-cli")),
            ..Default::default()
        };
        assert_eq!(
            resolve_out_dir(&cfg, &with_override),
            PathBuf::from("from-cli")
        );
        assert_eq!(
            resolve_out_dir(&cfg, &Overrides::default()),
            PathBuf::from("from-config")
        );
    }

    #[test]
    fn sweep_cell_subsetting() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
problem = "burgers"
[prior]
kind = "default-matern"
rho_t = 6.0
rho_x = 3.0
[sweep]
i = [2, 3]
j = [2, 3]
"#,
        )
        .unwrap();
        let all = sweep_cells(&cfg, &Overrides::default()).unwrap();
        assert_eq!(all.len(), 4);
        let some = sweep_cells(
            &cfg,
            &Overrides {
                cells: Some(vec![(3, 2)]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(some, vec![(3, 2)]);
        assert!(sweep_cells(
            &cfg,
            &Overrides {
                cells: Some(vec![(7, 7)]),
                ..Default::default()
            },
        )
        .is_err());
    }
}
