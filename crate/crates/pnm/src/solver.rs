//! The probabilistic time-stepping solver: condition on initial data, then
//! per time level assimilate the linearised differential constraints and the
//! boundary data (plus an optional conservation row), estimate the kernel
//! amplitude in closed form, and read the posterior mean/std fields off the
//! grid.

use crate::error::{Error, Result};
use crate::gp::{GpState, JitterEvent, JitterPolicy, MleNormalisation, PriorMean};
use crate::kernels::{Point, TensorKernel, UnivariateKernel};
use crate::operators::{DiffTerm, LinearFunctional};
use crate::problems::{EvalCounts, PDEProblem};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Uniform space-time grid. Time nodes span `[t_0, t_{n-1}]` with fixed
/// spacing; the first and last space nodes lie on the domain boundary.
#[derive(Debug, Clone)]
pub struct Grid {
    pub t_nodes: Vec<f64>,
    pub x_nodes: Vec<f64>,
    /// Indices of `x_nodes` lying on the boundary of the spatial domain.
    pub boundary: Vec<usize>,
}

impl Grid {
    /// `n` uniform time nodes over `t_span` and `m` uniform space nodes over
    /// `x_span`, endpoints included.
    pub fn uniform(t_span: (f64, f64), x_span: (f64, f64), n: usize, m: usize) -> Result<Grid> {
        if n < 2 || m < 2 {
            return Err(Error::GridTooSmall { n, m });
        }
        let t_nodes = linspace(t_span.0, t_span.1, n);
        let x_nodes = linspace(x_span.0, x_span.1, m);
        let grid = Grid {
            t_nodes,
            x_nodes,
            boundary: vec![0, m - 1],
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn for_problem(problem: &PDEProblem, n: usize, m: usize) -> Result<Grid> {
        Grid::uniform(problem.t_span, problem.x_span, n, m)
    }

    pub fn n(&self) -> usize {
        self.t_nodes.len()
    }

    pub fn m(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn delta_t(&self) -> f64 {
        self.t_nodes[1] - self.t_nodes[0]
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.m()).filter(|j| !self.boundary.contains(j)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let m = self.m();
        if n < 2 || m < 2 {
            return Err(Error::GridTooSmall { n, m });
        }
        let delta = self.delta_t();
        for w in self.t_nodes.windows(2) {
            if ((w[1] - w[0]) - delta).abs() > 1e-12 * delta.abs().max(1.0) {
                return Err(Error::NonUniformGrid);
            }
        }
        Ok(())
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Which linearisation a problem wants by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Burgers advection: the coefficient of `d/dx` lags the posterior mean.
    LagMean,
    /// Porous medium, both nonlinear factors frozen at the mean value.
    PorousQ1,
    /// Porous medium, the second-derivative factor frozen instead.
    PorousQ2,
    Custom,
}

/// Inputs handed to a custom linearisation builder at each step.
pub struct LineariseInputs<'a> {
    pub mean_at_nodes: &'a [f64],
    pub dxx_mean_at_nodes: Option<&'a [f64]>,
    pub t_i: f64,
}

type CustomBuilder = Arc<dyn Fn(&LineariseInputs) -> Vec<Vec<DiffTerm>> + Send + Sync>;

/// Adaptive linearisation of the nonlinear operator part. Produced operators
/// use only information available before the step's data are assimilated.
#[derive(Clone)]
pub enum LinearisationStrategy {
    LagMean,
    PorousQ1,
    PorousQ2,
    Custom(CustomBuilder),
}

impl std::fmt::Debug for LinearisationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinearisationStrategy::LagMean => write!(f, "LagMean"),
            LinearisationStrategy::PorousQ1 => write!(f, "PorousQ1"),
            LinearisationStrategy::PorousQ2 => write!(f, "PorousQ2"),
            LinearisationStrategy::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl LinearisationStrategy {
    pub fn from_kind(kind: StrategyKind) -> Result<Self> {
        match kind {
            StrategyKind::LagMean => Ok(LinearisationStrategy::LagMean),
            StrategyKind::PorousQ1 => Ok(LinearisationStrategy::PorousQ1),
            StrategyKind::PorousQ2 => Ok(LinearisationStrategy::PorousQ2),
            StrategyKind::Custom => Err(Error::StrategyMismatch(
                "custom strategy needs an explicit builder".into(),
            )),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            LinearisationStrategy::LagMean => StrategyKind::LagMean,
            LinearisationStrategy::PorousQ1 => StrategyKind::PorousQ1,
            LinearisationStrategy::PorousQ2 => StrategyKind::PorousQ2,
            LinearisationStrategy::Custom(_) => StrategyKind::Custom,
        }
    }

    pub fn needs_dxx(&self) -> bool {
        matches!(self, LinearisationStrategy::PorousQ2)
    }

    /// Worst-case derivative orders the produced terms can contain, used for
    /// the prior smoothness precheck.
    pub fn max_orders(&self) -> (u32, u32) {
        match self {
            LinearisationStrategy::LagMean => (0, 1),
            LinearisationStrategy::PorousQ1 => (0, 2),
            LinearisationStrategy::PorousQ2 => (0, 1),
            // a custom builder is unconstrained a priori; checked per step
            LinearisationStrategy::Custom(_) => (0, 0),
        }
    }
}

/// Builds the per-node linearised operator terms `Q_i` for one time step.
/// Zero-coefficient terms are dropped, so a vanishing lag mean yields the
/// same operator lists as `Q = 0`.
pub fn linearise_step(
    strategy: &LinearisationStrategy,
    mean_at_nodes: &[f64],
    dxx_mean_at_nodes: Option<&[f64]>,
    t_i: f64,
) -> Result<Vec<Vec<DiffTerm>>> {
    let m = mean_at_nodes.len();
    if let Some(d) = dxx_mean_at_nodes {
        if d.len() != m {
            return Err(Error::StrategyMismatch(format!(
                "dxx mean list has {} entries, expected {m}",
                d.len()
            )));
        }
    }
    let push_nonzero = |terms: &mut Vec<DiffTerm>, t: DiffTerm| {
        if t.coeff != 0.0 {
            terms.push(t);
        }
    };
    match strategy {
        LinearisationStrategy::LagMean => Ok(mean_at_nodes
            .iter()
            .map(|&mu| {
                let mut terms = Vec::new();
                push_nonzero(&mut terms, DiffTerm::new(mu, 0, 1));
                terms
            })
            .collect()),
        LinearisationStrategy::PorousQ1 => Ok(mean_at_nodes
            .iter()
            .map(|&mu| {
                let mut terms = Vec::new();
                push_nonzero(&mut terms, DiffTerm::new(mu, 0, 1));
                push_nonzero(&mut terms, DiffTerm::new(mu, 0, 2));
                terms
            })
            .collect()),
        LinearisationStrategy::PorousQ2 => {
            let dxx = dxx_mean_at_nodes.ok_or_else(|| {
                Error::StrategyMismatch(
                    "PorousQ2 requires second-derivative means at the nodes".into(),
                )
            })?;
            Ok(mean_at_nodes
                .iter()
                .zip(dxx)
                .map(|(&mu, &dxx_mu)| {
                    let mut terms = Vec::new();
                    push_nonzero(&mut terms, DiffTerm::new(mu, 0, 1));
                    push_nonzero(&mut terms, DiffTerm::value(dxx_mu));
                    terms
                })
                .collect())
        }
        LinearisationStrategy::Custom(builder) => {
            let out = builder(&LineariseInputs {
                mean_at_nodes,
                dxx_mean_at_nodes,
                t_i,
            });
            if out.len() != m {
                return Err(Error::StrategyMismatch(format!(
                    "custom builder returned {} node lists, expected {m}",
                    out.len()
                )));
            }
            Ok(out)
        }
    }
}

/// Default tensor prior: Matern factors with `p = beta` per axis at unit
/// amplitude (`nu_i = beta_i + 1/2`), zero prior mean.
pub fn default_prior(beta: (u32, u32), rho_t: f64, rho_x: f64) -> Result<TensorKernel> {
    Ok(TensorKernel::new(
        UnivariateKernel::matern(beta.0, 1.0, rho_t)?,
        UnivariateKernel::matern(beta.1, 1.0, rho_x)?,
    ))
}

/// Solver configuration beyond the prior and strategy.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub conserve_mass: bool,
    pub mle_normalisation: MleNormalisation,
    pub jitter: JitterPolicy,
    /// Z-score denominators below `z_floor * sigma_hat * max(std)` are clipped.
    pub z_floor: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            conserve_mass: false,
            mle_normalisation: MleNormalisation::PerStep,
            jitter: JitterPolicy::default(),
            z_floor: 1e-6,
        }
    }
}

/// Posterior fields and bookkeeping from one solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub grid: Grid,
    /// Posterior mean on the grid (time-major: `[i][j]` is `(t_i, x_j)`).
    pub mean_field: Array2<f64>,
    /// Posterior standard deviation scaled by the amplitude estimate.
    pub std_field: Array2<f64>,
    /// Posterior standard deviation at unit amplitude.
    pub unit_std_field: Array2<f64>,
    pub sigma_hat: f64,
    pub cost: EvalCounts,
    pub jitter_events: Vec<JitterEvent>,
    /// Accuracy/calibration metrics, filled by the metrics layer when a
    /// ground truth is available.
    pub e_inf: Option<f64>,
    pub z_score: Option<f64>,
}

impl SolveReport {
    pub fn truth_field(&self, truth: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        let (n, m) = (self.grid.n(), self.grid.m());
        Array2::from_shape_fn((n, m), |(i, j)| {
            truth(self.grid.t_nodes[i], self.grid.x_nodes[j])
        })
    }
}

/// Runs the sequential conditioning algorithm and returns the posterior
/// fields with the fitted amplitude. Also exposes the final GP state for
/// oracle tests via [`solve_pnm_with_state`].
pub fn solve_pnm(
    problem: &PDEProblem,
    grid: &Grid,
    prior: &TensorKernel,
    strategy: &LinearisationStrategy,
    options: &SolveOptions,
) -> Result<SolveReport> {
    Ok(solve_pnm_with_state(problem, grid, prior, strategy, options)?.0)
}

pub fn solve_pnm_with_state(
    problem: &PDEProblem,
    grid: &Grid,
    prior: &TensorKernel,
    strategy: &LinearisationStrategy,
    options: &SolveOptions,
) -> Result<(SolveReport, GpState)> {
    grid.validate()?;
    let n = grid.n();
    let m = grid.m();

    // smoothness budget must cover D_i = P + Q_i paired with itself
    let mut dt_max = 0;
    let mut dx_max = 0;
    for t in &problem.p_terms {
        dt_max = dt_max.max(t.orders.0);
        dx_max = dx_max.max(t.orders.1);
    }
    let (qt, qx) = strategy.max_orders();
    dt_max = dt_max.max(qt);
    dx_max = dx_max.max(qx);
    prior.validate_orders(2 * dt_max, 2 * dx_max)?;

    let mut gp = GpState::with_jitter(PriorMean::Zero, prior.clone(), options.jitter);

    // (a) initial data at interior nodes
    let interior = grid.interior_indices();
    let t0 = grid.t_nodes[0];
    let init_batch: Vec<(LinearFunctional, f64)> = interior
        .iter()
        .map(|&j| {
            Ok((
                LinearFunctional::point_eval(Point::new(t0, grid.x_nodes[j])),
                problem.g(grid.x_nodes[j])?,
            ))
        })
        .collect::<Result<_>>()?;
    gp.assimilate(&init_batch, false, "init")?;

    // conservation target: quadrature mass of the initial data
    let quad_weights = LinearFunctional::trapezoid_weights(&grid.x_nodes)?;
    let mass0 = if options.conserve_mass {
        let mut mass = 0.0;
        for j in 0..m {
            let u0 = if grid.boundary.contains(&j) {
                problem.h(t0, grid.x_nodes[j])?
            } else {
                problem.g(grid.x_nodes[j])?
            };
            mass += quad_weights[j] * u0;
        }
        Some(mass)
    } else {
        None
    };

    // (b) time stepping
    for i in 0..n {
        let t_i = grid.t_nodes[i];
        // linearise around the most recent posterior mean at (t_i, x)
        let mean_fs: Vec<LinearFunctional> = grid
            .x_nodes
            .iter()
            .map(|&x| LinearFunctional::point_eval(Point::new(t_i, x)))
            .collect();
        let means = gp.predict_means(&mean_fs)?;
        let dxx = if strategy.needs_dxx() {
            let fs: Vec<LinearFunctional> = grid
                .x_nodes
                .iter()
                .map(|&x| {
                    LinearFunctional::operator_at(
                        vec![DiffTerm::new(1.0, 0, 2)],
                        Point::new(t_i, x),
                    )
                })
                .collect();
            Some(gp.predict_means(&fs)?)
        } else {
            None
        };
        let q_lists = linearise_step(strategy, &means, dxx.as_deref(), t_i)?;

        // differential data first: its Mahalanobis norm conditions on data
        // through step i-1 only, which is what the amplitude estimate wants
        let diff_batch: Vec<(LinearFunctional, f64)> = (0..m)
            .map(|j| {
                let mut terms = problem.p_terms.clone();
                terms.extend_from_slice(&q_lists[j]);
                let z = Point::new(t_i, grid.x_nodes[j]);
                Ok((
                    LinearFunctional::operator_at(terms, z),
                    problem.f(t_i, grid.x_nodes[j])?,
                ))
            })
            .collect::<Result<_>>()?;
        gp.assimilate(&diff_batch, true, &format!("step {i} differential"))?;

        // boundary data, plus the conservation row from the second level on
        let mut constraint_batch: Vec<(LinearFunctional, f64)> = grid
            .boundary
            .iter()
            .map(|&j| {
                Ok((
                    LinearFunctional::point_eval(Point::new(t_i, grid.x_nodes[j])),
                    problem.h(t_i, grid.x_nodes[j])?,
                ))
            })
            .collect::<Result<_>>()?;
        if let Some(mass) = mass0 {
            if i >= 1 {
                constraint_batch.push((
                    LinearFunctional::quadrature(&grid.x_nodes, t_i)?,
                    mass,
                ));
            }
        }
        gp.assimilate(&constraint_batch, false, &format!("step {i} constraints"))?;
    }

    // (c) amplitude
    let sigma_hat = gp.amplitude_mle(n, options.mle_normalisation)?;

    // (d) posterior fields on the grid
    let field_fs: Vec<LinearFunctional> = grid
        .t_nodes
        .iter()
        .flat_map(|&t| {
            grid.x_nodes
                .iter()
                .map(move |&x| LinearFunctional::point_eval(Point::new(t, x)))
        })
        .collect();
    let (means, vars) = gp.predict_mean_and_var(&field_fs)?;
    let mean_field = Array2::from_shape_vec((n, m), means).expect("grid shape");
    let unit_std_field =
        Array2::from_shape_vec((n, m), vars.iter().map(|v| v.sqrt()).collect())
            .expect("grid shape");
    let std_field = unit_std_field.mapv(|s| sigma_hat * s);

    let report = SolveReport {
        grid: grid.clone(),
        mean_field,
        std_field,
        unit_std_field,
        sigma_hat,
        cost: problem.eval_counts(),
        jitter_events: gp.jitter_events().to_vec(),
        e_inf: None,
        z_score: None,
    };
    Ok((report, gp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{burgers_homogeneous, porous_medium};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn zero_heat_problem() -> PDEProblem {
        PDEProblem::custom(
            (0.0, 1.0),
            (0.0, 1.0),
            vec![DiffTerm::new(1.0, 1, 0), DiffTerm::new(-0.1, 0, 2)],
            StrategyKind::LagMean,
            Arc::new(|_, _| 0.0),
            Arc::new(|_| 0.0),
            Arc::new(|_, _| 0.0),
            Some(Arc::new(|_, _| 0.0)),
        )
    }

    #[test]
    fn grid_construction_and_validation() {
        let g = Grid::uniform((0.0, 1.0), (-1.0, 1.0), 5, 9).unwrap();
        assert_eq!(g.n(), 5);
        assert_eq!(g.m(), 9);
        assert_eq!(g.boundary, vec![0, 8]);
        assert_eq!(g.interior_indices().len(), 7);
        assert_abs_diff_eq!(g.delta_t(), 0.25);
        assert_eq!(g.x_nodes[0], -1.0);
        assert_eq!(g.x_nodes[8], 1.0);
        assert!(Grid::uniform((0.0, 1.0), (0.0, 1.0), 1, 5).is_err());

        let bad = Grid {
            t_nodes: vec![0.0, 0.5, 0.7],
            x_nodes: vec![0.0, 1.0],
            boundary: vec![0, 1],
        };
        assert!(matches!(bad.validate(), Err(Error::NonUniformGrid)));
    }

    #[test]
    fn lag_mean_linearisation() {
        let lists =
            linearise_step(&LinearisationStrategy::LagMean, &[0.0, 2.0], None, 0.0).unwrap();
        assert!(lists[0].is_empty());
        assert_eq!(lists[1], vec![DiffTerm::new(2.0, 0, 1)]);
    }

    #[test]
    fn lag_mean_zero_equals_q_zero_bitwise() {
        let zero_q = LinearisationStrategy::Custom(Arc::new(|inp: &LineariseInputs| {
            vec![Vec::new(); inp.mean_at_nodes.len()]
        }));
        let means = vec![0.0; 7];
        let a = linearise_step(&LinearisationStrategy::LagMean, &means, None, 0.3).unwrap();
        let b = linearise_step(&zero_q, &means, None, 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn porous_linearisations() {
        let q1 =
            linearise_step(&LinearisationStrategy::PorousQ1, &[2.0], None, 0.0).unwrap();
        assert_eq!(
            q1[0],
            vec![DiffTerm::new(2.0, 0, 1), DiffTerm::new(2.0, 0, 2)]
        );
        let q2 = linearise_step(
            &LinearisationStrategy::PorousQ2,
            &[3.0],
            Some(&[-0.5]),
            0.0,
        )
        .unwrap();
        assert_eq!(
            q2[0],
            vec![DiffTerm::new(3.0, 0, 1), DiffTerm::value(-0.5)]
        );
        // Q2 without dxx means is a strategy/problem mismatch
        assert!(matches!(
            linearise_step(&LinearisationStrategy::PorousQ2, &[3.0], None, 0.0),
            Err(Error::StrategyMismatch(_))
        ));
    }

    #[test]
    fn default_prior_factors() {
        let k = default_prior((1, 2), 6.0, 3.0).unwrap();
        match k.time_factor() {
            UnivariateKernel::Matern(m) => {
                assert_eq!(m.p(), 1);
                assert_eq!(m.rho(), 6.0);
                assert_eq!(m.sigma(), 1.0);
            }
            _ => panic!("expected Matern time factor"),
        }
        match k.space_factor() {
            UnivariateKernel::Matern(m) => {
                assert_eq!(m.p(), 2);
                assert_eq!(m.rho(), 3.0);
            }
            _ => panic!("expected Matern space factor"),
        }
        assert!(default_prior((4, 2), 1.0, 1.0).is_err());
    }

    #[test]
    fn zero_problem_gives_zero_field_and_amplitude() {
        let p = zero_heat_problem();
        let grid = Grid::for_problem(&p, 5, 7).unwrap();
        let prior = default_prior((1, 2), 1.0, 1.0).unwrap();
        let report = solve_pnm(
            &p,
            &grid,
            &prior,
            &LinearisationStrategy::LagMean,
            &SolveOptions::default(),
        )
        .unwrap();
        assert_eq!(report.sigma_hat, 0.0);
        for v in report.mean_field.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-10);
        }
        for s in report.std_field.iter() {
            assert_eq!(*s, 0.0); // sigma_hat = 0 scales the std field to zero
        }
    }

    #[test]
    fn budget_accounting_exact() {
        let p = burgers_homogeneous();
        let grid = Grid::for_problem(&p, 5, 5).unwrap();
        let prior = default_prior((1, 2), 6.0, 3.0).unwrap();
        solve_pnm(
            &p,
            &grid,
            &prior,
            &LinearisationStrategy::LagMean,
            &SolveOptions::default(),
        )
        .unwrap();
        let c = p.eval_counts();
        assert_eq!(c.f, 25);
        assert_eq!(c.g, 3);
        assert_eq!(c.h, 10);
    }

    #[test]
    fn conservation_pins_mass_at_every_level() {
        let p = porous_medium();
        let grid = Grid::for_problem(&p, 5, 9).unwrap();
        let prior = default_prior((1, 2), 1.0, 2.0).unwrap();
        let mut opts = SolveOptions::default();
        opts.conserve_mass = true;
        let report = solve_pnm(
            &p,
            &grid,
            &prior,
            &LinearisationStrategy::PorousQ1,
            &opts,
        )
        .unwrap();
        let w = LinearFunctional::trapezoid_weights(&grid.x_nodes).unwrap();
        let mass0: f64 = (0..grid.m())
            .map(|j| w[j] * report.mean_field[(0, j)])
            .sum();
        for i in 0..grid.n() {
            let mass: f64 = (0..grid.m())
                .map(|j| w[j] * report.mean_field[(i, j)])
                .sum();
            assert_abs_diff_eq!(mass, mass0, epsilon = 1e-8);
        }
    }

    #[test]
    fn smoothness_precheck_rejects_thin_prior() {
        let p = burgers_homogeneous();
        let grid = Grid::for_problem(&p, 3, 5).unwrap();
        // beta_x = 1 cannot support dxx paired with itself
        let prior = default_prior((1, 1), 6.0, 3.0).unwrap();
        assert!(matches!(
            solve_pnm(
                &p,
                &grid,
                &prior,
                &LinearisationStrategy::LagMean,
                &SolveOptions::default(),
            ),
            Err(Error::InsufficientSmoothness { .. })
        ));
    }

    #[test]
    fn q2_on_porous_runs() {
        let p = porous_medium();
        let grid = Grid::for_problem(&p, 3, 7).unwrap();
        let prior = default_prior((1, 2), 1.0, 2.0).unwrap();
        let report = solve_pnm(
            &p,
            &grid,
            &prior,
            &LinearisationStrategy::PorousQ2,
            &SolveOptions::default(),
        )
        .unwrap();
        assert!(report.sigma_hat.is_finite());
        assert!(report.mean_field.iter().all(|v| v.is_finite()));
    }
}
