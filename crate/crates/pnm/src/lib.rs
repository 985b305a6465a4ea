//! Probabilistic numerical solver for nonlinear initial-value PDEs.
//!
//! The unknown solution is modelled as a Gaussian process with a
//! tensor-product covariance over time and space. The solver conditions the
//! prior on a finite set of exact linear constraints: the initial data, the
//! Dirichlet boundary data, and per time level the differential data under
//! an adaptively linearised operator, optionally together with a discretised
//! conservation law. The output is a full posterior field whose spread is
//! calibrated by a closed-form amplitude estimate, so numerical uncertainty
//! is quantified instead of hidden.
//!
//! Modules follow the pipeline: [`kernels`] evaluates covariance derivatives
//! in closed form, [`operators`] lifts them to linear functionals, [`gp`]
//! assimilates functional observations sequentially, [`solver`] runs the
//! time-stepping algorithm on [`problems`], [`baselines`] provides classical
//! finite-difference comparators, [`metrics`] scores accuracy (`E_inf`) and
//! calibration (`Z`), and [`cli`] drives configuration-based experiment
//! sweeps. See the crate examples for runnable end-to-end demonstrations.

pub mod baselines;
pub mod cli;
mod error;
pub mod gp;
pub mod kernels;
mod linalg;
pub mod metrics;
pub mod operators;
pub mod problems;
pub mod solver;

pub use error::{Error, Result};
pub use kernels::{
    matern_coeffs, tensor_cross_cov, MaternHalfInteger, Point, RationalQuadratic, TensorKernel,
    UnivariateKernel,
};
pub use operators::{functional_cross_cov, Atom, DiffTerm, LinearFunctional};

pub use gp::{GpState, JitterEvent, JitterPolicy, MleNormalisation, PriorMean};
pub use problems::{
    burgers_forced, burgers_homogeneous, porous_medium, problem_by_id, EvalCounts, PDEProblem,
};
pub use solver::{
    default_prior, linearise_step, solve_pnm, solve_pnm_with_state, Grid, LinearisationStrategy,
    SolveOptions, SolveReport, StrategyKind,
};
