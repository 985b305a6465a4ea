use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported Matern smoothness index p = {0} (supported: 0..=3)")]
    UnsupportedSmoothness(u32),

    #[error("invalid kernel parameter {name}: {value} (must be positive)")]
    InvalidKernelParameter { name: &'static str, value: f64 },

    #[error(
        "insufficient smoothness: derivative order {order} exceeds the \
         differentiability budget {budget} of the {kernel} factor"
    )]
    InsufficientSmoothness {
        kernel: &'static str,
        order: u32,
        budget: u32,
    },

    #[error("quadrature functional needs at least 2 nodes, got {0}")]
    TooFewQuadratureNodes(usize),

    #[error("quadrature nodes must be strictly increasing")]
    NonIncreasingQuadratureNodes,

    #[error("ill-conditioned assimilation at {label}: factorisation failed after max-jitter escalation")]
    IllConditioned { label: String },

    #[error("amplitude MLE requires at least one accumulated differential batch")]
    EmptyMleAccumulator,

    #[error("amplitude MLE accumulated {found} differential batches, expected {expected}")]
    MleStepMismatch { expected: usize, found: usize },

    #[error("prior mean is a black box; only point-evaluation functionals can be applied to it")]
    PriorMeanNotDifferentiable,

    #[error("strategy/problem mismatch: {0}")]
    StrategyMismatch(String),

    #[error("non-finite {which} evaluation at (t, x) = ({t}, {x})")]
    NonFiniteEvaluation { which: &'static str, t: f64, x: f64 },

    #[error("grid is not uniform in time: spacing varies by more than 1e-12 relative")]
    NonUniformGrid,

    #[error("grid must have at least 2 nodes per axis (got n = {n}, m = {m})")]
    GridTooSmall { n: usize, m: usize },

    #[error("field shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("convergence slope fit needs at least 3 rows per group, got {0}")]
    InsufficientRows(usize),

    #[error("singular tridiagonal system at time step {step}")]
    SingularTridiagonal { step: usize },

    #[error("crank_nicolson requires a Burgers-family operator (dt - alpha*dxx), got {0}")]
    UnsupportedOperator(String),

    #[error("reference not converged: estimated truth error {estimated} exceeds {allowed}")]
    ReferenceNotConverged { estimated: f64, allowed: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown problem id {0:?} (known: burgers, porous, burgers_forced)")]
    UnknownProblem(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
