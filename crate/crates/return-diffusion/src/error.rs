//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("empty truncation: ball of radius {radius} does not reach past the inner boundary at {inner}")]
    EmptyTruncation { radius: f64, inner: f64 },
    #[error("grid spacing must be positive and finite, got {0}")]
    NonPositiveSpacing(f64),
    #[error("truncation index must be at least 1, got {0}")]
    TruncationIndex(usize),
    #[error("truncation produced no interior nodes (h = {h}, n = {n})")]
    NoInteriorNodes { h: f64, n: usize },
    #[error("truncation produced no boundary nodes on the inner boundary (h = {h}, n = {n})")]
    NoBoundaryNodes { h: f64, n: usize },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
}

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("polynomial operator requires alpha > 0 and beta > alpha - 1, got alpha = {alpha}, beta = {beta}")]
    ParameterDomain { alpha: f64, beta: f64 },
    #[error("inverse-power operator requires alpha > 0, got {0}")]
    NonPositiveAlpha(f64),
    #[error("unknown operator name `{0}`")]
    UnknownName(String),
    #[error("coefficient expression error: {0}")]
    Expr(#[from] ExprError),
}

#[derive(Debug, Error)]
#[error("parse error at byte {position}: {message}")]
pub struct ExprError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("atom weights must be nonnegative and sum to 1, got sum {0}")]
    MassNotOne(f64),
    #[error("atom at ({x}, {y}) is not strictly inside the domain")]
    AtomOutsideDomain { x: f64, y: f64 },
    #[error("density support is not contained in the domain: {0}")]
    SupportOutsideDomain(String),
    #[error("density parameters invalid: {0}")]
    InvalidDensity(String),
    #[error("measure and grid do not match (fingerprints {0:#x} vs {1:#x})")]
    GridMismatch(u64, u64),
    #[error("grids are not consecutive truncations of the same domain/spacing")]
    NotConsecutive,
    #[error("quadrature diverges: tail contribution {tail:.3e} after {doublings} range doublings")]
    DivergentQuadrature { tail: f64, doublings: usize },
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("ellipticity check failed before assembly: {0}")]
    Ellipticity(String),
    #[error("stencil fell outside the node set at node {0}; grid construction bug")]
    StencilOutsideGrid(usize),
    #[error("mixed-derivative stencil needs the four diagonal neighbors of node {0}, which are missing")]
    MixedStencilUnavailable(usize),
    #[error("linear system is singular or ill-conditioned (relative residual {residual:.3e}, condition estimate {cond:.3e})")]
    IllConditioned { residual: f64, cond: f64 },
    #[error("solver postcondition violated: {0}")]
    Postcondition(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("exhaustion did not converge by n = {max_n}; sup increments on the window: {history:?}")]
    ExhaustionStalled { max_n: usize, history: Vec<f64> },
    #[error("time {t} is not an integer multiple of the step size {tau}")]
    StepMismatch { t: f64, tau: f64 },
    #[error("measure/grid mismatch during assembly: {0}")]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Error)]
pub enum McError {
    #[error("diffusion matrix 2a has a negative eigenvalue {eig:.3e} at ({x}, {y})")]
    NotPositiveSemidefinite { eig: f64, x: f64, y: f64 },
    #[error("need at least 2 particles for a standard error, got {0}")]
    TooFewParticles(usize),
    #[error("time step dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("start point ({x}, {y}) is not inside the domain")]
    StartOutsideDomain { x: f64, y: f64 },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{key}` is invalid: {reason}")]
    Invalid { key: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Top-level error for the binary and high-level entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code contract: 2 config, 3 numerical, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Solve(_) | Error::Mc(_) => 3,
            Error::Grid(_) | Error::Operator(_) | Error::Measure(_) => 2,
            Error::Io(_) => 2,
        }
    }
}
