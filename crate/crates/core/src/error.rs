use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("grid would have {nodes} nodes, above the limit of {limit}")]
    ResourceGuard { nodes: u64, limit: u64 },
    #[error("grid mismatch: {0}")]
    Grid(String),
    #[error("grid is not symmetric along the {axis} axis")]
    NotSymmetric { axis: char },
    #[error("support violation: {0}")]
    Support(String),
    #[error("potential violates its a-priori bound: H^s norm {norm} exceeds {bound}")]
    PriorBound { norm: f64, bound: f64 },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("solver did not converge: {reason} (last relative residual {last:e})")]
    Solver { reason: String, last: f64, history: Vec<f64> },
    #[error("frequency k = {k} is not admissible: min singular value {min_singular:e} <= threshold {threshold:e}")]
    Inadmissible { k: f64, min_singular: f64, threshold: f64 },
    #[error("eigenvalue iteration did not converge after {iterations} iterations (last estimate {last:e})")]
    NonConvergence { iterations: usize, last: f64 },
    #[error("singular or indefinite Gram matrix: {0}")]
    SingularGram(String),
    #[error("column {column}: {source}")]
    Column { column: usize, source: Box<Error> },
    #[error("remainder iteration does not contract; increase the large parameter (norm grew over {steps} steps)")]
    NoContraction { steps: usize },
    #[error("{projected} of {total} Fourier modes have near-singular symbol")]
    SymbolProjection { projected: usize, total: usize },
    #[error("exponential scale overflow in pairing (log magnitude {0})")]
    Overflow(f64),
    #[error("ill-conditioned continuation fit (condition {cond:e}); increase the Tikhonov weight")]
    IllConditioned { cond: f64 },
    #[error("hypothesis violated: delta * star_norm = {0} is not below 1")]
    Hypothesis(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
