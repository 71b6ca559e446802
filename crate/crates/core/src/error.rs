use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solver failure{}: {message}", pivot.map(|p| format!(" at pivot {p}")).unwrap_or_default())]
    SolverFailure {
        pivot: Option<usize>,
        message: String,
    },

    #[error("Newton iteration failed on slab {slab} after {iterations} iterations (residual {residual:.3e})")]
    StepFailure {
        slab: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("{0}")]
    Usage(String),

    /// Help or version text requested on the command line.
    #[error("{0}")]
    Help(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
