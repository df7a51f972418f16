use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty logit vector")]
    EmptyLogits,

    #[error("temperature must be positive and finite, got {0}")]
    InvalidBeta(f64),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid structural prior: {0}")]
    InvalidPrior(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("CCCP requires quadratic node potentials")]
    NonQuadratic,

    #[error("CCCP requires every candidate edge to have at most one latent endpoint (edge variable {0})")]
    LatentLatentEdge(usize),

    #[error("free energy diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("joint table would hold {0} configurations (cap 1000000)")]
    TooManyConfigs(u128),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Numeric failures (divergence, non-finite state) as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFinite(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
