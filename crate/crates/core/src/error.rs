use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("initial point outside prior support: {0}")]
    OutsideSupport(String),

    #[error("slice sampler failed to bracket the slice after {doublings} doublings (x = {x})")]
    SliceBracket { x: f64, doublings: usize },

    #[error("non-finite log density or gradient: {0}")]
    NonFinite(String),

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration { iteration, source: Box::new(e) },
        }
    }
}
