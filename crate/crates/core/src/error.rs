use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite drift at step {step} (t = {time})")]
    NonFiniteDrift { step: usize, time: f64 },

    #[error("{operation} does not support the {variant} cross-section")]
    Unsupported {
        operation: &'static str,
        variant: &'static str,
    },

    #[error("the transverse projector is undefined at k = 0")]
    ZeroWavenumber,

    #[error("time index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("transforms were built on different wavenumber grids")]
    GridMismatch,

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("sample {index}: {source}")]
    Sample {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_sample(self, index: u64) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample {
                index,
                source: Box::new(e),
            },
        }
    }

    /// True for failures caused by the numbers rather than by the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFiniteDrift { .. } => true,
            Error::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
