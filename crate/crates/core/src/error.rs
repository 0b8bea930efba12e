use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("admissibility violated: {0}")]
    Admissibility(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("frequency grids do not match: {0}")]
    GridMismatch(String),

    #[error("darknoise is not below the trace at {} frequencies: {frequencies:?}", frequencies.len())]
    Darknoise { frequencies: Vec<f64> },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attaches a source line (1-based) to the error.
    pub fn at_line(self, line: usize) -> Error {
        match self {
            Error::AtLine { .. } => self,
            other => Error::AtLine {
                line,
                source: Box::new(other),
            },
        }
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
