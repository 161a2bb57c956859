use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss node must be 1x1, got {0}x{1}")]
    NotScalar(usize, usize),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("training diverged at epoch {0}")]
    Diverged(usize),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
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

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}

/// Tags an error with the pipeline stage it came from.
pub trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        })
    }
}
