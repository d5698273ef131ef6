use thiserror::Error;

/// Every failure the pipeline can report. Variants map onto the CLI exit
/// codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("imputation error: {0}")]
    Imputation(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("corrupt decomposition: {0}")]
    Corruption(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("checkpoint incompatible: {0}")]
    Compatibility(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 1 = usage/config, 2 = data, 3 = numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::Compatibility(_) => 1,
            Error::Numeric(_) => 3,
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Imputation(_)
            | Error::Split(_)
            | Error::Corruption(_)
            | Error::Shape(_)
            | Error::Dataset(_)
            | Error::Alignment(_)
            | Error::Checkpoint(_)
            | Error::Io { .. } => 2,
        }
    }
}
