use std::path::PathBuf;

/// Errors produced anywhere in the library.
///
/// The variants double as the machine-readable error categories reported by
/// the command-line front end (see [`Error::category`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Short, stable category name (`malformed_input`, `invalid_argument`, ...).
    pub fn category(&self) -> &'static str {
        match self {
            Error::MalformedInput(_) => "malformed_input",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io { .. } => "io_error",
            Error::NotFound(_) => "not_found",
            Error::Stage { source, .. } => source.category(),
            Error::Csv(_) => "malformed_input",
            Error::Json(_) => "malformed_input",
        }
    }

    /// Name of the failing stage, when known.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
