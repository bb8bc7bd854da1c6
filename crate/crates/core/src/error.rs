use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {index} out of bounds for axis `{axis}` (size {size})")]
    EncodingBounds {
        axis: String,
        index: i64,
        size: usize,
    },

    #[error("term `{term}` is not in the vocabulary of axis `{axis}`")]
    VocabularyMiss { axis: String, term: String },

    #[error("expected {expected} coordinates, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown axis `{0}`")]
    UnknownAxis(String),

    #[error("missing terminal for axis `{0}`")]
    MissingAxis(String),

    #[error("invalid grammar: {0}")]
    InvalidGrammar(String),

    #[error("invalid config [{section}.{field}]: {message}")]
    Config {
        section: &'static str,
        field: String,
        message: String,
    },

    #[error("config not found: {0}")]
    ConfigNotFound(String),

    #[error("grammar has a single state, no non-terminal start exists")]
    NoValidStart,

    #[error("embedding has zero norm")]
    DegenerateEmbedding,

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 3 for oracle
    /// failures, 4 for invariant violations, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::EncodingBounds { .. }
            | Error::VocabularyMiss { .. }
            | Error::DimensionMismatch { .. }
            | Error::UnknownAxis(_)
            | Error::MissingAxis(_)
            | Error::InvalidGrammar(_)
            | Error::Config { .. }
            | Error::ConfigNotFound(_)
            | Error::NoValidStart
            | Error::Json(_) => 2,
            Error::Oracle(_) | Error::DegenerateEmbedding => 3,
            Error::Invariant(_) => 4,
            Error::Io(_) | Error::Csv(_) => 1,
        }
    }

    pub fn config(
        section: &'static str,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Config {
            section,
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Failures reported by a feedback backend. Raw payloads are kept for diagnosis.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle timed out after {secs} s waiting for request {id}")]
    Timeout { id: u64, secs: f64 },

    #[error("malformed oracle response ({reason}): {raw}")]
    Malformed { reason: String, raw: String },

    #[error("oracle backend reported an error for request {id}: {message}")]
    Backend { id: u64, message: String },

    #[error("oracle connection closed")]
    Disconnected,

    #[error("oracle transport error: {0}")]
    Transport(#[from] std::io::Error),
}
