use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing slot `{0}` in question template")]
    MissingSlot(String),
    #[error("LLM answer contained no list items")]
    EmptyAnswer,
    #[error("LLM answer could not be matched to the question: {0}")]
    UnparseableAnswer(String),
    #[error("LLM client error: {0}")]
    Client(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {context} at {location}: {message}")]
    Format {
        context: String,
        location: String,
        message: String,
    },
    #[error("non-finite value in {0}")]
    NonFiniteValue(String),
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("sequence of length {len} exceeds context limit {limit}")]
    SequenceTooLong { len: usize, limit: usize },
    #[error("token composition sums to {got}, expected {expected}")]
    CompositionMismatch { got: usize, expected: usize },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("degenerate (near-zero norm) feature: {0}")]
    DegenerateFeature(String),
    #[error("no positive labels")]
    EmptyPositives,
    #[error("non-finite loss at record {record}: {detail}")]
    NonFiniteLoss { record: usize, detail: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("class has no positive items")]
    NoPositives,
    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        context: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            context: context.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 0 ok, 1 check failure, 2 config/usage, 3 client, 4 numeric, 5 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Client(_) | Error::EmptyAnswer | Error::UnparseableAnswer(_) => 3,
            Error::NonFiniteLoss { .. } | Error::NonFiniteValue(_) => 4,
            Error::Io { .. } | Error::Format { .. } => 5,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
