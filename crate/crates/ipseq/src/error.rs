use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ipseq_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: not a {expected} file", path.display())]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{}: unsupported format version {version}", path.display())]
    Version { path: PathBuf, version: u32 },
    #[error("{}: expected {expected} bytes, found {actual}", path.display())]
    Length { path: PathBuf, expected: u64, actual: u64 },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Manifest { path: PathBuf, line: usize, message: String },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{task}` has no sample {sample}")]
    UnknownSample { task: String, sample: usize },
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session {0} is handling another request")]
    Busy(u64),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("http transport: {0}")]
    Transport(String),
    #[error("server replied {code}: {message}")]
    Remote { code: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &str {
        match self {
            Error::UnknownTask(_) => "unknown_task",
            Error::UnknownSample { .. } => "unknown_sample",
            Error::UnknownSession(_) => "unknown_session",
            Error::Busy(_) => "busy",
            Error::BadRequest(_) => "bad_request",
            Error::Core(ipseq_core::Error::BadState { .. }) => "bad_state",
            Error::Core(ipseq_core::Error::EditPosition { .. } | ipseq_core::Error::BadTruncation { .. }) => {
                "bad_request"
            }
            Error::Remote { code, .. } => code,
            _ => "internal",
        }
    }
}
