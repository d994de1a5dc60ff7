use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("length mismatch at byte {offset}: expected {expected} payload bytes, found {actual}")]
    LengthMismatch { offset: u64, expected: u64, actual: u64 },

    #[error("unsupported dtype {dtype} at byte {offset}")]
    UnsupportedDtype { offset: u64, dtype: u8 },

    #[error("i/o error at byte {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint entry '{name}': {source}")]
    Entry {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through entry and file wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Entry { source, .. } | Error::File { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Numerical(_) => 2,
            Error::Io { .. } | Error::Format { .. } | Error::LengthMismatch { .. } | Error::UnsupportedDtype { .. } => {
                3
            }
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
