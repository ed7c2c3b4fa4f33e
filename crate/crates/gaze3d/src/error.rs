use std::path::PathBuf;

/// Failures of file handling and pipeline commands.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed text; `line` and `column` are 1-based, 0 when unknown.
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}: checksum mismatch (stored {stored:08x}, computed {computed:08x})", path.display())]
    Checksum { path: PathBuf, stored: u32, computed: u32 },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: gaze3d_core::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Process exit status: 1 for usage errors, 2 for everything data related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn core(context: impl Into<String>) -> impl FnOnce(gaze3d_core::Error) -> Self {
        let context = context.into();
        move |source| Error::Core { context, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
