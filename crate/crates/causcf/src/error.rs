use std::path::PathBuf;

/// Failures of the file-level pipeline, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] causcf_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Runtime(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use causcf_core::Error as C;
        match self {
            Error::Usage(_) => EXIT_USAGE,
            Error::Validation(_) | Error::Format { .. } => EXIT_VALIDATION,
            Error::Core(
                C::Parse { .. }
                | C::Validation(_)
                | C::InvalidConfig(_)
                | C::FeatureLength { .. }
                | C::NonBinaryLabel { .. }
                | C::MissingPositions
                | C::EmptySplit(_)
                | C::TreatmentArms(_)
                | C::UnknownAttribute(_)
                | C::IndexOutOfRange { .. },
            ) => EXIT_VALIDATION,
            Error::Core(_) | Error::Io { .. } | Error::Runtime(_) => EXIT_RUNTIME,
        }
    }

    /// Stable short tag for structured error output.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_USAGE => "usage",
            EXIT_VALIDATION => "validation",
            _ => "runtime",
        }
    }
}
