use spatial_transfer::Error as CoreError;
use thiserror::Error;

/// Process exit codes. `2` is left to argument-parsing errors.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const IO: i32 = 1;
    pub const SCHEMA: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const NUMERICAL: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Input table or bundle that violates the documented schema.
    #[error("schema error: {0}")]
    Schema(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn schema(msg: impl Into<String>) -> Self {
        Self::Schema(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Schema(_) => exit::SCHEMA,
            Self::Config(_) => exit::CONFIG,
            Self::Numerical(_) => exit::NUMERICAL,
            Self::Io { .. } => exit::IO,
        }
    }
}

/// Classifies by the innermost core error, keeping the area tag in the
/// message.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e.root() {
            CoreError::Input(_) => Self::Schema(msg),
            CoreError::Parameter(_) | CoreError::Config(_) => Self::Config(msg),
            CoreError::Numerical(_) | CoreError::DegenerateGeometry(_) => Self::Numerical(msg),
            CoreError::Area { .. } => unreachable!("root strips area tags"),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
