use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] enl_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit code: 2 for invalid input, 3 for a diverging run.
    pub fn exit_code(&self) -> i32 {
        use enl_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Manifest(_) => 2,
            CliError::Core(E::Divergence { .. }) => 3,
            CliError::Core(E::Io(_)) | CliError::Io(_) => 1,
            CliError::Core(_) => 2,
        }
    }
}
