use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] coarse_forge_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// CLI exit codes: 0 pass, 1 tolerance failure, 2 config error,
    /// 3 runtime divergence. Tolerance failures are not errors (the runner
    /// returns a result with failing rows); everything else maps here.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) => {
                if e.is_runtime_divergence() {
                    3
                } else {
                    2
                }
            }
        }
    }
}
