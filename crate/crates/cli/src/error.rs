use latent_hmc::diagnostics::DiagnosticsError;
use latent_hmc::gibbs::GibbsError;
use latent_hmc::io::IoError;
use latent_hmc::models::ModelError;
use latent_hmc::samplers::SamplerError;
use latent_hmc::simgen::SimError;
use thiserror::Error;

/// A failed command. Usage errors exit with 2, numerical failures with 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime(message.into())
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GibbsError> for CliError {
    fn from(e: GibbsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Contract(m) => CliError::Usage(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}
