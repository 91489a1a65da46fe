use gzgd_core::attention::ClassifierError;
use gzgd_core::autoencoder::AeError;
use gzgd_core::data::DataError;
use gzgd_core::mask::MaskError;
use gzgd_core::metrics::MetricsError;
use gzgd_core::synth::SynthError;
use gzgd_core::trust::TrustError;
use thiserror::Error;

/// Failure classes with stable process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_error!(
    DataError,
    MaskError,
    MetricsError,
    TrustError,
    SynthError,
    std::io::Error,
    serde_json::Error
);

impl From<AeError> for CliError {
    fn from(e: AeError) -> Self {
        match e {
            AeError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            AeError::Config(_) | AeError::Layer(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            ClassifierError::Config(_) => CliError::Usage(e.to_string()),
            ClassifierError::Autoencoder(inner) => inner.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
