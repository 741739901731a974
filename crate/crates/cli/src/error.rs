use pcfm::constraints::SpecError;
use pcfm::fields::io::BatchIoError;
use pcfm::flow::{CheckpointError, FlowError};
use pcfm::metrics::MetricsError;
use pcfm::pcfm::SamplerError;
use pcfm::pde_data::PdeError;
use thiserror::Error;

/// Failure classes; each maps to a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::OutOfScope(_) | PdeError::InvalidSpec(_) | PdeError::Grid(_) => CliError::Usage(e.to_string()),
            PdeError::BlowUp { .. } | PdeError::EmptyDataset { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Config(_) => CliError::Usage(e.to_string()),
            FlowError::Dim { .. } => CliError::Data(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config(_) => CliError::Usage(e.to_string()),
            SamplerError::Constraint(_) | SamplerError::Field(_) => CliError::Data(e.to_string()),
            SamplerError::Flow(f) => f.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BatchIoError> for CliError {
    fn from(e: BatchIoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<pcfm::fields::FieldError> for CliError {
    fn from(e: pcfm::fields::FieldError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<pcfm::constraints::ConstraintError> for CliError {
    fn from(e: pcfm::constraints::ConstraintError) -> Self {
        CliError::Data(e.to_string())
    }
}
