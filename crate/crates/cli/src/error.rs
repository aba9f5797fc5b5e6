use std::path::Path;

use thiserror::Error;

use sct_core::forward::ForwardError;
use sct_core::identify::IdentifyError;
use sct_core::invert::InvertError;
use sct_core::model::ModelError;
use sct_core::protocol::ProtocolError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}: field `{field}`: {message}")]
    Parse { file: String, field: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("reconstruction did not converge: {0}")]
    NoConvergence(String),
    #[error("fingerprint mismatch: counts were taken with protocol {found}, supplied protocol is {expected}")]
    Fingerprint { found: String, expected: String },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } => 2,
            CliError::Dimension(_) => 3,
            CliError::NoConvergence(_) => 4,
            CliError::Fingerprint { .. } => 5,
            CliError::Failed(_) => 1,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Failed(format!("{}: {e}", path.display()))
    }

    /// Invalid content of an otherwise well-formed file.
    pub fn invalid(file: &Path, field: &str, message: impl ToString) -> Self {
        CliError::Parse { file: file.display().to_string(), field: field.into(), message: message.to_string() }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::WrongDimension { .. } => CliError::Dimension(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::DimensionMismatch { .. } => CliError::Dimension(e.to_string()),
            ProtocolError::Model(m) => m.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<ForwardError> for CliError {
    fn from(e: ForwardError) -> Self {
        match e {
            ForwardError::DimensionMismatch { .. } => CliError::Dimension(e.to_string()),
            ForwardError::Model(m) => m.into(),
            ForwardError::Protocol(p) => p.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<IdentifyError> for CliError {
    fn from(e: IdentifyError) -> Self {
        match e {
            IdentifyError::DimensionMismatch { .. } => CliError::Dimension(e.to_string()),
            IdentifyError::Forward(f) => f.into(),
            IdentifyError::Model(m) => m.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<InvertError<f64>> for CliError {
    fn from(e: InvertError<f64>) -> Self {
        match e {
            InvertError::DimensionMismatch(_) => CliError::Dimension(e.to_string()),
            InvertError::Protocol(p) => p.into(),
            InvertError::Forward(f) => f.into(),
            InvertError::Identify(i) => i.into(),
            InvertError::Model(m) => m.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}
