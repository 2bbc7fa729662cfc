use std::io;
use std::path::PathBuf;

use voxelpaint_core::tensor::TensorError;
use voxelpaint_core::train::TrainError;

pub const EXIT_MISSING: u8 = 2;
pub const EXIT_INVALID: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl std::fmt::Display for MissingInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing input: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

#[derive(Debug)]
pub enum Failure {
    InvalidConfig(String),
    InvalidData(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::InvalidConfig(m) => write!(f, "invalid config: {m}"),
            Failure::InvalidData(m) => write!(f, "invalid data: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

/// Maps an error chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<MissingInput>() {
            return EXIT_MISSING;
        }
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            if e.kind() == io::ErrorKind::NotFound {
                return EXIT_MISSING;
            }
        }
        if matches!(cause.downcast_ref::<TrainError>(), Some(TrainError::NonFinite { .. }))
            || matches!(cause.downcast_ref::<TensorError>(), Some(TensorError::NonFiniteLoss(_)))
            || matches!(
                cause.downcast_ref::<voxelpaint_core::Error>(),
                Some(voxelpaint_core::Error::Train(TrainError::NonFinite { .. }))
            )
        {
            return EXIT_NUMERIC;
        }
    }
    EXIT_INVALID
}
