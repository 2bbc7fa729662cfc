use thiserror::Error;

use crate::masks::MaskError;
use crate::metrics::MetricsError;
use crate::tensor::TensorError;
use crate::train::TrainError;
use crate::unet::{CheckpointError, ModelError};
use crate::volume::{NiftiError, VolumeError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Any failure raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nifti(#[from] NiftiError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
