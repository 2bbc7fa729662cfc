//! Cross-validated training and full-volume inference.

mod folds;
mod infer;
mod normalize;
mod trainer;

use thiserror::Error;

use crate::masks::MaskError;
use crate::metrics::MetricsError;
use crate::tensor::TensorError;
use crate::unet::{CheckpointError, ModelError};
use crate::volume::VolumeError;

pub use folds::{kfold_split, FoldPlan};
pub use infer::{infer_case, Ensemble, FnPredictor, InferInput, Predictor};
pub use normalize::{denormalize, denormalize_value, normalize_two_stage};
pub use trainer::{
    prepare_sample, train_fold, validation_loss, EpochRecord, FoldOutcome, FoldResult, LossRegion, PreparedSample,
    TrainConfig,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("fold {fold} has no training or no validation samples")]
    EmptySplit { fold: usize },
    #[error("non-finite loss {value} in fold {fold}, epoch {epoch}, sample {sample}")]
    NonFinite {
        fold: usize,
        epoch: usize,
        sample: String,
        value: f64,
    },
    #[error("normalization: {0}")]
    Normalization(String),
    #[error("{outside} mask voxels lie outside the crop region")]
    MaskOutsideCrop { outside: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
