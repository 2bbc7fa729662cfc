//! Training loss and evaluation metrics.

mod eval;
mod loss;
mod stats;

use thiserror::Error;

use crate::tensor::TensorError;

pub use eval::{evaluate_case, evaluation_box, psnr, region_max, CaseMetrics};
pub use loss::{composite_loss, composite_loss_value, LossWeights};
pub use stats::{aggregate_stats, format_stat, quantile, render_table, Summary, SummaryStats, TABLE_ROWS};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation region is empty")]
    EmptyRegion,
    #[error("intensity maximum must be positive and finite, got {0}")]
    InvalidMax(f32),
    #[error("dims {left:?} and {right:?} are not aligned")]
    Misaligned { left: [usize; 3], right: [usize; 3] },
    #[error("no cases to aggregate")]
    NoCases,
    #[error("loss weights must be non-negative with at least one positive: {0:?}")]
    InvalidWeights(LossWeights),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
