//! Training loop and anticipation metrics.

mod eval;
mod metrics;
mod optim;
mod train;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::losses::{LossError, LossValues};
use crate::riskmodel::ModelError;

pub use eval::{risk_curve, write_curves_csv, EvalReport, SweepRow, VideoReport, MTTA_DEFINITION};
pub use metrics::{
    average_precision, average_precision_brute, delta_grid, mean_tta_at, mtta, mtta_brute, trigger_frame, tta, video_score,
    Curve,
};
pub use optim::Adam;
pub use train::{split_by_id, EpochLog, Split, StepLog, TrainConfig, TrainLog, Trainer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("metric: {0}")]
    Metric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String, last: Option<LossValues> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
