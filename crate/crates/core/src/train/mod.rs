//! Training: Adam with warmup and decay, rotation augmentation, synthetic
//! outlier injection, the epoch loop with validation, and checkpoints.

mod augment;
mod checkpoint;
mod config;
mod optim;
mod outliers;
mod trainer;

pub use augment::{augment, augment_with, AugRecord, AUG_MAX_TRIES};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, BestParams, Checkpoint, ValidationRecord, CHECKPOINT_MAGIC,
};
pub use config::{AugConfig, OutlierConfig, TrainConfig};
pub use optim::{adam_step, lr_at, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use outliers::{
    inject_outliers, outlier_target, OutlierInjection, MIN_INLIERS_PER_POINT,
    MIN_INLIERS_PER_VIEW, OUTLIER_MAX_ROUNDS,
};
pub use trainer::{loss_and_grad, validation_loss, IterationLog, StepEval, Trainer};

use crate::gnn::GnnError;
use crate::objective::ObjectiveError;
use crate::scene::SceneError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("no rotation keeps the points of view {view} in front of the camera")]
    Augmentation { view: usize },
    #[error("cannot place {requested} outliers among {observations} observations within the inlier bounds")]
    OutlierInfeasible { requested: usize, observations: usize },
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: u64,
        reason: String,
        /// State before the failing iteration.
        checkpoint: Box<Checkpoint>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
