//! Adam, the staged learning-rate schedule, the coupled L2 loss and the
//! training loop.

mod adam;
mod loss;
mod schedule;

pub use adam::{AdamConfig, AdamState, ParamGrads};
pub use loss::{loss_with_l2, rmse_loss, L2Scope};
pub use schedule::{StageSchedule, DEFAULT_STAGE_LENGTH, DEFAULT_STAGE_LRS, STAGES};

mod train;

pub use train::{
    evaluate, target_means, train, train_step, EpochRecord, Evaluation, SplitScore, StageTrigger, TrainConfig,
    TrainRun, DEFAULT_BATCH_SIZE, DROPOUT_STREAM, LINEAR_LAMBDA, PLATEAU_PATIENCE, RESNET_LAMBDA,
};
