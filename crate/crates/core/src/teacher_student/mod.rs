//! Student training with an EMA teacher that supplies confidence-filtered
//! pseudo-labels on unannotated pixels.

mod optim;
mod pseudo;
mod trainer;

pub use optim::{adamw_step, clip_global_norm, global_norm, AdamW, OptimizerState};
pub use pseudo::{confidence_mask, ema_update, fuse};
pub use trainer::{
    evaluate, predict, run_training, train_step, Control, EpochRecord, Example, Phase, StepLosses, StepOutcome,
    TrainConfig, TrainerState, TrainingOutcome, AUGMENT_NOISE_SIGMA,
};
