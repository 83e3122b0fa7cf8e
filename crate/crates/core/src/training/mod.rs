//! Separator-token pretraining and task-vector contrastive fine-tuning.

mod adam;
mod config;
mod loss;
mod trainer;

pub use adam::{adam_step, clip_global_norm, AdamHyper, AdamState};
pub use config::{default_contrast_layer, LossMode, TrainConfig};
pub use loss::{ce_loss_on_separators, contrastive_loss, record_contrastive, ContrastiveBatch};
pub use trainer::{evaluate, loss_and_gradients, train, EvalReport, TrainLogRow, TrainOutcome};
