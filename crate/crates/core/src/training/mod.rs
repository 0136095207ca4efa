//! Losses, masking, optimization and checkpoint selection.

pub mod loss;
pub mod masks;
pub mod optim;
pub mod schedule;
pub mod select;
pub mod trainer;

pub use loss::{mse_loss, pinball_loss, LossKind, DEFAULT_QUANTILES};
pub use masks::{draw_dynamic_masks, draw_mask};
pub use optim::{Optimizer, OptimizerKind};
pub use schedule::CosineRestarts;
pub use select::{select_checkpoint, EarlyStopping};
pub use trainer::{FitSummary, LogRow, Sample, StepReport, TrainConfig, TrainState, Trainer};
