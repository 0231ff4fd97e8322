//! Loss, optimizer, the epoch loop and checkpoint files.

mod checkpoint;
mod optimizer;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION, MAGIC};
pub use optimizer::{sgd_step, OptimizerState, TrainConfig};
pub use trainer::{cross_entropy, evaluate, predict_classes, train, train_with_callback, EpochRecord, TrainOutcome};
