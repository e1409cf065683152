//! Optimization loop: Lion updates, a warm-up/decay schedule with
//! per-group learning rates, the deterministic NSE loss and checkpoints.

mod checkpoint;
mod fit;
mod loss;
mod optimizer;
mod schedule;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_model_as, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fit::{fit, EpochLog, FitResult, TrainConfig, write_loss_trace};
pub use loss::{nse_loss, nse_loss_value, NSE_STD_FLOOR};
pub use optimizer::{lion_step, LionHyper, OptimizerState};
pub use schedule::lr_schedule;
