//! Loss, optimizer, training loop and checkpoints.

mod adam;
mod checkpoint;
mod fit;
mod loss;

pub use adam::AdamState;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, BlockInfo, CheckpointHeader,
};
pub use fit::{evaluate_loss, fit, train, EarlyStopping, EpochRecord, FitResult, Phase, TrainConfig, TrainData};
pub use loss::{bayesian_loss, dirichlet_entropy, expected_log_likelihood, LossConfig};
