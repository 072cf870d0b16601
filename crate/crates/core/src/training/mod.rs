//! Initialization, the training loop, and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod init;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{Architecture, ClPool, TrainConfig, Variant, CONFIG_KEYS};
pub use forward::{
    batch_loss, encode_candidates, encode_field_matrices, encode_history, BatchLosses,
};
pub use init::{glorot_bound, init_params, EMBEDDING_RANGE};
pub use train::{epoch_log_csv, resume, train, Dataset, EpochLog, TrainOutcome, TrainState};
