//! Pre-training and fine-tuning loops: track-masked losses,
//! satellite-consistent batching, best-validation checkpoints and seeded,
//! repeatable runs.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod data;
mod error;
pub mod finetune;
pub mod infer;
pub mod loss;
pub mod pretrain;

pub use batch::{epoch_seed, make_batches, ordered_batches};
pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, CheckpointIndex, LoadedCheckpoint, Phase};
pub use config::{BestTracker, EpochLog, EvalStats, FitReport, TrainConfig};
pub use data::{volume_batch, Batch, Crop, SampleSet, SceneImage, SceneSet};
pub use error::{Result, TrainError};
pub use finetune::FineTuner;
pub use infer::{climatology, climatology_eval, pooled_rmse, predict_eval, predict_volume, track_columns};
pub use loss::{masked_mse_loss, MaskedTarget};
pub use pretrain::{PreTrainer, Reconstruction};
