//! Training, evaluation, checkpoints and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod model;
pub mod predict;
pub mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, SCHEMA_VERSION};
pub use config::{AdamConfig, DataSource, RunConfig};
pub use eval::{evaluate, EvalOptions, EvalReport};
pub use model::{loss_and_grad, text_bank, EpisodeBatch, LossParts, LossSettings, ModelParams, ModelView, TextTargets};
pub use predict::{FsarModel, PredictMode};
pub use train::{train, train_on, TrainEvent};
