//! Adam training loop with per-epoch logging, checkpointing, divergence
//! detection and exact resume.
//!
//! Shuffling, dropout masks and augmentation draw from streams keyed by
//! `(seed, epoch, …)`, so a resumed run replays the same randomness as an
//! uninterrupted one.

mod adam;
mod config;
mod loader;
mod log;
mod run;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use config::{Optimizer, TrainConfig};
pub use loader::{batches, ImageSet, LabeledImage};
pub use log::{curves_csv, parse_curves, EpochLog, CURVES_HEADER};
pub use run::{
    checkpoint_name, epoch_order, predict_set, resume, run_training, train_step, Prediction,
    StepResult, TrainData, TrainOutcome, DIVERGENCE_FACTOR, DIVERGENCE_PATIENCE,
};

use crate::augment::AugmentError;
use crate::data::DataError;
use crate::engine::EngineError;
use crate::models::{CheckpointError, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no gradient for parameter {0}")]
    MissingGrad(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergenceDetected { epoch: usize, loss: f64 },
    #[error("{0}")]
    DataExhausted(String),
    #[error("cannot load {path}: {reason}")]
    ImageLoad { path: String, reason: String },
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl TrainError {
    pub fn code(&self) -> &'static str {
        match self {
            TrainError::InvalidConfig(_) => "ConfigError",
            TrainError::MissingGrad(_) => "MissingGrad",
            TrainError::DivergenceDetected { .. } => "DivergenceDetected",
            TrainError::DataExhausted(_) => "DataExhausted",
            TrainError::ImageLoad { .. } => "DecodeFailure",
            TrainError::Io(_) => "IoFailure",
            TrainError::Data(e) => e.code(),
            TrainError::Augment(e) => e.code(),
            TrainError::Engine(e) => e.code(),
            TrainError::Model(e) => e.code(),
            TrainError::Checkpoint(e) => e.code(),
        }
    }
}
