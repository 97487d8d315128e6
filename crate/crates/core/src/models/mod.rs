//! The two classification architectures, their parameters and checkpoints.
//!
//! A [`ModelSpec`] is a flat list of named stages. Parameter names are derived
//! from stage names (`stem.conv.weight`, `c2psa.fc1.bias`, ...), so a spec fully
//! determines the parameter layout and the checkpoint format.

pub mod check;
pub mod checkpoint;
mod forward;
mod params;
mod spec;

use thiserror::Error;

use crate::engine::EngineError;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointHeader, CHECKPOINT_MAGIC, Moments};
pub use forward::{ForwardOptions, Mode, Model};
pub use params::{init_parameters, BufferSet, Parameter, ParameterSet};
pub use spec::{
    ConvBlockSpec, Init, ModelName, ModelSpec, NamedStage, ParamDecl, Stage, DEFAULT_INPUT_SIDE,
    INPUT_CHANNELS, NUM_CLASSES, SPATIAL_ATTENTION_KERNEL, WIDTH_MULTIPLIERS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model {0:?} (expected yolo_cls_lite or custom_cnn)")]
    UnknownModel(String),
    #[error("unsupported width multiplier {0} (expected 0.25, 0.5 or 1.0)")]
    UnsupportedWidth(f64),
    #[error("unsupported class count {0} (expected 4)")]
    UnsupportedClassCount(usize),
    #[error("shape propagation failed at stage {stage}: {reason}")]
    ShapePropagationFailure { stage: String, reason: String },
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("parameter layout does not match spec: {0}")]
    ParameterLayout(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::UnknownModel(_) => "UnknownModel",
            ModelError::UnsupportedWidth(_) => "UnsupportedWidth",
            ModelError::UnsupportedClassCount(_) => "UnsupportedClassCount",
            ModelError::ShapePropagationFailure { .. } => "ShapePropagationFailure",
            ModelError::DuplicateParameter(_) => "DuplicateParameter",
            ModelError::MissingParameter(_) => "MissingParameter",
            ModelError::ParameterLayout(_) => "ParameterLayout",
            ModelError::Engine(e) => e.code(),
        }
    }
}
