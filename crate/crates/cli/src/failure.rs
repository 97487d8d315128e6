use std::fmt;

use tumorgrade::augment::AugmentError;
use tumorgrade::data::DataError;
use tumorgrade::eval::EvalError;
use tumorgrade::models::{CheckpointError, ModelError};
use tumorgrade::train::TrainError;

/// Exit code for bad inputs, failed validations and failed checks.
pub const EXIT_VALIDATION: u8 = 1;
/// Exit code for everything else that stops a command.
pub const EXIT_RUNTIME: u8 = 2;

/// A command failure: printed as `ERROR:<code>: <message>` on stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: &'static str,
    pub message: String,
    pub exit: u8,
}

impl Failure {
    pub fn validation(code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
            exit: EXIT_VALIDATION,
        }
    }

    pub fn runtime(code: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
            exit: EXIT_RUNTIME,
        }
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        Self::runtime("IoFailure", format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ERROR:{}: {}", self.code, self.message)
    }
}

fn build(code: &'static str, message: String, validation: bool) -> Failure {
    Failure {
        code,
        message,
        exit: if validation { EXIT_VALIDATION } else { EXIT_RUNTIME },
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let validation = !matches!(e, DataError::Io { .. });
        build(e.code(), e.to_string(), validation)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let validation = matches!(
            e,
            ModelError::UnknownModel(_)
                | ModelError::UnsupportedWidth(_)
                | ModelError::UnsupportedClassCount(_)
                | ModelError::ShapePropagationFailure { .. }
        );
        build(e.code(), e.to_string(), validation)
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Model(m) => m.into(),
            CheckpointError::Io(_) => build(e.code(), e.to_string(), false),
            _ => build(e.code(), e.to_string(), true),
        }
    }
}

impl From<AugmentError> for Failure {
    fn from(e: AugmentError) -> Self {
        let validation = matches!(e, AugmentError::InvalidPolicy(_));
        build(e.code(), e.to_string(), validation)
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let validation = matches!(e, EvalError::EmptyMatrix);
        build(e.code(), e.to_string(), validation)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Augment(a) => a.into(),
            TrainError::InvalidConfig(_) | TrainError::DataExhausted(_) => {
                build(e.code(), e.to_string(), true)
            }
            _ => build(e.code(), e.to_string(), false),
        }
    }
}
