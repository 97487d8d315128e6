//! Confusion matrices and the accuracy / precision / recall / F1 /
//! specificity suite, macro-averaged over classes.

mod export;
mod metrics;

use thiserror::Error;

pub use export::{export_report, read_metrics, render_confusion_csv, ExportedFiles};
pub use metrics::{
    accuracy, binary_counts, build_confusion, macro_report, precision_recall_f1, specificity,
    BinaryCounts, ClassMetrics, ConfusionMatrix, MetricsReport, PrfScores, Ratio,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{preds} predictions for {truths} ground truths")]
    LengthMismatch { preds: usize, truths: usize },
    #[error("class id {id} outside [0, {k})")]
    InvalidClassId { id: usize, k: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("{0}")]
    Io(String),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::LengthMismatch { .. } => "LengthMismatch",
            EvalError::InvalidClassId { .. } => "InvalidClassId",
            EvalError::EmptyMatrix => "EmptyMatrix",
            EvalError::Io(_) => "IoFailure",
        }
    }
}
