//! Dataset curation: class-folder ingestion, cross-source merging,
//! stratified splitting and count validation.

mod config;
mod decode;
pub mod fixture;
mod ingest;
mod manifest;
mod split;
mod validate;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{curate, CurateConfig, CurateOutcome, SourceConfig};
pub use decode::{decode_rgb8, DecodedImage, MIN_SIDE};
pub use ingest::{ingest_source, DecodeFailure, DuplicateFile, IngestReport};
pub use manifest::{merge_manifests, DatasetManifest, SampleRecord, SCHEMA_VERSION};
pub use split::stratified_split;
pub use validate::{validate_counts, CountCheck, ValidationReport};

/// The four-class taxonomy. Ids are fixed and double as logit indices.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    NoTumor,
    Glioma,
    Meningioma,
    Pituitary,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::NoTumor,
        ClassLabel::Glioma,
        ClassLabel::Meningioma,
        ClassLabel::Pituitary,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::NoTumor => "no_tumor",
            ClassLabel::Glioma => "glioma",
            ClassLabel::Meningioma => "meningioma",
            ClassLabel::Pituitary => "pituitary",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| DataError::UnknownLabel(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("source {source_id}: class folder {folder:?} not found under {root}")]
    MissingClassFolder {
        source_id: String,
        folder: String,
        root: PathBuf,
    },
    #[error("source {0}: no decodable images")]
    EmptySource(String),
    #[error("sample {sample_id} labelled both {first} and {second}")]
    LabelConflict {
        sample_id: String,
        first: ClassLabel,
        second: ClassLabel,
    },
    #[error("record {source_id}/{relative_path} appears twice")]
    DuplicateRecordPath {
        source_id: String,
        relative_path: String,
    },
    #[error("class {label} has {count} samples; a split needs at least 2")]
    DegenerateClass { label: ClassLabel, count: usize },
    #[error("train fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("unknown class label {0:?}")]
    UnknownLabel(String),
    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },
    #[error("manifest inconsistent: {0}")]
    ManifestMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

impl DataError {
    pub fn code(&self) -> &'static str {
        match self {
            DataError::MissingClassFolder { .. } => "MissingClassFolder",
            DataError::EmptySource(_) => "EmptySource",
            DataError::LabelConflict { .. } => "LabelConflict",
            DataError::DuplicateRecordPath { .. } => "DuplicateRecordPath",
            DataError::DegenerateClass { .. } => "DegenerateClass",
            DataError::InvalidFraction(_) => "InvalidFraction",
            DataError::UnknownLabel(_) => "UnknownLabel",
            DataError::ManifestParse { .. } => "ManifestParse",
            DataError::ManifestMismatch(_) => "ManifestMismatch",
            DataError::Config(_) => "ConfigError",
            DataError::Io { .. } => "IoFailure",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl fmt::Display) -> Self {
        DataError::Io {
            path: path.into(),
            reason: err.to_string(),
        }
    }
}
