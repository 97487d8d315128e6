use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClassLabel, DataError, Split};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Hex SHA-256 of the decoded pixels.
    pub sample_id: String,
    pub source_id: String,
    pub relative_path: String,
    pub label: ClassLabel,
    pub split: Split,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    seed: u64,
    split_fractions: BTreeMap<Split, f64>,
    all_train: bool,
    all_train_sources: BTreeSet<String>,
    sources: BTreeMap<String, PathBuf>,
    duplicates_collapsed: usize,
    class_counts: BTreeMap<ClassLabel, usize>,
    record_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    /// Empty until a split has been assigned.
    pub split_fractions: BTreeMap<Split, f64>,
    /// Set by a split with train fraction 1.0.
    pub all_train: bool,
    /// Sources whose records are always assigned to train.
    pub all_train_sources: BTreeSet<String>,
    /// Source id → root directory, used to locate files.
    pub sources: BTreeMap<String, PathBuf>,
    /// Cross-source duplicates dropped while merging.
    pub duplicates_collapsed: usize,
    records: Vec<SampleRecord>,
    class_counts: BTreeMap<ClassLabel, usize>,
}

fn count(records: &[SampleRecord]) -> BTreeMap<ClassLabel, usize> {
    let mut counts: BTreeMap<ClassLabel, usize> =
        ClassLabel::ALL.into_iter().map(|c| (c, 0)).collect();
    for r in records {
        *counts.entry(r.label).or_default() += 1;
    }
    counts
}

impl DatasetManifest {
    /// Records are sorted by sample id; ids must be unique.
    pub fn from_records(mut records: Vec<SampleRecord>) -> Result<Self, DataError> {
        records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        if let Some(w) = records.windows(2).find(|w| w[0].sample_id == w[1].sample_id) {
            return Err(DataError::ManifestMismatch(format!(
                "sample id {} appears twice",
                w[0].sample_id
            )));
        }
        let class_counts = count(&records);
        Ok(DatasetManifest {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            split_fractions: BTreeMap::new(),
            all_train: false,
            all_train_sources: BTreeSet::new(),
            sources: BTreeMap::new(),
            duplicates_collapsed: 0,
            records,
            class_counts,
        })
    }

    pub fn empty() -> Self {
        Self::from_records(Vec::new()).expect("no records, no duplicates")
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> &BTreeMap<ClassLabel, usize> {
        &self.class_counts
    }

    /// Replaces each record's split in place; labels and order are untouched.
    pub(crate) fn assign_splits(&mut self, splits: &[Split]) {
        for (r, s) in self.records.iter_mut().zip(splits) {
            r.split = *s;
        }
    }

    /// Records of one split, in manifest order.
    pub fn split_records(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// A manifest holding only `split`, sharing the header fields.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        let records: Vec<SampleRecord> =
            self.records.iter().filter(|r| r.split == split).cloned().collect();
        DatasetManifest {
            class_counts: count(&records),
            records,
            ..self.clone()
        }
    }

    pub fn split_counts(&self, split: Split) -> BTreeMap<ClassLabel, usize> {
        let records: Vec<SampleRecord> =
            self.records.iter().filter(|r| r.split == split).cloned().collect();
        count(&records)
    }

    /// Absolute location of a record's file.
    pub fn path_of(&self, record: &SampleRecord) -> Result<PathBuf, DataError> {
        self.sources
            .get(&record.source_id)
            .map(|root| root.join(&record.relative_path))
            .ok_or_else(|| {
                DataError::ManifestMismatch(format!("no root for source {}", record.source_id))
            })
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            schema_version: self.schema_version,
            seed: self.seed,
            split_fractions: self.split_fractions.clone(),
            all_train: self.all_train,
            all_train_sources: self.all_train_sources.clone(),
            sources: self.sources.clone(),
            duplicates_collapsed: self.duplicates_collapsed,
            class_counts: self.class_counts.clone(),
            record_count: self.records.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serialises");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serialises"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(DataError::ManifestParse {
            line: 1,
            reason: "empty manifest".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| DataError::ManifestParse {
            line: 1,
            reason: e.to_string(),
        })?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(DataError::ManifestParse {
                line: 1,
                reason: format!("unsupported schema version {}", header.schema_version),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: SampleRecord =
                serde_json::from_str(line).map_err(|e| DataError::ManifestParse {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            records.push(r);
        }
        if records.len() != header.record_count {
            return Err(DataError::ManifestMismatch(format!(
                "header declares {} records, found {}",
                header.record_count,
                records.len()
            )));
        }
        let mut manifest = Self::from_records(records)?;
        if manifest.class_counts != header.class_counts {
            return Err(DataError::ManifestMismatch(
                "class_counts differ from a recount of the records".into(),
            ));
        }
        manifest.schema_version = header.schema_version;
        manifest.seed = header.seed;
        manifest.split_fractions = header.split_fractions;
        manifest.all_train = header.all_train;
        manifest.all_train_sources = header.all_train_sources;
        manifest.sources = header.sources;
        manifest.duplicates_collapsed = header.duplicates_collapsed;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Concatenates sources in order and collapses identical content to its first
/// occurrence. The result is sorted by sample id and carries no split yet.
pub fn merge_manifests(sources: &[Vec<SampleRecord>]) -> Result<DatasetManifest, DataError> {
    let mut paths: HashSet<(&str, &str)> = HashSet::new();
    let mut kept: HashMap<&str, ClassLabel> = HashMap::new();
    let mut records = Vec::new();
    let mut collapsed = 0;
    for r in sources.iter().flatten() {
        if !paths.insert((&r.source_id, &r.relative_path)) {
            return Err(DataError::DuplicateRecordPath {
                source_id: r.source_id.clone(),
                relative_path: r.relative_path.clone(),
            });
        }
        match kept.get(r.sample_id.as_str()) {
            Some(&label) if label != r.label => {
                return Err(DataError::LabelConflict {
                    sample_id: r.sample_id.clone(),
                    first: label,
                    second: r.label,
                })
            }
            Some(_) => collapsed += 1,
            None => {
                kept.insert(&r.sample_id, r.label);
                records.push(SampleRecord {
                    split: Split::Train,
                    ..r.clone()
                });
            }
        }
    }
    if collapsed > 0 {
        log::info!("merge collapsed {collapsed} duplicate samples across sources");
    }
    let mut manifest = DatasetManifest::from_records(records)?;
    manifest.duplicates_collapsed = collapsed;
    Ok(manifest)
}
