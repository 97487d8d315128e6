use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use super::decode::{decode_rgb8, MIN_SIDE};
use super::manifest::SampleRecord;
use super::{ClassLabel, DataError, Split};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeFailure {
    pub relative_path: String,
    pub reason: String,
}

/// A file whose content hash matched an earlier file of the same source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DuplicateFile {
    pub kept: String,
    pub dropped: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub source_id: String,
    pub records: Vec<SampleRecord>,
    pub failures: Vec<DecodeFailure>,
    pub duplicates: Vec<DuplicateFile>,
}

impl IngestReport {
    pub fn class_counts(&self) -> BTreeMap<ClassLabel, usize> {
        let mut counts: BTreeMap<ClassLabel, usize> =
            ClassLabel::ALL.into_iter().map(|c| (c, 0)).collect();
        for r in &self.records {
            *counts.entry(r.label).or_default() += 1;
        }
        counts
    }
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Decodes every file under the mapped class folders of `root`.
///
/// Hidden files are skipped. Files that fail to decode, or are smaller than
/// 32 pixels on a side, are reported in `failures`. Byte-identical content
/// within the source is kept once (first by path) and listed in `duplicates`.
pub fn ingest_source(
    root: &Path,
    source_id: &str,
    label_map: &BTreeMap<String, ClassLabel>,
) -> Result<IngestReport, DataError> {
    let mut files: Vec<(String, PathBuf, ClassLabel)> = Vec::new();
    for (folder, &label) in label_map {
        let dir = root.join(folder);
        if !dir.is_dir() {
            return Err(DataError::MissingClassFolder {
                source_id: source_id.to_string(),
                folder: folder.clone(),
                root: root.to_path_buf(),
            });
        }
        for entry in WalkDir::new(&dir).follow_links(true) {
            let entry = entry.map_err(|e| DataError::io(&dir, e))?;
            let hidden = entry.file_name().to_string_lossy().starts_with('.');
            if entry.file_type().is_file() && !hidden {
                let path = entry.into_path();
                files.push((relative(root, &path), path, label));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files.dedup_by(|a, b| a.0 == b.0);

    let decoded: Vec<_> = files
        .par_iter()
        .map(|(_, path, _)| {
            decode_rgb8(path).and_then(|img| {
                if img.width < MIN_SIDE || img.height < MIN_SIDE {
                    Err(format!(
                        "{}×{} is below the {MIN_SIDE}-pixel minimum",
                        img.width, img.height
                    ))
                } else {
                    Ok((img.content_hash(), img.width, img.height))
                }
            })
        })
        .collect();

    let mut report = IngestReport {
        source_id: source_id.to_string(),
        ..Default::default()
    };
    let mut seen: HashMap<String, usize> = HashMap::new();
    for ((rel, _, label), result) in files.into_iter().zip(decoded) {
        match result {
            Err(reason) => {
                log::warn!("{source_id}: cannot use {rel}: {reason}");
                report.failures.push(DecodeFailure {
                    relative_path: rel,
                    reason,
                });
            }
            Ok((hash, width, height)) => {
                if let Some(&i) = seen.get(&hash) {
                    let kept = &report.records[i];
                    if kept.label != label {
                        return Err(DataError::LabelConflict {
                            sample_id: hash,
                            first: kept.label,
                            second: label,
                        });
                    }
                    log::warn!(
                        "{source_id}: {rel} duplicates {} (DuplicateSampleId), kept once",
                        kept.relative_path
                    );
                    report.duplicates.push(DuplicateFile {
                        kept: kept.relative_path.clone(),
                        dropped: rel,
                    });
                    continue;
                }
                seen.insert(hash.clone(), report.records.len());
                report.records.push(SampleRecord {
                    sample_id: hash,
                    source_id: source_id.to_string(),
                    relative_path: rel,
                    label,
                    split: Split::Train,
                    width,
                    height,
                });
            }
        }
    }
    if report.records.is_empty() {
        return Err(DataError::EmptySource(source_id.to_string()));
    }
    Ok(report)
}
