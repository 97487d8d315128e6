use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::ingest::{ingest_source, IngestReport};
use super::manifest::{merge_manifests, DatasetManifest};
use super::validate::ValidationReport;
use super::{ClassLabel, DataError};

/// One class-folder dataset.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Relative paths resolve against the config file's directory.
    pub root: PathBuf,
    /// Folder name (relative to root) → class name.
    pub labels: BTreeMap<String, String>,
    /// Records of this source are always assigned to train.
    #[serde(default)]
    pub all_train: bool,
    /// Per-class counts this source must produce.
    #[serde(default)]
    pub expected: Option<BTreeMap<String, usize>>,
}

/// Sources are ingested in id order; on cross-source duplicates the earliest
/// id wins.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateConfig {
    pub sources: BTreeMap<String, SourceConfig>,
    /// Per-class counts the merged corpus must have.
    #[serde(default)]
    pub expected: Option<BTreeMap<String, usize>>,
}

fn parse_counts(raw: &BTreeMap<String, usize>) -> Result<BTreeMap<ClassLabel, usize>, DataError> {
    raw.iter()
        .map(|(k, &v)| Ok((k.parse::<ClassLabel>()?, v)))
        .collect()
}

impl CurateConfig {
    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        let cfg: CurateConfig = toml::from_str(text).map_err(|e| DataError::Config(e.to_string()))?;
        if cfg.sources.is_empty() {
            return Err(DataError::Config("no [sources.<id>] tables".into()));
        }
        for s in cfg.sources.values() {
            for name in s.labels.values() {
                name.parse::<ClassLabel>()?;
            }
            if let Some(e) = &s.expected {
                parse_counts(e)?;
            }
        }
        if let Some(e) = &cfg.expected {
            parse_counts(e)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurateOutcome {
    pub manifest: DatasetManifest,
    pub ingests: Vec<IngestReport>,
    pub validations: Vec<ValidationReport>,
}

impl CurateOutcome {
    pub fn passed(&self) -> bool {
        self.validations.iter().all(ValidationReport::passed)
    }

    /// Text of `validation_report.txt`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for ing in &self.ingests {
            let _ = writeln!(
                s,
                "source {}: {} records, {} unreadable, {} duplicate files",
                ing.source_id,
                ing.records.len(),
                ing.failures.len(),
                ing.duplicates.len()
            );
            for f in &ing.failures {
                let _ = writeln!(s, "  unreadable {}: {}", f.relative_path, f.reason);
            }
            for d in &ing.duplicates {
                let _ = writeln!(s, "  duplicate {} (kept {})", d.dropped, d.kept);
            }
        }
        let _ = writeln!(
            s,
            "merged: {} records, {} cross-source duplicates collapsed",
            self.manifest.len(),
            self.manifest.duplicates_collapsed
        );
        for v in &self.validations {
            s.push('\n');
            s.push_str(&v.render());
        }
        let _ = writeln!(s, "\noverall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

/// Ingests, validates and merges every configured source.
pub fn curate(config: &CurateConfig, base_dir: &Path) -> Result<CurateOutcome, DataError> {
    let mut ingests = Vec::new();
    let mut validations = Vec::new();
    let mut roots = BTreeMap::new();
    let mut pinned = BTreeSet::new();
    for (id, src) in &config.sources {
        let root = base_dir.join(&src.root);
        let labels = src
            .labels
            .iter()
            .map(|(folder, name)| Ok((folder.clone(), name.parse::<ClassLabel>()?)))
            .collect::<Result<BTreeMap<_, _>, DataError>>()?;
        let report = ingest_source(&root, id, &labels)?;
        if let Some(expected) = &src.expected {
            validations.push(ValidationReport::compare(
                &format!("source {id}"),
                &parse_counts(expected)?,
                &report.class_counts(),
            ));
        }
        if src.all_train {
            pinned.insert(id.clone());
        }
        roots.insert(id.clone(), root);
        ingests.push(report);
    }
    let lists: Vec<_> = ingests.iter().map(|r| r.records.clone()).collect();
    let mut manifest = merge_manifests(&lists)?;
    manifest.sources = roots;
    manifest.all_train_sources = pinned;
    if let Some(expected) = &config.expected {
        validations.push(ValidationReport::compare(
            "merged",
            &parse_counts(expected)?,
            manifest.class_counts(),
        ));
    }
    Ok(CurateOutcome {
        manifest,
        ingests,
        validations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    const CONFIG: &str = r#"
[sources.a]
root = "a"
labels = { glioma = "glioma", notumor = "no_tumor" }
expected = { glioma = 2, no_tumor = 1 }

[sources.b]
root = "b"
all_train = true
labels = { glioma = "glioma" }

[expected]
glioma = 3
no_tumor = 1
"#;

    fn png(path: PathBuf, seed: u8) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        RgbImage::from_fn(32, 32, |x, y| Rgb([seed, x as u8, y as u8]))
            .save(path)
            .unwrap();
    }

    #[test]
    fn curate_validates_and_collapses() {
        let dir = tempfile::tempdir().unwrap();
        png(dir.path().join("a/glioma/1.png"), 1);
        png(dir.path().join("a/glioma/2.png"), 2);
        png(dir.path().join("a/notumor/1.png"), 3);
        png(dir.path().join("b/glioma/copy.png"), 2);
        png(dir.path().join("b/glioma/new.png"), 4);
        let cfg = CurateConfig::from_toml(CONFIG).unwrap();
        let out = curate(&cfg, dir.path()).unwrap();
        assert_eq!(out.manifest.len(), 4);
        assert_eq!(out.manifest.duplicates_collapsed, 1);
        assert!(out.manifest.all_train_sources.contains("b"));
        assert!(out.passed(), "{}", out.render());
        assert!(out.render().contains("1 cross-source duplicates collapsed"));
    }

    #[test]
    fn bad_config_is_rejected() {
        assert_eq!(CurateConfig::from_toml("").unwrap_err().code(), "ConfigError");
        let bad_label = "[sources.a]\nroot = \"a\"\nlabels = { x = \"tumour\" }\n";
        assert_eq!(CurateConfig::from_toml(bad_label).unwrap_err().code(), "UnknownLabel");
    }
}
