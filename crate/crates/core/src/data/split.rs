use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::manifest::DatasetManifest;
use super::{ClassLabel, DataError, Split};

fn class_rng(seed: u64, label: ClassLabel) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"split");
    h.update(seed.to_le_bytes());
    h.update(label.name().as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Per-class train count: round(f·n) clamped to [1, n−1].
fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

/// Assigns train/test per class with a seeded shuffle.
///
/// `train_fraction == 1.0` selects all-train mode. Otherwise records of
/// `manifest.all_train_sources` go to train and every other class pool is
/// split so its train share is round(f·n).
pub fn stratified_split(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    let mut out = manifest.clone();
    out.seed = seed;
    if train_fraction == 1.0 {
        out.assign_splits(&vec![Split::Train; manifest.len()]);
        out.all_train = true;
        out.split_fractions = BTreeMap::from([(Split::Train, 1.0), (Split::Test, 0.0)]);
        return Ok(out);
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }

    let mut splits = vec![Split::Train; manifest.len()];
    let mut pools: BTreeMap<ClassLabel, Vec<usize>> =
        ClassLabel::ALL.into_iter().map(|c| (c, Vec::new())).collect();
    for (i, r) in manifest.records().iter().enumerate() {
        if !manifest.all_train_sources.contains(&r.source_id) {
            pools.entry(r.label).or_default().push(i);
        }
    }
    for (label, mut idx) in pools {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(DataError::DegenerateClass {
                label,
                count: idx.len(),
            });
        }
        let n_train = train_count(idx.len(), train_fraction);
        idx.shuffle(&mut class_rng(seed, label));
        for &i in &idx[n_train..] {
            splits[i] = Split::Test;
        }
    }
    out.assign_splits(&splits);
    out.all_train = false;
    out.split_fractions =
        BTreeMap::from([(Split::Train, train_fraction), (Split::Test, 1.0 - train_fraction)]);
    Ok(out)
}
