//! Small synthetic class-folder datasets for smoke tests and demos.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassLabel, DataError};

/// Lesion centre per class as a fraction of the side; `None` for no lesion.
fn lesion_centre(label: ClassLabel) -> Option<(f64, f64)> {
    match label {
        ClassLabel::NoTumor => None,
        ClassLabel::Glioma => Some((0.32, 0.32)),
        ClassLabel::Meningioma => Some((0.70, 0.62)),
        ClassLabel::Pituitary => Some((0.50, 0.78)),
    }
}

/// A noisy grey "head" disc with a bright blob whose position depends on
/// the class. Every image gets its own noise, so no two are identical.
pub fn synthetic_scan(label: ClassLabel, side: u32, rng: &mut impl Rng) -> RgbImage {
    let s = side as f64;
    let jitter = s * 0.04;
    let lesion = lesion_centre(label).map(|(x, y)| {
        (
            x * s + rng.random_range(-jitter..=jitter),
            y * s + rng.random_range(-jitter..=jitter),
        )
    });
    let head_r = s * 0.44;
    let blob_r = s * 0.12;
    RgbImage::from_fn(side, side, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = 12.0;
        if (fx - s / 2.0).hypot(fy - s / 2.0) < head_r {
            v = 95.0;
        }
        if let Some((lx, ly)) = lesion {
            if (fx - lx).hypot(fy - ly) < blob_r {
                v = 225.0;
            }
        }
        let v = (v + rng.random_range(-10.0..=10.0f64)).clamp(0.0, 255.0) as u8;
        Rgb([v, v, v])
    })
}

/// Writes `per_class` PNGs per class under `root/<class name>/`. Returns the
/// folder → class-name map to use as a source's `labels`.
pub fn write_fixture(
    root: &Path,
    per_class: usize,
    side: u32,
    seed: u64,
) -> Result<BTreeMap<String, String>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = BTreeMap::new();
    for label in ClassLabel::ALL {
        let dir = root.join(label.name());
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        for i in 0..per_class {
            let path = dir.join(format!("img_{i:03}.png"));
            synthetic_scan(label, side, &mut rng)
                .save(&path)
                .map_err(|e| DataError::Io {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
        }
        labels.insert(label.name().to_string(), label.name().to_string());
    }
    Ok(labels)
}
