use std::path::PathBuf;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::TrainError;
use crate::augment::{
    apply_augmentation, rescale, resize_to, sample_augmentation, AugmentPolicy, AugmentSeed,
    ImageBuffer,
};
use crate::data::{decode_rgb8, DatasetManifest, SampleRecord, Split};
use crate::engine::{Real, Tensor};

// Caches above this size fall back to decoding every epoch.
const CACHE_BUDGET_BYTES: usize = 2 << 30;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub path: PathBuf,
    pub sample_id: String,
    pub label: usize,
}

impl LabeledImage {
    pub fn from_records<'a>(
        manifest: &DatasetManifest,
        records: impl IntoIterator<Item = &'a SampleRecord>,
    ) -> Result<Vec<Self>, TrainError> {
        records
            .into_iter()
            .map(|r| {
                Ok(LabeledImage {
                    path: manifest.path_of(r)?,
                    sample_id: r.sample_id.clone(),
                    label: r.label.id(),
                })
            })
            .collect()
    }

    /// All records of `split`, in manifest order.
    pub fn split(manifest: &DatasetManifest, split: Split) -> Result<Vec<Self>, TrainError> {
        Self::from_records(manifest, manifest.split_records(split))
    }
}

/// Decoded, rescaled and resized images, loaded on demand.
pub struct ImageSet {
    samples: Vec<LabeledImage>,
    side: usize,
    cache: Option<Vec<OnceLock<ImageBuffer>>>,
}

impl ImageSet {
    pub fn new(samples: Vec<LabeledImage>, side: usize, cache: bool) -> Self {
        let bytes = samples.len() * side * side * 3 * std::mem::size_of::<f32>();
        let cache = (cache && bytes <= CACHE_BUDGET_BYTES)
            .then(|| (0..samples.len()).map(|_| OnceLock::new()).collect());
        ImageSet {
            samples,
            side,
            cache,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[LabeledImage] {
        &self.samples
    }

    pub fn side(&self) -> usize {
        self.side
    }

    fn base(&self, i: usize) -> Result<ImageBuffer, TrainError> {
        if let Some(img) = self.cache.as_ref().and_then(|c| c[i].get()) {
            return Ok(img.clone());
        }
        let s = &self.samples[i];
        let decoded = decode_rgb8(&s.path).map_err(|reason| TrainError::ImageLoad {
            path: s.path.display().to_string(),
            reason,
        })?;
        let img = resize_to(&rescale(&ImageBuffer::from_decoded(&decoded))?, self.side);
        if let Some(cache) = &self.cache {
            let _ = cache[i].set(img.clone());
        }
        Ok(img)
    }

    /// N×3×side×side batch for `indices` with their labels. Augmentation is
    /// applied when `augment` is given and its policy is enabled.
    pub fn batch<T: Real>(
        &self,
        indices: &[usize],
        augment: Option<(&AugmentPolicy, u64, u64)>,
    ) -> Result<(Tensor<T>, Vec<usize>), TrainError> {
        let images: Vec<ImageBuffer> = indices
            .par_iter()
            .map(|&i| {
                let img = self.base(i)?;
                Ok(match augment {
                    Some((policy, global_seed, epoch)) if policy.enabled => {
                        let seed = AugmentSeed {
                            global_seed,
                            sample_id: self.samples[i].sample_id.clone(),
                            epoch,
                        };
                        apply_augmentation(&img, &sample_augmentation(policy, &seed))
                    }
                    _ => img,
                })
            })
            .collect::<Result<_, TrainError>>()?;
        let mut data = Vec::with_capacity(indices.len() * 3 * self.side * self.side);
        for img in &images {
            img.write_chw(&mut data);
        }
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        let tensor = Tensor::new(vec![indices.len(), 3, self.side, self.side], data)?;
        Ok((tensor, labels))
    }
}

/// Splits `order` into batches of `batch_size`, folding a trailing
/// single-sample batch into the one before it.
pub fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size.max(1)).collect();
    if out.len() >= 2 && out[out.len() - 1].len() == 1 {
        let start = (out.len() - 2) * batch_size;
        out.pop();
        out.pop();
        out.push(&order[start..]);
    }
    out
}
