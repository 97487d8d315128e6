//! Image preprocessing: rescaling, resizing and seeded geometric augmentation.
//!
//! Every random choice comes from a stream keyed by
//! `(global_seed, epoch, sample_id)`, so results do not depend on load order.

mod buffer;
mod policy;
mod transform;

use thiserror::Error;

pub use buffer::{contact_sheet, ImageBuffer};
pub use policy::{sample_augmentation, AugmentParams, AugmentPolicy, AugmentSeed};
pub use transform::{affine_transform, apply_augmentation, horizontal_flip, resize_to, FILL_VALUE};

use crate::data::DecodedImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("pixel value {value} outside [0, 255]")]
    OutOfRangeInput { value: f32 },
    #[error("invalid augmentation policy: {0}")]
    InvalidPolicy(String),
    #[error("image buffer: {0}")]
    Shape(String),
}

impl AugmentError {
    pub fn code(&self) -> &'static str {
        match self {
            AugmentError::OutOfRangeInput { .. } => "OutOfRangeInput",
            AugmentError::InvalidPolicy(_) => "InvalidPolicy",
            AugmentError::Shape(_) => "ShapeMismatch",
        }
    }
}

/// Divides 8-bit values by 255.
pub fn rescale(img: &ImageBuffer) -> Result<ImageBuffer, AugmentError> {
    if let Some(&value) = img.pixels().iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(AugmentError::OutOfRangeInput { value });
    }
    Ok(img.map(|v| v / 255.0))
}

/// Model input for one image: rescale, resize to `side`, then (when `seed`
/// is given and the policy is enabled) a sampled augmentation.
pub fn prepare_input(
    decoded: &DecodedImage,
    side: usize,
    policy: &AugmentPolicy,
    seed: Option<&AugmentSeed>,
) -> Result<ImageBuffer, AugmentError> {
    let img = rescale(&ImageBuffer::from_decoded(decoded))?;
    let img = resize_to(&img, side);
    match seed {
        Some(seed) if policy.enabled => {
            Ok(apply_augmentation(&img, &sample_augmentation(policy, seed)))
        }
        _ => Ok(img),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_u8_image(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..w * h * 3).map(|_| rng.random_range(0..=255u8) as f32).collect();
        ImageBuffer::new(w, h, 3, px).unwrap()
    }

    #[test]
    fn rescale_endpoints_and_round_trip() {
        let img = ImageBuffer::new(2, 1, 1, vec![0.0, 255.0]).unwrap();
        assert_eq!(rescale(&img).unwrap().pixels(), &[0.0, 1.0]);
        let grey = ImageBuffer::new(3, 3, 1, vec![128.0; 9]).unwrap();
        assert!(rescale(&grey).unwrap().pixels().iter().all(|&v| v == 128.0 / 255.0));

        let img = random_u8_image(37, 41, 2);
        let out = rescale(&img).unwrap();
        assert!(out.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert_eq!((b * 255.0).round(), *a);
        }
    }

    #[test]
    fn rescale_rejects_out_of_range() {
        let img = ImageBuffer::new(1, 1, 1, vec![256.0]).unwrap();
        assert_eq!(rescale(&img).unwrap_err().code(), "OutOfRangeInput");
        let img = ImageBuffer::new(1, 1, 1, vec![-1.0]).unwrap();
        assert!(rescale(&img).is_err());
    }

    #[test]
    fn disabled_policy_is_rescale_plus_resize() {
        let px: Vec<u8> = (0..48 * 40 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let decoded = DecodedImage {
            width: 48,
            height: 40,
            pixels: px,
        };
        let policy = AugmentPolicy {
            enabled: false,
            ..AugmentPolicy::default()
        };
        let seed = AugmentSeed {
            global_seed: 1,
            sample_id: "x".into(),
            epoch: 0,
        };
        let plain = resize_to(&rescale(&ImageBuffer::from_decoded(&decoded)).unwrap(), 32);
        assert_eq!(prepare_input(&decoded, 32, &policy, Some(&seed)).unwrap(), plain);
        assert_eq!(prepare_input(&decoded, 32, &AugmentPolicy::default(), None).unwrap(), plain);
        assert_ne!(
            prepare_input(&decoded, 32, &AugmentPolicy::default(), Some(&seed)).unwrap(),
            plain
        );
    }
}
