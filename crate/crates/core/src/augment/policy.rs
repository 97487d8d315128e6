use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AugmentError;

/// Ranges for each random transform. Rotation and shear are symmetric in
/// degrees, shift is a fraction of each dimension, zoom is a symmetric
/// fraction around 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub rotation_deg: f64,
    pub shift_frac: f64,
    pub shear_deg: f64,
    pub zoom_frac: f64,
    pub hflip_prob: f64,
    pub enabled: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            rotation_deg: 30.0,
            shift_frac: 0.30,
            shear_deg: 15.0,
            zoom_frac: 0.20,
            hflip_prob: 0.5,
            enabled: true,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        AugmentPolicy {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let ranges = [
            ("rotation_deg", self.rotation_deg, 180.0),
            ("shift_frac", self.shift_frac, 1.0),
            ("shear_deg", self.shear_deg, 60.0),
            ("zoom_frac", self.zoom_frac, 0.9),
            ("hflip_prob", self.hflip_prob, 1.0),
        ];
        for (name, v, max) in ranges {
            if !(0.0..=max).contains(&v) {
                return Err(AugmentError::InvalidPolicy(format!(
                    "{name} = {v} outside [0, {max}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AugmentSeed {
    pub global_seed: u64,
    pub sample_id: String,
    pub epoch: u64,
}

impl AugmentSeed {
    fn stream(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"augment");
        h.update(self.global_seed.to_le_bytes());
        h.update(self.epoch.to_le_bytes());
        h.update(self.sample_id.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

/// One concrete draw. `shift` is in fractions of width and height; `zoom` is
/// a scale factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub shift: (f64, f64),
    pub shear_deg: f64,
    pub zoom: f64,
    pub flip: bool,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        rotation_deg: 0.0,
        shift: (0.0, 0.0),
        shear_deg: 0.0,
        zoom: 1.0,
        flip: false,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

fn symmetric(rng: &mut ChaCha8Rng, r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        rng.random_range(-r..=r)
    }
}

/// Uniform draws from each range, Bernoulli flip. Draw order is rotation,
/// shift x, shift y, shear, zoom, flip.
pub fn sample_augmentation(policy: &AugmentPolicy, seed: &AugmentSeed) -> AugmentParams {
    if !policy.enabled {
        return AugmentParams::IDENTITY;
    }
    let mut rng = seed.stream();
    let rotation_deg = symmetric(&mut rng, policy.rotation_deg);
    let dx = symmetric(&mut rng, policy.shift_frac);
    let dy = symmetric(&mut rng, policy.shift_frac);
    let shear_deg = symmetric(&mut rng, policy.shear_deg);
    let zoom = 1.0 + symmetric(&mut rng, policy.zoom_frac);
    let flip = rng.random_bool(policy.hflip_prob.clamp(0.0, 1.0));
    AugmentParams {
        rotation_deg,
        shift: (dx, dy),
        shear_deg,
        zoom,
        flip,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(id: &str, epoch: u64) -> AugmentSeed {
        AugmentSeed {
            global_seed: 42,
            sample_id: id.to_string(),
            epoch,
        }
    }

    #[test]
    fn disabled_is_identity() {
        let p = sample_augmentation(&AugmentPolicy::disabled(), &seed("a", 0));
        assert!(p.is_identity());
    }

    #[test]
    fn same_seed_same_draw_and_each_field_matters() {
        let policy = AugmentPolicy::default();
        let a = sample_augmentation(&policy, &seed("a", 0));
        assert_eq!(a, sample_augmentation(&policy, &seed("a", 0)));
        assert_ne!(a, sample_augmentation(&policy, &seed("b", 0)));
        assert_ne!(a, sample_augmentation(&policy, &seed("a", 1)));
        let other = AugmentSeed {
            global_seed: 43,
            ..seed("a", 0)
        };
        assert_ne!(a, sample_augmentation(&policy, &other));
    }

    #[test]
    fn draws_stay_in_range() {
        let policy = AugmentPolicy::default();
        let mut sum = 0.0;
        let mut flips = 0;
        let n = 100_000;
        for i in 0..n {
            let p = sample_augmentation(&policy, &seed(&i.to_string(), 0));
            assert!(p.rotation_deg.abs() <= 30.0);
            assert!(p.shift.0.abs() <= 0.30 && p.shift.1.abs() <= 0.30);
            assert!(p.shear_deg.abs() <= 15.0);
            assert!((0.8..=1.2).contains(&p.zoom));
            sum += p.rotation_deg;
            flips += p.flip as usize;
        }
        assert!((sum / n as f64).abs() < 0.5);
        assert!((flips as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentPolicy::default().validate().is_ok());
        let bad = AugmentPolicy {
            hflip_prob: 1.5,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().code(), "InvalidPolicy");
        let bad = AugmentPolicy {
            rotation_deg: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
