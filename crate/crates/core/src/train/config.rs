use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::AdamConfig;
use super::TrainError;
use crate::augment::AugmentPolicy;
use crate::engine::Dtype;
use crate::models::{ModelName, ModelSpec, NUM_CLASSES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("adam")
    }
}

/// Everything a training run depends on. Defaults are the reference
/// hyperparameters: 20 epochs, 224 px, batch 32, Adam at lr 0.001, augmentation on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub image_side: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub augment: AugmentPolicy,
    pub seed: u64,
    pub model: ModelName,
    pub width_mult: f64,
    pub precision: Dtype,
    /// Keeps decoded, resized training images in memory between epochs.
    pub cache_images: bool,
    /// When false, `wall_time_s` is logged as 0 so curves are byte-comparable.
    pub log_wall_time: bool,
    pub manifest: Option<PathBuf>,
    /// Validation manifest for all-train datasets; otherwise the test split is used.
    pub val_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            image_side: 224,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            learning_rate: 0.001,
            adam: AdamConfig::default(),
            augment: AugmentPolicy::default(),
            seed: 0,
            model: ModelName::YoloClsLite,
            width_mult: 1.0,
            precision: Dtype::F32,
            cache_images: true,
            log_wall_time: true,
            manifest: None,
            val_manifest: None,
            out_dir: PathBuf::from("runs/train"),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serialises")
    }

    pub fn model_spec(&self) -> Result<ModelSpec, TrainError> {
        Ok(ModelSpec::build(self.model, NUM_CLASSES, self.width_mult, self.image_side)?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 2 for batch normalisation".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        self.adam.validate()?;
        self.augment.validate()?;
        self.model_spec()?;
        Ok(())
    }

    /// One-line summary printed before a run starts.
    pub fn echo(&self) -> String {
        format!(
            "epochs={} image={} batch={} opt={} lr={} augment={} model={} width={} precision={} seed={}",
            self.epochs,
            self.image_side,
            self.batch_size,
            self.optimizer,
            self.learning_rate,
            if self.augment.enabled { "on" } else { "off" },
            self.model,
            self.width_mult,
            self.precision.as_str(),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_table() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.epochs, c.image_side, c.batch_size, c.optimizer, c.learning_rate),
            (20, 224, 32, Optimizer::Adam, 0.001)
        );
        assert!(c.augment.enabled);
        assert!(c.echo().starts_with("epochs=20 image=224 batch=32 opt=adam lr=0.001 augment=on"));
        c.validate().unwrap();
    }

    #[test]
    fn toml_sections_override_defaults() {
        let c = TrainConfig::from_toml(
            "epochs = 3\nmodel = \"custom_cnn\"\nprecision = \"f64\"\n\n[augment]\nenabled = false\n\n[adam]\nbeta1 = 0.8\n",
        )
        .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.model, ModelName::CustomCnn);
        assert_eq!(c.precision, Dtype::F64);
        assert!(!c.augment.enabled);
        assert_eq!(c.augment.rotation_deg, 30.0);
        assert_eq!(c.adam.beta1, 0.8);
        assert_eq!(c.adam.beta2, 0.999);
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(TrainConfig::from_toml("epoch = 3").is_err());
        let c = TrainConfig { batch_size: 1, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { width_mult: 0.3, ..TrainConfig::default() };
        assert!(c.validate().is_err());
    }
}
