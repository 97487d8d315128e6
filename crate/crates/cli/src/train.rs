use std::fs;
use std::path::PathBuf;

use clap::Args;
use tumorgrade::data::DatasetManifest;
use tumorgrade::engine::{Dtype, Real};
use tumorgrade::models::ModelName;
use tumorgrade::train::{resume, run_training, TrainConfig, TrainData};

use crate::failure::Failure;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (TOML); flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub val_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model: Option<ModelName>,
    #[arg(long)]
    pub width_mult: Option<f64>,
    #[arg(long)]
    pub precision: Option<Dtype>,
    /// Turn augmentation off.
    #[arg(long)]
    pub no_augment: bool,
    /// Log wall time as 0 so curves.csv is comparable across runs.
    #[arg(long)]
    pub no_wall_time: bool,
    /// Continue from this checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

impl TrainArgs {
    pub fn effective_config(&self) -> Result<TrainConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        if let Some(v) = &self.manifest {
            c.manifest = Some(v.clone());
        }
        if let Some(v) = &self.val_manifest {
            c.val_manifest = Some(v.clone());
        }
        if let Some(v) = &self.out_dir {
            c.out_dir = v.clone();
        }
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.image_side = self.image_side.unwrap_or(c.image_side);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.learning_rate = self.lr.unwrap_or(c.learning_rate);
        c.seed = self.seed.unwrap_or(c.seed);
        c.model = self.model.unwrap_or(c.model);
        c.width_mult = self.width_mult.unwrap_or(c.width_mult);
        c.precision = self.precision.unwrap_or(c.precision);
        if self.no_augment {
            c.augment.enabled = false;
        }
        if self.no_wall_time {
            c.log_wall_time = false;
        }
        Ok(c)
    }
}

fn run<T: Real>(config: &TrainConfig, data: &TrainData, resume_from: Option<&PathBuf>) -> Result<(), Failure> {
    let mut on_epoch = |log: &tumorgrade::train::EpochLog| println!("{}", log.summary());
    let outcome = match resume_from {
        Some(ckpt) => resume::<T>(ckpt, config, data, &mut on_epoch)?,
        None => run_training::<T>(config, data, &mut on_epoch)?,
    };
    match outcome.best_epoch {
        Some(e) => println!("done: best val_acc at epoch {e}; last checkpoint {}", outcome.last_checkpoint.display()),
        None => println!("done: no epochs run; checkpoint {}", outcome.last_checkpoint.display()),
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let config = args.effective_config()?;
    println!("{}", config.echo());
    config.validate()?;
    let manifest_path = config
        .manifest
        .clone()
        .ok_or_else(|| Failure::validation("ConfigError", "no manifest given (--manifest)"))?;
    let manifest = DatasetManifest::load(&manifest_path)?;
    let val = config.val_manifest.as_deref().map(DatasetManifest::load).transpose()?;
    let data = TrainData::from_manifests(&config, &manifest, val.as_ref())?;
    println!("train images: {}  validation images: {}", data.train.len(), data.val.len());

    fs::create_dir_all(&config.out_dir).map_err(|e| Failure::io(&config.out_dir, e))?;
    let snapshot = config.out_dir.join("config.toml");
    fs::write(&snapshot, config.to_toml()).map_err(|e| Failure::io(&snapshot, e))?;

    match config.precision {
        Dtype::F32 => run::<f32>(&config, &data, args.resume.as_ref()),
        Dtype::F64 => run::<f64>(&config, &data, args.resume.as_ref()),
    }
}
