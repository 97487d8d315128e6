use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::config::TrainConfig;
use super::loader::{batches, ImageSet, LabeledImage};
use super::log::{curves_csv, parse_curves, EpochLog};
use super::TrainError;
use crate::data::{DatasetManifest, Split};
use crate::engine::{Real, Tape, Tensor};
use crate::models::{Checkpoint, CheckpointError, ForwardOptions, Model, Moments};

/// Loss is "diverged" above this multiple of the first batch's loss.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive diverged epochs before the run is stopped.
pub const DIVERGENCE_PATIENCE: usize = 3;

/// Training and validation images for one run.
pub struct TrainData {
    pub train: ImageSet,
    pub val: ImageSet,
}

impl TrainData {
    /// Train split of `manifest`; validation comes from `val` when given,
    /// otherwise from the test split.
    pub fn from_manifests(
        config: &TrainConfig,
        manifest: &DatasetManifest,
        val: Option<&DatasetManifest>,
    ) -> Result<Self, TrainError> {
        let train = LabeledImage::split(manifest, Split::Train)?;
        let val = match val {
            Some(v) if v.all_train => LabeledImage::from_records(v, v.records())?,
            Some(v) => LabeledImage::split(v, Split::Test)?,
            None if manifest.all_train => {
                return Err(TrainError::DataExhausted(
                    "all-train manifest needs a separate validation manifest".into(),
                ))
            }
            None => LabeledImage::split(manifest, Split::Test)?,
        };
        Self::new(config, train, val)
    }

    pub fn new(
        config: &TrainConfig,
        train: Vec<LabeledImage>,
        val: Vec<LabeledImage>,
    ) -> Result<Self, TrainError> {
        if train.is_empty() {
            return Err(TrainError::DataExhausted("training split is empty".into()));
        }
        if val.is_empty() {
            return Err(TrainError::DataExhausted("validation split is empty".into()));
        }
        Ok(TrainData {
            train: ImageSet::new(train, config.image_side, config.cache_images),
            val: ImageSet::new(val, config.image_side, config.cache_images),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub loss: f64,
    pub correct: usize,
}

/// Forward, backward and one Adam update on a single batch.
pub fn train_step<T: Real>(
    model: &mut Model<T>,
    adam: &mut AdamState<T>,
    batch: Tensor<T>,
    labels: &[usize],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepResult, TrainError> {
    let mut tape = Tape::new();
    let vars = model.params.attach(&mut tape);
    let input = tape.constant(batch);
    let logits = model.forward(&mut tape, &vars, input, &ForwardOptions::train(), rng)?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    let value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
    let correct = count_correct(tape.value(logits), labels);
    let grads = tape.backward(loss)?;
    let g: Vec<Option<&[T]>> = vars.iter().map(|&v| grads.get(v)).collect();
    adam.step(&mut model.params, &g, lr)?;
    Ok(StepResult {
        loss: value,
        correct,
    })
}

fn argmax(row: &[f64]) -> usize {
    // first maximum wins; NaN sorts above everything under total_cmp
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if v.total_cmp(&row[best]).is_gt() {
            best = i;
        }
    }
    best
}

fn count_correct<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> usize {
    let k = logits.len() / labels.len().max(1);
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
            argmax(&row) == y
        })
        .count()
}

/// Eval-mode output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
    /// Negative log-likelihood of the true class, when one is known.
    pub loss: f64,
}

/// Softmax in f64 via log-sum-exp.
fn predictions<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Vec<Prediction> {
    let n = labels.len();
    let k = logits.len() / n.max(1);
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| {
            let z: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            let probabilities: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
            Prediction {
                label: argmax(&z),
                loss: lse - z[y.min(k - 1)],
                probabilities,
            }
        })
        .collect()
}

/// Eval-mode predictions for every image of `set`, in order. The model is
/// not modified.
pub fn predict_set<T: Real>(
    model: &Model<T>,
    set: &ImageSet,
    batch_size: usize,
) -> Result<Vec<Prediction>, TrainError> {
    let order: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for idx in order.chunks(batch_size.max(1)) {
        let (x, y) = set.batch::<T>(idx, None)?;
        let logits = model.predict(x)?;
        out.extend(predictions(&logits, &y));
    }
    Ok(out)
}

fn stream(tag: &[u8], parts: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(tag);
    for p in parts {
        h.update(p.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Visiting order of the training set in `epoch` (0-based).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(b"shuffle", &[seed, epoch as u64]));
    order
}

/// Everything besides weights and moments needed to continue a run exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    /// `curves.csv` text; keeps non-finite losses intact.
    curves: String,
    initial_loss_bits: Option<u64>,
    bad_epochs: usize,
    best_epoch: Option<usize>,
    best_val_accuracy: Option<f64>,
}

struct Run<'a, T> {
    config: &'a TrainConfig,
    data: &'a TrainData,
    model: Model<T>,
    adam: AdamState<T>,
    logs: Vec<EpochLog>,
    initial_loss: Option<f64>,
    bad_epochs: usize,
    best_epoch: Option<usize>,
    best_val_accuracy: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub logs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub last_checkpoint: PathBuf,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
}

impl<T: Real> Run<'_, T> {
    fn epochs_done(&self) -> usize {
        self.logs.len()
    }

    fn train_epoch(&mut self, epoch: usize) -> Result<(f64, f64), TrainError> {
        let c = self.config;
        let order = epoch_order(self.data.train.len(), c.seed, epoch);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, idx) in batches(&order, c.batch_size).into_iter().enumerate() {
            let (x, y) = self.data.train.batch::<T>(idx, Some((&c.augment, c.seed, epoch as u64)))?;
            let mut rng = stream(b"dropout", &[c.seed, epoch as u64, b as u64]);
            let step = train_step(&mut self.model, &mut self.adam, x, &y, c.learning_rate, &mut rng)?;
            self.initial_loss.get_or_insert(step.loss);
            loss_sum += step.loss * idx.len() as f64;
            correct += step.correct;
        }
        let n = order.len() as f64;
        Ok((loss_sum / n, correct as f64 / n))
    }

    fn validate(&self) -> Result<(f64, f64), TrainError> {
        let preds = predict_set(&self.model, &self.data.val, self.config.batch_size)?;
        let n = preds.len() as f64;
        let loss = preds.iter().map(|p| p.loss).sum::<f64>() / n;
        let correct = preds
            .iter()
            .zip(self.data.val.samples())
            .filter(|(p, s)| p.label == s.label)
            .count();
        Ok((loss, correct as f64 / n))
    }

    fn trainer_state(&self) -> serde_json::Value {
        serde_json::to_value(TrainerState {
            curves: curves_csv(&self.logs),
            initial_loss_bits: self.initial_loss.map(f64::to_bits),
            bad_epochs: self.bad_epochs,
            best_epoch: self.best_epoch,
            best_val_accuracy: self.best_val_accuracy,
        })
        .expect("trainer state serialises")
    }

    /// Writes `epoch_NNN.ckpt` and `last.ckpt` (and `best.ckpt` when asked)
    /// plus `curves.csv`. Returns the path of `last.ckpt`.
    fn save(&mut self, best: bool) -> Result<PathBuf, TrainError> {
        let dir = &self.config.out_dir;
        let epoch = self.epochs_done();
        let mut metrics = BTreeMap::new();
        if let Some(l) = self.logs.last() {
            metrics.insert("train_loss".into(), l.train_loss);
            metrics.insert("train_accuracy".into(), l.train_accuracy);
            metrics.insert("val_loss".into(), l.val_loss);
            metrics.insert("val_accuracy".into(), l.val_accuracy);
        }
        let ckpt = Checkpoint {
            model: self.model.clone(),
            epoch,
            adam_step: self.adam.t,
            moments: Some(Moments {
                m: self.adam.m.clone(),
                v: self.adam.v.clone(),
            }),
            metrics,
            trainer_state: self.trainer_state(),
        };
        let bytes = ckpt.to_bytes();
        write_atomic(&dir.join(checkpoint_name(epoch)), &bytes)?;
        let last = dir.join("last.ckpt");
        write_atomic(&last, &bytes)?;
        if best {
            write_atomic(&dir.join("best.ckpt"), &bytes)?;
        }
        write_atomic(&dir.join("curves.csv"), curves_csv(&self.logs).as_bytes())?;
        Ok(last)
    }

    fn run(
        mut self,
        on_epoch: &mut dyn FnMut(&EpochLog),
    ) -> Result<TrainOutcome<T>, TrainError> {
        let c = self.config;
        fs::create_dir_all(&c.out_dir)
            .map_err(|e| TrainError::Io(format!("{}: {e}", c.out_dir.display())))?;
        let mut last = c.out_dir.join("last.ckpt");
        if self.epochs_done() == 0 {
            last = self.save(false)?;
        }
        for epoch in self.epochs_done()..c.epochs {
            let started = Instant::now();
            let (train_loss, train_accuracy) = self.train_epoch(epoch)?;
            let (val_loss, val_accuracy) = self.validate()?;
            let log = EpochLog {
                epoch: epoch + 1,
                train_loss,
                train_accuracy,
                val_loss,
                val_accuracy,
                wall_time_s: if c.log_wall_time { started.elapsed().as_secs_f64() } else { 0.0 },
            };
            on_epoch(&log);
            self.logs.push(log);

            let initial = self.initial_loss.unwrap_or(f64::INFINITY);
            let diverged = !train_loss.is_finite() || train_loss > DIVERGENCE_FACTOR * initial;
            self.bad_epochs = if diverged { self.bad_epochs + 1 } else { 0 };
            let best = self.best_val_accuracy.is_none_or(|b| val_accuracy > b);
            if best {
                self.best_val_accuracy = Some(val_accuracy);
                self.best_epoch = Some(epoch + 1);
            }
            last = self.save(best)?;
            if self.bad_epochs >= DIVERGENCE_PATIENCE {
                return Err(TrainError::DivergenceDetected {
                    epoch: epoch + 1,
                    loss: train_loss,
                });
            }
        }
        Ok(TrainOutcome {
            model: self.model,
            logs: self.logs,
            best_epoch: self.best_epoch,
            last_checkpoint: last,
        })
    }
}

/// Trains from a fresh initialisation seeded by `config.seed`, writing
/// checkpoints and `curves.csv` to `config.out_dir`. `on_epoch` sees each
/// log as it is produced.
pub fn run_training<T: Real>(
    config: &TrainConfig,
    data: &TrainData,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    let model = Model::<T>::new(config.model_spec()?, config.seed)?;
    let adam = AdamState::new(&model.params, config.adam);
    Run {
        config,
        data,
        model,
        adam,
        logs: Vec::new(),
        initial_loss: None,
        bad_epochs: 0,
        best_epoch: None,
        best_val_accuracy: None,
    }
    .run(on_epoch)
}

/// Continues the run saved in `checkpoint` up to `config.epochs`.
pub fn resume<T: Real>(
    checkpoint: &Path,
    config: &TrainConfig,
    data: &TrainData,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    let spec = config.model_spec()?;
    let ckpt = Checkpoint::<T>::load_expecting(checkpoint, &spec.spec_hash())?;
    let corrupt = |msg: String| TrainError::Checkpoint(CheckpointError::Corrupt(msg));
    let moments = ckpt
        .moments
        .ok_or_else(|| corrupt("checkpoint holds no optimizer state".into()))?;
    let state: TrainerState = serde_json::from_value(ckpt.trainer_state)
        .map_err(|e| corrupt(format!("trainer state: {e}")))?;
    let logs = parse_curves(&state.curves).map_err(corrupt)?;
    if logs.len() != ckpt.epoch {
        return Err(corrupt(format!(
            "{} logged epochs in a checkpoint of epoch {}",
            logs.len(),
            ckpt.epoch
        )));
    }
    let adam = AdamState {
        config: config.adam,
        m: moments.m,
        v: moments.v,
        t: ckpt.adam_step,
    };
    Run {
        config,
        data,
        model: ckpt.model,
        adam,
        logs,
        initial_loss: state.initial_loss_bits.map(f64::from_bits),
        bad_epochs: state.bad_epochs,
        best_epoch: state.best_epoch,
        best_val_accuracy: state.best_val_accuracy,
    }
    .run(on_epoch)
}
