//! Central finite-difference verification of the backward pass.
//!
//! The numeric side only ever runs forward passes, so it stays independent
//! of the analytic gradients it judges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::norm::{BatchNormConfig, NormMode, RunningStats};
use super::tape::{OpKind, Tape, Var};
use super::tensor::Tensor;
use super::EngineError;

pub const DEFAULT_STEP: f64 = 1e-6;

/// Gradients smaller than this in magnitude are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Which coordinates of each input get checked.
#[derive(Clone, Debug)]
pub enum Coordinates {
    All,
    /// Up to this many distinct coordinates per input, drawn with the seed.
    Sample { per_input: usize, seed: u64 },
    /// Explicit `(input, flat index)` pairs.
    Pairs(Vec<(usize, usize)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckOutcome {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

/// Compares backward-pass gradients of `build` against central differences.
///
/// `build` receives a fresh tape and one leaf per input and must return a
/// scalar. It is called once for the analytic pass and twice per checked
/// coordinate, so it must be deterministic.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    coords: Coordinates,
    step: f64,
    perturb: Option<OpKind>,
    build: F,
) -> Result<(usize, f64), EngineError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, EngineError>,
{
    let mut tape = Tape::<f64>::new();
    tape.set_backward_perturbation(perturb);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| grads.get(*v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |which: usize, coord: usize, delta: f64| -> Result<f64, EngineError> {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[coord] += delta;
                }
                tape.leaf(t, true)
            })
            .collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let picks: Vec<(usize, usize)> = match coords {
        Coordinates::All => inputs
            .iter()
            .enumerate()
            .flat_map(|(which, t)| (0..t.len()).map(move |c| (which, c)))
            .collect(),
        Coordinates::Sample { per_input, seed } => inputs
            .iter()
            .enumerate()
            .flat_map(|(which, t)| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed ^ (which as u64).wrapping_mul(0x9E37));
                rand::seq::index::sample(&mut rng, t.len(), per_input.min(t.len()))
                    .into_iter()
                    .map(move |c| (which, c))
            })
            .collect(),
        Coordinates::Pairs(pairs) => pairs,
    };

    let mut worst = 0.0f64;
    for &(which, coord) in &picks {
        let plus = eval(which, coord, step)?;
        let minus = eval(which, coord, -step)?;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[which][coord], numeric);
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    Ok((picks.len(), worst))
}

/// `Σ y ⊙ r` for a fixed random `r`; plain sums hide errors in ops whose
/// outputs are translation invariant (batch norm).
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, EngineError> {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let r = tape.constant(Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)));
    let prod = tape.mul(y, r)?;
    tape.sum(prod)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// One named finite-difference check with its tolerance.
pub struct OpCheck {
    pub op: OpKind,
    pub tolerance: f64,
    run: fn(u64, Option<OpKind>) -> Result<(usize, f64), EngineError>,
}

impl OpCheck {
    pub fn run(&self, seed: u64, perturb: Option<OpKind>) -> Result<GradCheckOutcome, EngineError> {
        let (checked, max_rel_error) = (self.run)(seed, perturb)?;
        Ok(GradCheckOutcome {
            name: self.op.name().to_string(),
            checked,
            max_rel_error,
            tolerance: self.tolerance,
        })
    }
}

/// Every differentiable engine op, each with its own fixture and tolerance.
pub fn op_checks() -> Vec<OpCheck> {
    vec![
        OpCheck {
            op: OpKind::Conv2d,
            tolerance: 1e-4,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    random_tensor(&[2, 3, 8, 8], &mut rng),
                    random_tensor(&[4, 3, 3, 3], &mut rng),
                    random_tensor(&[4], &mut rng),
                ];
                check_gradients(
                    &inputs,
                    Coordinates::Sample { per_input: 60, seed },
                    DEFAULT_STEP,
                    perturb,
                    |t, v| {
                        let a = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                        let b = t.conv2d(v[0], v[1], None, 2, 0)?;
                        let la = weighted_sum(t, a, seed)?;
                        let lb = t.sum(b)?;
                        t.add(la, lb)
                    },
                )
            },
        },
        OpCheck {
            op: OpKind::BatchNorm2d,
            tolerance: 1e-3,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    random_tensor(&[2, 3, 4, 4], &mut rng),
                    Tensor::from_fn(&[3], |_| rng.random_range(0.5..1.5)),
                    random_tensor(&[3], &mut rng),
                ];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let mut rs = RunningStats::new(3);
                    let y = t.batch_norm2d(
                        v[0],
                        v[1],
                        v[2],
                        &mut rs,
                        NormMode::Train,
                        BatchNormConfig::default(),
                    )?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::Silu,
            tolerance: 1e-6,
            run: |_, perturb| {
                let inputs = [Tensor::new(vec![5], vec![-2.0, -0.5, 0.0, 0.5, 2.0])?];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.silu(v[0])?;
                    t.sum(y)
                })
            },
        },
        OpCheck {
            op: OpKind::Sigmoid,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [Tensor::from_fn(&[12], |_| rng.random_range(-4.0..4.0))];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.sigmoid(v[0])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::MaxPool2d,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[2, 2, 6, 6], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let a = t.max_pool2d(v[0], 2, 2, 0)?;
                    let b = t.max_pool2d(v[0], 5, 1, 2)?;
                    let la = weighted_sum(t, a, seed)?;
                    let lb = weighted_sum(t, b, seed + 1)?;
                    t.add(la, lb)
                })
            },
        },
        OpCheck {
            op: OpKind::GlobalAvgPool,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[2, 3, 4, 5], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.global_avg_pool(v[0])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::Linear,
            tolerance: 1e-5,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    random_tensor(&[3, 5], &mut rng),
                    random_tensor(&[5, 4], &mut rng),
                    random_tensor(&[4], &mut rng),
                ];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.linear(v[0], v[1], v[2])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::SoftmaxCrossEntropy,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [Tensor::from_fn(&[3, 4], |_| rng.random_range(-2.0..2.0))];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    t.softmax_cross_entropy(v[0], &[2, 0, 3])
                })
            },
        },
        OpCheck {
            op: OpKind::ConcatChannels,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    random_tensor(&[2, 1, 3, 3], &mut rng),
                    random_tensor(&[2, 2, 3, 3], &mut rng),
                ];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.concat_channels(&[v[0], v[1], v[0]])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::Add,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[2, 3], &mut rng), random_tensor(&[2, 3], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.add(v[0], v[1])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::Mul,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[2, 3], &mut rng), random_tensor(&[2, 3], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.mul(v[0], v[1])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::Sum,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[7], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let sq = t.mul(v[0], v[0])?;
                    t.sum(sq)
                })
            },
        },
        OpCheck {
            op: OpKind::ScaleChannels,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[2, 3, 2, 2], &mut rng), random_tensor(&[2, 3], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.scale_channels(v[0], v[1])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::ScalePixels,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    random_tensor(&[2, 3, 2, 2], &mut rng),
                    random_tensor(&[2, 1, 2, 2], &mut rng),
                ];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.scale_pixels(v[0], v[1])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::ChannelMean,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[2, 3, 2, 2], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.channel_mean(v[0])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::ChannelMax,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[2, 3, 2, 2], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let y = t.channel_max(v[0])?;
                    weighted_sum(t, y, seed)
                })
            },
        },
        OpCheck {
            op: OpKind::Dropout,
            tolerance: 1e-6,
            run: |seed, perturb| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [random_tensor(&[4, 6], &mut rng)];
                check_gradients(&inputs, Coordinates::All, DEFAULT_STEP, perturb, |t, v| {
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD0);
                    let y = t.dropout(v[0], 0.5, &mut mask_rng)?;
                    weighted_sum(t, y, seed)
                })
            },
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_at_its_tolerance() {
        for check in op_checks() {
            let out = check.run(11, None).unwrap();
            assert!(out.passed(), "{} failed: {:?}", out.name, out);
        }
    }

    #[test]
    fn perturbed_backward_is_caught() {
        for check in op_checks() {
            let out = check.run(11, Some(check.op)).unwrap();
            assert!(!out.passed(), "{} perturbation went unnoticed", out.name);
        }
    }

    #[test]
    fn checks_cover_each_differentiable_op_once() {
        let ops: Vec<OpKind> = op_checks().iter().map(|c| c.op).collect();
        for kind in super::super::tape::ALL_OPS {
            let count = ops.iter().filter(|k| **k == kind).count();
            let expect = usize::from(kind != OpKind::Leaf);
            assert_eq!(count, expect, "{}", kind.name());
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-3);
    }
}
