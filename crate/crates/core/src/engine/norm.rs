use super::tape::{grad_slot, Node, Op, Tape, Var};
use super::tensor::{Real, Tensor};
use super::EngineError;

/// Whether batch statistics or running statistics drive normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Per-channel running mean/variance tracked by a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

impl<T: Real> Tape<T> {
    /// Batch normalisation over (N, H, W) per channel.
    ///
    /// Train mode normalises with the biased batch variance and folds the
    /// unbiased variance into `running` as
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut RunningStats<T>,
        mode: NormMode,
        config: BatchNormConfig,
    ) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let gi = self.resolve(gamma)?;
        let bi = self.resolve(beta)?;
        let xv = &self.nodes[xi].value;
        let (n, c, h, w) = xv.dims4()?;
        for (name, idx) in [("gamma", gi), ("beta", bi)] {
            if self.nodes[idx].value.shape() != [c] {
                return Err(EngineError::ShapeMismatch(format!(
                    "batch_norm2d {name} must have shape [{c}], got {:?}",
                    self.nodes[idx].value.shape()
                )));
            }
        }
        if running.mean.len() != c || running.var.len() != c {
            return Err(EngineError::ShapeMismatch(format!(
                "batch_norm2d running stats sized for {} channels, input has {c}",
                running.mean.len()
            )));
        }
        let hw = h * w;
        let count = n * hw;
        let train = mode == NormMode::Train;
        if train && count < 2 {
            return Err(EngineError::DegenerateBatch { per_channel: count });
        }

        let eps = T::lit(config.epsilon);
        let momentum = T::lit(config.momentum);
        let xd = xv.data();
        let gd = self.nodes[gi].value.data();
        let bd = self.nodes[bi].value.data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); c];
        let m = T::from_usize(count).unwrap();

        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = T::zero();
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for v in &xd[base..base + hw] {
                        sum += *v;
                    }
                }
                let mean = sum / m;
                let mut sq = T::zero();
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for v in &xd[base..base + hw] {
                        let d = *v - mean;
                        sq += d * d;
                    }
                }
                let var = sq / m;
                let unbiased = sq / (m - T::one());
                running.mean[ch] = (T::one() - momentum) * running.mean[ch] + momentum * mean;
                running.var[ch] = (T::one() - momentum) * running.var[ch] + momentum * unbiased;
                (mean, var)
            } else {
                (running.mean[ch], running.var[ch])
            };
            let istd = T::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for p in base..base + hw {
                    let nv = (xd[p] - mean) * istd;
                    xhat[p] = nv;
                    out[p] = gd[ch] * nv + bd[ch];
                }
            }
        }

        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(
            value,
            Op::BatchNorm2d {
                x: xi,
                gamma: gi,
                beta: bi,
                xhat,
                inv_std,
                train,
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batch_norm_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    gamma: usize,
    beta: usize,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
) {
    let (n, c, h, w) = nodes[x].value.dims4().expect("validated in forward");
    let hw = h * w;
    let m = T::from_usize(n * hw).unwrap();
    let gd = nodes[gamma].value.data();

    // Per-channel Σ dy and Σ dy·x̂ feed all three gradients.
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for ch in 0..c {
        for s in 0..n {
            let base = (s * c + ch) * hw;
            for p in base..base + hw {
                sum_g[ch] += g[p];
                sum_gx[ch] += g[p] * xhat[p];
            }
        }
    }

    if let Some(dgamma) = grad_slot(nodes, grads, gamma) {
        dgamma.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += *b);
    }
    if let Some(dbeta) = grad_slot(nodes, grads, beta) {
        dbeta.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += *b);
    }
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for ch in 0..c {
            let scale = gd[ch] * inv_std[ch];
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for p in base..base + hw {
                    dx[p] += if train {
                        // dx = γ·σ⁻¹/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
                        scale / m * (m * g[p] - sum_g[ch] - xhat[p] * sum_gx[ch])
                    } else {
                        scale * g[p]
                    };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(values: &[f64], n: usize, c: usize, hw: usize, ch: usize) -> (f64, f64) {
        let mut xs = Vec::new();
        for s in 0..n {
            let base = (s * c + ch) * hw;
            xs.extend_from_slice(&values[base..base + hw]);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        (mean, var)
    }

    fn input() -> Tensor<f64> {
        Tensor::from_fn(&[4, 3, 5, 5], |i| ((i * 7919) % 113) as f64 / 9.0 - 3.0)
    }

    #[test]
    fn train_mode_standardises_each_channel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(input());
        let g = tape.constant(Tensor::full(&[3], 1.0));
        let b = tape.constant(Tensor::zeros(&[3]));
        let mut rs = RunningStats::new(3);
        let y = tape
            .batch_norm2d(x, g, b, &mut rs, NormMode::Train, BatchNormConfig::default())
            .unwrap();
        for ch in 0..3 {
            let (mean, var) = moments(tape.value(y).data(), 4, 3, 25, ch);
            assert!(mean.abs() < 1e-6);
            // ε = 1e-5 shrinks the variance slightly below one.
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
    }

    #[test]
    fn affine_parameters_shift_and_scale() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(input());
        let g = tape.constant(Tensor::full(&[3], 2.0));
        let b = tape.constant(Tensor::full(&[3], 3.0));
        let mut rs = RunningStats::new(3);
        let cfg = BatchNormConfig {
            momentum: 0.1,
            epsilon: 0.0,
        };
        let y = tape
            .batch_norm2d(x, g, b, &mut rs, NormMode::Train, cfg)
            .unwrap();
        for ch in 0..3 {
            let (mean, var) = moments(tape.value(y).data(), 4, 3, 25, ch);
            assert!((mean - 3.0).abs() < 1e-6);
            assert!((var - 4.0).abs() < 1e-5);
        }
    }

    #[test]
    fn running_stats_follow_momentum_and_eval_uses_them() {
        let x_t = input();
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(x_t.clone());
        let g = tape.constant(Tensor::full(&[3], 1.0));
        let b = tape.constant(Tensor::zeros(&[3]));
        let mut rs = RunningStats::new(3);
        tape.batch_norm2d(x, g, b, &mut rs, NormMode::Train, BatchNormConfig::default())
            .unwrap();
        let (mean0, var0) = moments(x_t.data(), 4, 3, 25, 0);
        let m = 100.0;
        assert!((rs.mean[0] - 0.1 * mean0).abs() < 1e-12);
        assert!((rs.var[0] - (0.9 + 0.1 * var0 * m / (m - 1.0))).abs() < 1e-12);

        let before = rs.clone();
        let y = tape
            .batch_norm2d(x, g, b, &mut rs, NormMode::Eval, BatchNormConfig::default())
            .unwrap();
        assert_eq!(rs, before);
        let expect = (x_t.data()[0] - rs.mean[0]) / (rs.var[0] + 1e-5).sqrt();
        assert!((tape.value(y).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn single_value_per_channel_is_degenerate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
        let g = tape.constant(Tensor::full(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let mut rs = RunningStats::new(2);
        let err = tape
            .batch_norm2d(x, g, b, &mut rs, NormMode::Train, BatchNormConfig::default())
            .unwrap_err();
        assert!(matches!(err, EngineError::DegenerateBatch { per_channel: 1 }));
        assert!(tape
            .batch_norm2d(x, g, b, &mut rs, NormMode::Eval, BatchNormConfig::default())
            .is_ok());
    }
}
