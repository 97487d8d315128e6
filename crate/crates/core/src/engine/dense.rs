use super::tape::{grad_slot, Node, Op, Tape, Var};
use super::tensor::{Real, Tensor};
use super::EngineError;

/// Row-wise softmax with max-subtraction.
pub fn softmax_rows<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|v| (*v - max).exp()).collect();
        let mut z = T::zero();
        for e in &exps {
            z += *e;
        }
        out.extend(exps.into_iter().map(|e| e / z));
    }
    out
}

impl<T: Real> Tape<T> {
    /// `x·W + b` with x N×D, W D×K, b K.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, EngineError> {
        let (xi, wi, bi) = (self.resolve(x)?, self.resolve(weight)?, self.resolve(bias)?);
        let (n, d) = self.nodes[xi].value.dims2()?;
        let (dw, k) = self.nodes[wi].value.dims2()?;
        if dw != d || self.nodes[bi].value.shape() != [k] {
            return Err(EngineError::ShapeMismatch(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                self.nodes[xi].value.shape(),
                self.nodes[wi].value.shape(),
                self.nodes[bi].value.shape()
            )));
        }
        let mut out = Vec::with_capacity(n * k);
        let bd = self.nodes[bi].value.data();
        for _ in 0..n {
            out.extend_from_slice(bd);
        }
        T::gemm(
            n,
            d,
            k,
            T::one(),
            self.nodes[xi].value.data(),
            (d as isize, 1),
            self.nodes[wi].value.data(),
            (k as isize, 1),
            T::one(),
            &mut out,
            (k as isize, 1),
        );
        let value = Tensor::new(vec![n, k], out)?;
        self.push(
            value,
            Op::Linear {
                x: xi,
                weight: wi,
                bias: bi,
            },
        )
    }

    /// Mean negative log-likelihood of `targets` under softmax(`logits`).
    /// The probabilities stay cached on the node.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, EngineError> {
        let li = self.resolve(logits)?;
        let (n, k) = self.nodes[li].value.dims2()?;
        if targets.len() != n {
            return Err(EngineError::ShapeMismatch(format!(
                "softmax_cross_entropy: {n} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(EngineError::InvalidTarget {
                target: bad,
                classes: k,
            });
        }
        if n == 0 {
            return Err(EngineError::ShapeMismatch(
                "softmax_cross_entropy on an empty batch".into(),
            ));
        }
        let ld = self.nodes[li].value.data();
        let probs = softmax_rows(ld, k);
        let mut total = T::zero();
        for (row, &t) in ld.chunks(k).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row {
                z += (*v - max).exp();
            }
            total += z.ln() - (row[t] - max);
        }
        let loss = total / T::from_usize(n).unwrap();
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits: li,
                probs,
                targets: targets.to_vec(),
            },
        )
    }
}

pub(crate) fn linear_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    weight: usize,
    bias: usize,
) {
    let (n, d) = nodes[x].value.dims2().expect("validated in forward");
    let k = nodes[bias].value.len();
    let xd = nodes[x].value.data();
    let wd = nodes[weight].value.data();
    if let Some(dx) = grad_slot(nodes, grads, x) {
        // dX += G · Wᵀ
        T::gemm(
            n,
            k,
            d,
            T::one(),
            g,
            (k as isize, 1),
            wd,
            (1, k as isize),
            T::one(),
            dx,
            (d as isize, 1),
        );
    }
    if let Some(dw) = grad_slot(nodes, grads, weight) {
        // dW += Xᵀ · G
        T::gemm(
            d,
            n,
            k,
            T::one(),
            xd,
            (1, d as isize),
            g,
            (k as isize, 1),
            T::one(),
            dw,
            (k as isize, 1),
        );
    }
    if let Some(db) = grad_slot(nodes, grads, bias) {
        for row in g.chunks(k) {
            db.iter_mut().zip(row).for_each(|(a, b)| *a += *b);
        }
    }
}

pub(crate) fn softmax_cross_entropy_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    logits: usize,
    probs: &[T],
    targets: &[usize],
) {
    let (n, k) = nodes[logits].value.dims2().expect("validated in forward");
    let scale = g[0] / T::from_usize(n).unwrap();
    if let Some(dl) = grad_slot(nodes, grads, logits) {
        for (r, &t) in targets.iter().enumerate() {
            for c in 0..k {
                let onehot = if c == t { T::one() } else { T::zero() };
                dl[r * k + c] += scale * (probs[r * k + c] - onehot);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_k() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::full(&[5, 4], 0.3));
        let loss = tape.softmax_cross_entropy(l, &[0, 1, 2, 3, 0]).unwrap();
        assert!((tape.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn huge_margin_is_stable() {
        let mut tape = Tape::<f32>::new();
        let l = tape.constant(Tensor::new(vec![1, 4], vec![1000.0, 0.0, 0.0, 0.0]).unwrap());
        let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
        let v = tape.value(loss).data()[0];
        assert!(v.is_finite() && v.abs() < 1e-6);
        let probs = tape.cached_probabilities(loss).unwrap();
        assert!(probs.iter().all(|p| p.is_finite()));
    }

    #[test]
    fn rejects_out_of_range_target() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            tape.softmax_cross_entropy(l, &[1, 4]),
            Err(EngineError::InvalidTarget { target: 4, classes: 4 })
        ));
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let mut tape = Tape::<f64>::new();
        let xt = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.5);
        let x = tape.constant(xt.clone());
        let eye = tape.constant(Tensor::from_fn(&[4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 }));
        let zero_b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.linear(x, eye, zero_b).unwrap();
        assert_eq!(tape.value(y), &xt);

        let zero_w = tape.constant(Tensor::zeros(&[4, 2]));
        let b = tape.constant(Tensor::new(vec![2], vec![1.5, -2.0]).unwrap());
        let y = tape.linear(x, zero_w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, -2.0, 1.5, -2.0, 1.5, -2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 - 11.0).collect();
        for row in softmax_rows(&logits, 4).chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
