use rand::{Rng, RngCore};

use super::tape::{grad_slot, Node, Op, Tape, Var};
use super::tensor::{Real, Tensor};
use super::EngineError;

/// Logistic function without overflow for large |x|.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<(), EngineError> {
    if a.shape() != b.shape() {
        return Err(EngineError::ShapeMismatch(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn silu(&mut self, x: Var) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let out = xv.data().iter().map(|&v| v * sigmoid(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(value, Op::Silu { x: xi })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let out = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(value, Op::Sigmoid { x: xi })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (ai, bi) = (self.resolve(a)?, self.resolve(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        same_shape(av, bv, "add")?;
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| *x + *y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push(value, Op::Add { a: ai, b: bi })
    }

    /// Elementwise product of two equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (ai, bi) = (self.resolve(a)?, self.resolve(b)?);
        let (av, bv) = (&self.nodes[ai].value, &self.nodes[bi].value);
        same_shape(av, bv, "mul")?;
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| *x * *y).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.push(value, Op::Mul { a: ai, b: bi })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let mut acc = T::zero();
        for v in self.nodes[xi].value.data() {
            acc += *v;
        }
        self.push(Tensor::scalar(acc), Op::Sum { x: xi })
    }

    /// `x[n,c,:,:] · gate[n,c]` for x N×C×H×W and gate N×C.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var, EngineError> {
        let (xi, gi) = (self.resolve(x)?, self.resolve(gate)?);
        let xv = &self.nodes[xi].value;
        let (n, c, h, w) = xv.dims4()?;
        if self.nodes[gi].value.shape() != [n, c] {
            return Err(EngineError::ShapeMismatch(format!(
                "scale_channels gate must be [{n}, {c}], got {:?}",
                self.nodes[gi].value.shape()
            )));
        }
        let gd = self.nodes[gi].value.data();
        let hw = h * w;
        let out = xv
            .data()
            .chunks(hw)
            .zip(gd)
            .flat_map(|(plane, g)| plane.iter().map(move |v| *v * *g))
            .collect();
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(value, Op::ScaleChannels { x: xi, gate: gi })
    }

    /// `x[n,:,y,x] · gate[n,0,y,x]` for x N×C×H×W and gate N×1×H×W.
    pub fn scale_pixels(&mut self, x: Var, gate: Var) -> Result<Var, EngineError> {
        let (xi, gi) = (self.resolve(x)?, self.resolve(gate)?);
        let xv = &self.nodes[xi].value;
        let (n, c, h, w) = xv.dims4()?;
        if self.nodes[gi].value.shape() != [n, 1, h, w] {
            return Err(EngineError::ShapeMismatch(format!(
                "scale_pixels gate must be [{n}, 1, {h}, {w}], got {:?}",
                self.nodes[gi].value.shape()
            )));
        }
        let gd = self.nodes[gi].value.data();
        let hw = h * w;
        let xd = xv.data();
        let mut out = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for p in 0..hw {
                    out[base + p] = xd[base + p] * gd[s * hw + p];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        self.push(value, Op::ScalePixels { x: xi, gate: gi })
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1/(1 − rate)`. Only meant for train mode.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut dyn RngCore) -> Result<Var, EngineError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(EngineError::ShapeMismatch(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..xv.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let out = xv.data().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(value, Op::Dropout { x: xi, mask })
    }
}

pub(crate) fn silu_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
) {
    let xd = nodes[x].value.data();
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for ((d, gv), &v) in dx.iter_mut().zip(g).zip(xd) {
            let s = sigmoid(v);
            *d += *gv * s * (T::one() + v * (T::one() - s));
        }
    }
}

pub(crate) fn sigmoid_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    out: &Tensor<T>,
) {
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for ((d, gv), &y) in dx.iter_mut().zip(g).zip(out.data()) {
            *d += *gv * y * (T::one() - y);
        }
    }
}

pub(crate) fn add_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    a: usize,
    b: usize,
) {
    for i in [a, b] {
        if let Some(d) = grad_slot(nodes, grads, i) {
            d.iter_mut().zip(g).for_each(|(x, y)| *x += *y);
        }
    }
}

pub(crate) fn mul_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    a: usize,
    b: usize,
) {
    for (target, other) in [(a, b), (b, a)] {
        let od = nodes[other].value.data();
        if let Some(d) = grad_slot(nodes, grads, target) {
            for ((x, gv), o) in d.iter_mut().zip(g).zip(od) {
                *x += *gv * *o;
            }
        }
    }
}

pub(crate) fn sum_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
) {
    if let Some(d) = grad_slot(nodes, grads, x) {
        d.iter_mut().for_each(|v| *v += g[0]);
    }
}

pub(crate) fn scale_channels_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    gate: usize,
) {
    let (_, _, h, w) = nodes[x].value.dims4().expect("validated in forward");
    let hw = h * w;
    let xd = nodes[x].value.data();
    let gd = nodes[gate].value.data();
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for (plane, (gp, gate_v)) in dx.chunks_mut(hw).zip(g.chunks(hw).zip(gd)) {
            plane.iter_mut().zip(gp).for_each(|(d, gv)| *d += *gv * *gate_v);
        }
    }
    if let Some(dgate) = grad_slot(nodes, grads, gate) {
        for (dg, (gp, xp)) in dgate.iter_mut().zip(g.chunks(hw).zip(xd.chunks(hw))) {
            let mut acc = T::zero();
            for (gv, xv) in gp.iter().zip(xp) {
                acc += *gv * *xv;
            }
            *dg += acc;
        }
    }
}

pub(crate) fn scale_pixels_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    gate: usize,
) {
    let (n, c, h, w) = nodes[x].value.dims4().expect("validated in forward");
    let hw = h * w;
    let xd = nodes[x].value.data();
    let gd = nodes[gate].value.data();
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for p in 0..hw {
                    dx[base + p] += g[base + p] * gd[s * hw + p];
                }
            }
        }
    }
    if let Some(dgate) = grad_slot(nodes, grads, gate) {
        for s in 0..n {
            for p in 0..hw {
                let mut acc = T::zero();
                for ch in 0..c {
                    let i = (s * c + ch) * hw + p;
                    acc += g[i] * xd[i];
                }
                dgate[s * hw + p] += acc;
            }
        }
    }
}

pub(crate) fn dropout_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    mask: &[T],
) {
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for ((d, gv), m) in dx.iter_mut().zip(g).zip(mask) {
            *d += *gv * *m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn silu_fixed_points() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![3], vec![0.0, 20.0, -40.0]).unwrap());
        let y = tape.silu(x).unwrap();
        let out = tape.value(y).data();
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 20.0).abs() < 1e-6);
        assert!(out[2].abs() < 1e-12);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut tape = Tape::<f64>::new();
        let t = Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5);
        let x = tape.leaf(t.clone(), true);
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0; 6]);

        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t.clone(), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let grads = tape.backward(s).unwrap();
        let expect: Vec<f64> = t.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.get(x).unwrap(), expect.as_slice());
    }

    #[test]
    fn add_rejects_broadcast() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(tape.add(a, b), Err(EngineError::ShapeMismatch(_))));
    }

    #[test]
    fn dropout_zero_fraction_is_near_rate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[10_000], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let zeros = tape.value(y).data().iter().filter(|v| **v == 0.0).count();
        let frac = zeros as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
        assert!(tape
            .value(y)
            .data()
            .iter()
            .all(|v| *v == 0.0 || *v == 2.0));
    }
}
