use super::conv::conv_output_len;
use super::tape::{grad_slot, Node, Op, Tape, Var};
use super::tensor::{Real, Tensor};
use super::EngineError;

impl<T: Real> Tape<T> {
    /// Windowed maximum. Padding never wins; ties go to the first element in
    /// row-major window order.
    pub fn max_pool2d(
        &mut self,
        x: Var,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let (n, c, h, w) = xv.dims4()?;
        if kernel == 0 || padding >= kernel {
            return Err(EngineError::ShapeMismatch(format!(
                "max_pool2d needs padding < kernel, got kernel {kernel} padding {padding}"
            )));
        }
        let (Some(oh), Some(ow)) = (
            conv_output_len(h, kernel, stride, padding),
            conv_output_len(w, kernel, stride, padding),
        ) else {
            return Err(EngineError::ShapeMismatch(format!(
                "max_pool2d window {kernel} stride {stride} padding {padding} does not fit {h}×{w}"
            )));
        };
        let xd = xv.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(T, usize)> = None;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if best.is_none_or(|(v, _)| xd[idx] > v) {
                                best = Some((xd[idx], idx));
                            }
                        }
                    }
                    let (v, idx) = best.ok_or_else(|| {
                        EngineError::ShapeMismatch("max_pool2d window covers only padding".into())
                    })?;
                    out.push(v);
                    argmax.push(idx);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(value, Op::MaxPool2d { x: xi, argmax })
    }

    /// Spatial mean per channel: N×C×H×W → N×C.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let (n, c, h, w) = xv.dims4()?;
        let hw = h * w;
        if hw == 0 {
            return Err(EngineError::ShapeMismatch(
                "global_avg_pool needs H, W ≥ 1".into(),
            ));
        }
        let denom = T::from_usize(hw).unwrap();
        let out = xv
            .data()
            .chunks(hw)
            .map(|plane| {
                let mut s = T::zero();
                for v in plane {
                    s += *v;
                }
                s / denom
            })
            .collect();
        let value = Tensor::new(vec![n, c], out)?;
        self.push(value, Op::GlobalAvgPool { x: xi })
    }

    /// Concatenates N×C_i×H×W tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, EngineError> {
        let idx: Vec<usize> = xs
            .iter()
            .map(|v| self.resolve(*v))
            .collect::<Result<_, _>>()?;
        let Some(&first) = idx.first() else {
            return Err(EngineError::ShapeMismatch(
                "concat_channels needs at least one input".into(),
            ));
        };
        let (n, _, h, w) = self.nodes[first].value.dims4()?;
        let mut channels = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (ni, ci, hi, wi) = self.nodes[i].value.dims4()?;
            if (ni, hi, wi) != (n, h, w) {
                return Err(EngineError::ShapeMismatch(format!(
                    "concat_channels inputs disagree: {:?} vs {:?}",
                    self.nodes[first].value.shape(),
                    self.nodes[i].value.shape()
                )));
            }
            channels.push(ci);
        }
        let total: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for s in 0..n {
            for (&i, &ci) in idx.iter().zip(&channels) {
                let d = self.nodes[i].value.data();
                out.extend_from_slice(&d[s * ci * hw..(s + 1) * ci * hw]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], out)?;
        self.push(value, Op::ConcatChannels { xs: idx })
    }

    /// Mean over channels: N×C×H×W → N×1×H×W.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let (n, c, h, w) = xv.dims4()?;
        let hw = h * w;
        let xd = xv.data();
        let denom = T::from_usize(c).unwrap();
        let mut out = vec![T::zero(); n * hw];
        for s in 0..n {
            for p in 0..hw {
                let mut acc = T::zero();
                for ch in 0..c {
                    acc += xd[(s * c + ch) * hw + p];
                }
                out[s * hw + p] = acc / denom;
            }
        }
        let value = Tensor::new(vec![n, 1, h, w], out)?;
        self.push(value, Op::ChannelMean { x: xi })
    }

    /// Maximum over channels: N×C×H×W → N×1×H×W (first channel wins ties).
    pub fn channel_max(&mut self, x: Var) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let xv = &self.nodes[xi].value;
        let (n, c, h, w) = xv.dims4()?;
        let hw = h * w;
        let xd = xv.data();
        let mut out = vec![T::zero(); n * hw];
        let mut argmax = vec![0; n * hw];
        for s in 0..n {
            for p in 0..hw {
                let mut best = s * c * hw + p;
                for ch in 1..c {
                    let idx = (s * c + ch) * hw + p;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out[s * hw + p] = xd[best];
                argmax[s * hw + p] = best;
            }
        }
        let value = Tensor::new(vec![n, 1, h, w], out)?;
        self.push(value, Op::ChannelMax { x: xi, argmax })
    }
}

/// Routes each output gradient to the input position that produced it.
pub(crate) fn scatter_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    argmax: &[usize],
) {
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for (gv, &idx) in g.iter().zip(argmax) {
            dx[idx] += *gv;
        }
    }
}

pub(crate) fn global_avg_pool_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
) {
    let (_, _, h, w) = nodes[x].value.dims4().expect("validated in forward");
    let hw = h * w;
    let denom = T::from_usize(hw).unwrap();
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for (plane, gv) in dx.chunks_mut(hw).zip(g) {
            let share = *gv / denom;
            plane.iter_mut().for_each(|v| *v += share);
        }
    }
}

pub(crate) fn concat_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    xs: &[usize],
) {
    let (n, _, h, w) = nodes[xs[0]].value.dims4().expect("validated in forward");
    let hw = h * w;
    let channels: Vec<usize> = xs.iter().map(|&i| nodes[i].value.shape()[1]).collect();
    let total: usize = channels.iter().sum();
    let mut offset = 0;
    for (&i, &ci) in xs.iter().zip(&channels) {
        if let Some(dx) = grad_slot(nodes, grads, i) {
            for s in 0..n {
                let src = &g[(s * total + offset) * hw..(s * total + offset + ci) * hw];
                dx[s * ci * hw..(s + 1) * ci * hw]
                    .iter_mut()
                    .zip(src)
                    .for_each(|(a, b)| *a += *b);
            }
        }
        offset += ci;
    }
}

pub(crate) fn channel_mean_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
) {
    let (n, c, h, w) = nodes[x].value.dims4().expect("validated in forward");
    let hw = h * w;
    let denom = T::from_usize(c).unwrap();
    if let Some(dx) = grad_slot(nodes, grads, x) {
        for s in 0..n {
            for ch in 0..c {
                for p in 0..hw {
                    dx[(s * c + ch) * hw + p] += g[s * hw + p] / denom;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_two_by_two_on_counting_grid() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 4, 4], |i| (i + 1) as f64));
        let y = tape.max_pool2d(x, 2, 2, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn max_pool_constant_input_sends_one_gradient_per_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 4, 4], 2.5), true);
        let y = tape.max_pool2d(x, 2, 2, 0).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 2.5));
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.get(x).unwrap();
        // First element of every 2×2 window in row-major order.
        let expect = [
            1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(g, &expect);
    }

    #[test]
    fn sppf_pooling_keeps_spatial_extent() {
        for side in [1, 2, 3, 7, 14] {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(Tensor::from_fn(&[2, 3, side, side], |i| i as f64));
            let y = tape.max_pool2d(x, 5, 1, 2).unwrap();
            assert_eq!(tape.value(y).shape(), &[2, 3, side, side]);
        }
    }

    #[test]
    fn global_avg_pool_matches_sums() {
        let mut tape = Tape::<f64>::new();
        let t = Tensor::from_fn(&[2, 3, 4, 5], |i| ((i * 31) % 17) as f64);
        let x = tape.constant(t.clone());
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3]);
        for (plane, mean) in t.data().chunks(20).zip(tape.value(y).data()) {
            let sum: f64 = plane.iter().sum();
            assert_eq!(mean * 20.0, sum);
        }
        let c = tape.constant(Tensor::full(&[1, 2, 3, 3], 0.75));
        let y = tape.global_avg_pool(c).unwrap();
        assert_eq!(tape.value(y).data(), &[0.75, 0.75]);
        let one = tape.constant(Tensor::from_fn(&[2, 3, 1, 1], |i| i as f64));
        let y = tape.global_avg_pool(one).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(one).data());
    }

    #[test]
    fn concat_single_is_identity_and_copies_stack() {
        let mut tape = Tape::<f64>::new();
        let t = Tensor::from_fn(&[2, 3, 2, 2], |i| i as f64);
        let x = tape.leaf(t.clone(), true);
        let y = tape.concat_channels(&[x]).unwrap();
        assert_eq!(tape.value(y), &t);
        let y4 = tape.concat_channels(&[x, x, x, x]).unwrap();
        assert_eq!(tape.value(y4).shape(), &[2, 12, 2, 2]);
        let a = tape.leaf(Tensor::zeros(&[2, 1, 2, 2]), true);
        let b = tape.leaf(Tensor::zeros(&[2, 5, 2, 2]), true);
        let cat = tape.concat_channels(&[a, b]).unwrap();
        let loss = tape.sum(cat).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap(), vec![1.0; 8].as_slice());
        assert_eq!(grads.get(b).unwrap(), vec![1.0; 40].as_slice());
    }

    #[test]
    fn concat_rejects_mismatched_spatial_dims() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let b = tape.constant(Tensor::zeros(&[1, 1, 3, 2]));
        assert!(tape.concat_channels(&[a, b]).is_err());
        assert!(tape.concat_channels(&[]).is_err());
    }

    #[test]
    fn channel_reductions() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 3, 1, 2], vec![1.0, 5.0, 4.0, 5.0, 2.0, 0.0]).unwrap());
        let mean = tape.channel_mean(x).unwrap();
        let max = tape.channel_max(x).unwrap();
        assert_eq!(tape.value(mean).data(), &[7.0 / 3.0, 10.0 / 3.0]);
        assert_eq!(tape.value(max).data(), &[4.0, 5.0]);
    }
}
