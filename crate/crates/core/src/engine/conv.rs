//! 2-D cross-correlation lowered to im2col + GEMM.
//!
//! Samples in a batch are processed in parallel; every per-sample result is
//! computed the same way regardless of thread placement and the weight
//! gradient is summed in sample order, so results are bitwise reproducible.

use rayon::prelude::*;

use super::tape::{grad_slot, Node, Op, Tape, Var};
use super::tensor::{Real, Tensor};
use super::EngineError;

pub const SUPPORTED_KERNELS: [usize; 4] = [1, 3, 5, 7];

/// Output extent of a strided, padded window along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || input + 2 * padding < kernel {
        return None;
    }
    Some((input + 2 * padding - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one `C×H×W` image into a `(C·k·k) × (H'·W')` matrix.
fn im2col<T: Real>(image: &[T], geo: &Geometry, cols: &mut [T]) {
    let k = geo.kernel;
    let ohw = geo.out_len();
    for c in 0..geo.channels {
        let plane = &image[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..geo.out_h {
                    let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                    for ox in 0..geo.out_w {
                        let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                        dst[oy * geo.out_w + ox] = if iy >= 0
                            && (iy as usize) < geo.height
                            && ix >= 0
                            && (ix as usize) < geo.width
                        {
                            plane[iy as usize * geo.width + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds column gradients back into image space.
fn col2im<T: Real>(cols: &[T], geo: &Geometry, image: &mut [T]) {
    let k = geo.kernel;
    let ohw = geo.out_len();
    for c in 0..geo.channels {
        let plane = &mut image[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..geo.out_h {
                    let iy = (oy * geo.stride + ky) as isize - geo.padding as isize;
                    if iy < 0 || iy as usize >= geo.height {
                        continue;
                    }
                    for ox in 0..geo.out_w {
                        let ix = (ox * geo.stride + kx) as isize - geo.padding as isize;
                        if ix < 0 || ix as usize >= geo.width {
                            continue;
                        }
                        plane[iy as usize * geo.width + ix as usize] += src[oy * geo.out_w + ox];
                    }
                }
            }
        }
    }
}

fn geometry(
    x_shape: &[usize],
    w_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, Geometry), EngineError> {
    let [n, c, h, w] = *x_shape else {
        return Err(EngineError::ShapeMismatch(format!(
            "conv2d input must be N×C×H×W, got {x_shape:?}"
        )));
    };
    let [co, ci, kh, kw] = *w_shape else {
        return Err(EngineError::ShapeMismatch(format!(
            "conv2d weight must be C_out×C_in×k×k, got {w_shape:?}"
        )));
    };
    if ci != c {
        return Err(EngineError::ShapeMismatch(format!(
            "conv2d weight expects {ci} input channels, input has {c}"
        )));
    }
    if kh != kw || !SUPPORTED_KERNELS.contains(&kh) {
        return Err(EngineError::ShapeMismatch(format!(
            "conv2d kernel {kh}×{kw} not supported (square, one of {SUPPORTED_KERNELS:?})"
        )));
    }
    let (Some(out_h), Some(out_w)) = (
        conv_output_len(h, kh, stride, padding),
        conv_output_len(w, kw, stride, padding),
    ) else {
        return Err(EngineError::ShapeMismatch(format!(
            "conv2d kernel {kh} with stride {stride} padding {padding} does not fit {h}×{w}"
        )));
    };
    Ok((
        n,
        co,
        Geometry {
            channels: c,
            height: h,
            width: w,
            kernel: kh,
            stride,
            padding,
            out_h,
            out_w,
        },
    ))
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x` (N×C_in×H×W) with `weight` (C_out×C_in×k×k).
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, EngineError> {
        let xi = self.resolve(x)?;
        let wi = self.resolve(weight)?;
        let bi = bias.map(|b| self.resolve(b)).transpose()?;
        let xv = &self.nodes[xi].value;
        let wv = &self.nodes[wi].value;
        let (n, co, geo) = geometry(xv.shape(), wv.shape(), stride, padding)?;
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [co] {
                return Err(EngineError::ShapeMismatch(format!(
                    "conv2d bias must have shape [{co}], got {:?}",
                    self.nodes[bi].value.shape()
                )));
            }
        }

        let in_len = geo.channels * geo.height * geo.width;
        let out_len = co * geo.out_len();
        let ckk = geo.patch_len();
        let ohw = geo.out_len();
        let mut out = vec![T::zero(); n * out_len];
        let xd = xv.data();
        let wd = wv.data();
        let bd = bi.map(|b| self.nodes[b].value.data());
        out.par_chunks_mut(out_len.max(1))
            .enumerate()
            .for_each(|(s, out_s)| {
                let mut cols = vec![T::zero(); ckk * ohw];
                im2col(&xd[s * in_len..(s + 1) * in_len], &geo, &mut cols);
                T::gemm(
                    co,
                    ckk,
                    ohw,
                    T::one(),
                    wd,
                    (ckk as isize, 1),
                    &cols,
                    (ohw as isize, 1),
                    T::zero(),
                    out_s,
                    (ohw as isize, 1),
                );
                if let Some(bd) = bd {
                    for (o, row) in out_s.chunks_mut(ohw).enumerate() {
                        row.iter_mut().for_each(|v| *v += bd[o]);
                    }
                }
            });

        let value = Tensor::new(vec![n, co, geo.out_h, geo.out_w], out)?;
        self.push(
            value,
            Op::Conv2d {
                x: xi,
                weight: wi,
                bias: bi,
                stride,
                padding,
            },
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    g: &[T],
    x: usize,
    weight: usize,
    bias: Option<usize>,
    stride: usize,
    padding: usize,
) {
    let xv = &nodes[x].value;
    let wv = &nodes[weight].value;
    let (n, co, geo) =
        geometry(xv.shape(), wv.shape(), stride, padding).expect("validated in forward");
    let in_len = geo.channels * geo.height * geo.width;
    let ckk = geo.patch_len();
    let ohw = geo.out_len();
    let out_len = co * ohw;
    let need_dx = nodes[x].requires_grad;
    let need_dw = nodes[weight].requires_grad;
    let xd = xv.data();
    let wd = wv.data();

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
        .into_par_iter()
        .map(|s| {
            let g_s = &g[s * out_len..(s + 1) * out_len];
            let dw = need_dw.then(|| {
                let mut cols = vec![T::zero(); ckk * ohw];
                im2col(&xd[s * in_len..(s + 1) * in_len], &geo, &mut cols);
                let mut dw = vec![T::zero(); co * ckk];
                // dW_s = G_s · colsᵀ
                T::gemm(
                    co,
                    ohw,
                    ckk,
                    T::one(),
                    g_s,
                    (ohw as isize, 1),
                    &cols,
                    (1, ohw as isize),
                    T::zero(),
                    &mut dw,
                    (ckk as isize, 1),
                );
                dw
            });
            let dx = need_dx.then(|| {
                let mut dcols = vec![T::zero(); ckk * ohw];
                // dcols = Wᵀ · G_s
                T::gemm(
                    ckk,
                    co,
                    ohw,
                    T::one(),
                    wd,
                    (1, ckk as isize),
                    g_s,
                    (ohw as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (ohw as isize, 1),
                );
                let mut dx = vec![T::zero(); in_len];
                col2im(&dcols, &geo, &mut dx);
                dx
            });
            (dw, dx)
        })
        .collect();

    if let Some(dw_total) = grad_slot(nodes, grads, weight) {
        for (dw, _) in &per_sample {
            if let Some(dw) = dw {
                dw_total.iter_mut().zip(dw).for_each(|(a, b)| *a += *b);
            }
        }
    }
    if let Some(dx_total) = grad_slot(nodes, grads, x) {
        for (s, (_, dx)) in per_sample.iter().enumerate() {
            if let Some(dx) = dx {
                dx_total[s * in_len..(s + 1) * in_len]
                    .iter_mut()
                    .zip(dx)
                    .for_each(|(a, b)| *a += *b);
            }
        }
    }
    if let Some(b) = bias {
        if let Some(db) = grad_slot(nodes, grads, b) {
            for s in 0..n {
                for (o, row) in g[s * out_len..(s + 1) * out_len].chunks(ohw).enumerate() {
                    let mut acc = T::zero();
                    for v in row {
                        acc += *v;
                    }
                    db[o] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation, independent of im2col.
    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (co, _, k, _) = w.dims4().unwrap();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * co * oh * ow];
        for s in 0..n {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                        continue;
                                    }
                                    acc += x.data()
                                        [((s * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((s * co + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 - 4.0);
        let xv = tape.constant(x.clone());
        let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let y = tape.conv2d(xv, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn all_ones_sums_to_nine() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
    }

    #[test]
    fn matches_naive_loops_with_stride_and_padding() {
        let x = Tensor::from_fn(&[2, 3, 7, 6], |i| ((i * 37 % 101) as f64) / 50.0 - 1.0);
        let w = Tensor::from_fn(&[4, 3, 3, 3], |i| ((i * 13 % 29) as f64) / 14.0 - 1.0);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(x.clone());
            let wv = tape.constant(w.clone());
            let y = tape.conv2d(xv, wv, None, stride, pad).unwrap();
            let expect = naive_conv(&x, &w, stride, pad);
            for (a, b) in tape.value(y).data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_oversized_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(
            tape.conv2d(x, w, None, 1, 0),
            Err(EngineError::ShapeMismatch(_))
        ));
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
        assert!(tape.conv2d(x, w, None, 1, 0).is_err());
        assert!(tape.conv2d(x, w, None, 1, 2).is_ok());
        let w = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(tape.conv2d(x, w, None, 1, 0).is_err());
    }
}
