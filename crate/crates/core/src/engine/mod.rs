//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every op of one forward pass in append order;
//! [`Tape::backward`] walks it once in reverse and hands back leaf gradients.
//! Ops are exactly those needed by the classification models: convolution,
//! batch norm, SiLU/sigmoid, pooling, channel gating, linear and
//! softmax cross-entropy.

mod conv;
mod dense;
mod elementwise;
pub mod gradcheck;
mod norm;
mod pool;
mod tape;
mod tensor;

use thiserror::Error;

pub use conv::{conv_output_len, SUPPORTED_KERNELS};
pub use dense::softmax_rows;
pub use elementwise::sigmoid;
pub use norm::{BatchNormConfig, NormMode, RunningStats};
pub use tape::{Gradients, OpKind, Tape, Var, ALL_OPS, DEBUG_NAN_ENV};
pub use tensor::{Dtype, Real, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs at least 2 values per channel in train mode, got {per_channel}")]
    DegenerateBatch { per_channel: usize },
    #[error("target class {target} out of range for {classes} classes")]
    InvalidTarget { target: usize, classes: usize },
    #[error("variable is not recorded on this tape")]
    NoTape,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::ShapeMismatch(_) => "ShapeMismatch",
            EngineError::DegenerateBatch { .. } => "DegenerateBatch",
            EngineError::InvalidTarget { .. } => "InvalidTarget",
            EngineError::NoTape => "NoTape",
            EngineError::NonFinite { .. } => "NonFinite",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_foreign_loss() {
        let mut a = Tape::<f64>::new();
        let mut b = Tape::<f64>::new();
        let x = a.leaf(Tensor::scalar(1.0), true);
        let _ = b.leaf(Tensor::scalar(2.0), true);
        assert!(matches!(b.backward(x), Err(EngineError::NoTape)));
    }

    #[test]
    fn unreachable_leaves_still_get_zero_grads() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[3], 1.0), true);
        let unused = tape.leaf(Tensor::full(&[2], 1.0), true);
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap();
        let loss = tape.sum(z).unwrap();
        // loss = Σ 2x² → grad 4x
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[4.0, 8.0]);
    }

    #[test]
    fn nan_check_flags_non_finite_outputs() {
        let mut tape = Tape::<f64>::new();
        tape.set_check_finite(true);
        let x = tape.constant(Tensor::new(vec![2], vec![f64::INFINITY, 1.0]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            tape.mul(x, zero),
            Err(EngineError::NonFinite { op: "mul" })
        ));
    }

    #[test]
    fn repeated_backward_is_bitwise_identical() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(Tensor::from_fn(&[3, 2, 9, 9], |i| ((i * 29) % 31) as f32 / 7.0), true);
            let w = tape.leaf(Tensor::from_fn(&[5, 2, 3, 3], |i| ((i * 17) % 13) as f32 / 6.0 - 1.0), true);
            let y = tape.conv2d(x, w, None, 2, 1).unwrap();
            let s = tape.silu(y).unwrap();
            let loss = tape.sum(s).unwrap();
            let mut g = tape.backward(loss).unwrap();
            (g.take(x).unwrap(), g.take(w).unwrap())
        };
        let a = run();
        let b = run();
        assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
