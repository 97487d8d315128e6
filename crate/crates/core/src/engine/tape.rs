use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use super::tensor::{Real, Tensor};
use super::{conv, dense, elementwise, norm, pool, EngineError};

/// Environment variable that turns on finite-value checks after every op.
pub const DEBUG_NAN_ENV: &str = "TUMORGRADE_DEBUG_NANS";

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn nan_checks_from_env() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        std::env::var(DEBUG_NAN_ENV)
            .map(|v| !v.is_empty() && v != "0")
            .unwrap_or(false)
    })
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Every kind of node a tape can hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    BatchNorm2d,
    Silu,
    Sigmoid,
    MaxPool2d,
    GlobalAvgPool,
    Linear,
    SoftmaxCrossEntropy,
    ConcatChannels,
    Add,
    Mul,
    Sum,
    ScaleChannels,
    ScalePixels,
    ChannelMean,
    ChannelMax,
    Dropout,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::BatchNorm2d => "batch_norm2d",
            OpKind::Silu => "silu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Linear => "linear",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Sum => "sum",
            OpKind::ScaleChannels => "scale_channels",
            OpKind::ScalePixels => "scale_pixels",
            OpKind::ChannelMean => "channel_mean",
            OpKind::ChannelMax => "channel_max",
            OpKind::Dropout => "dropout",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        ALL_OPS.iter().copied().find(|k| k.name() == name)
    }
}

pub const ALL_OPS: [OpKind; 18] = [
    OpKind::Leaf,
    OpKind::Conv2d,
    OpKind::BatchNorm2d,
    OpKind::Silu,
    OpKind::Sigmoid,
    OpKind::MaxPool2d,
    OpKind::GlobalAvgPool,
    OpKind::Linear,
    OpKind::SoftmaxCrossEntropy,
    OpKind::ConcatChannels,
    OpKind::Add,
    OpKind::Mul,
    OpKind::Sum,
    OpKind::ScaleChannels,
    OpKind::ScalePixels,
    OpKind::ChannelMean,
    OpKind::ChannelMax,
    OpKind::Dropout,
];

/// Recorded operation plus whatever its backward pass needs.
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
    },
    BatchNorm2d {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Silu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    MaxPool2d {
        x: usize,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: usize,
    },
    Linear {
        x: usize,
        weight: usize,
        bias: usize,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        probs: Vec<T>,
        targets: Vec<usize>,
    },
    ConcatChannels {
        xs: Vec<usize>,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Sum {
        x: usize,
    },
    ScaleChannels {
        x: usize,
        gate: usize,
    },
    ScalePixels {
        x: usize,
        gate: usize,
    },
    ChannelMean {
        x: usize,
    },
    ChannelMax {
        x: usize,
        argmax: Vec<usize>,
    },
    Dropout {
        x: usize,
        mask: Vec<T>,
    },
}

impl<T> Op<T> {
    pub(crate) fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BatchNorm2d { .. } => OpKind::BatchNorm2d,
            Op::Silu { .. } => OpKind::Silu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Linear { .. } => OpKind::Linear,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::ConcatChannels { .. } => OpKind::ConcatChannels,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Sum { .. } => OpKind::Sum,
            Op::ScaleChannels { .. } => OpKind::ScaleChannels,
            Op::ScalePixels { .. } => OpKind::ScalePixels,
            Op::ChannelMean { .. } => OpKind::ChannelMean,
            Op::ChannelMax { .. } => OpKind::ChannelMax,
            Op::Dropout { .. } => OpKind::Dropout,
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                x, weight, bias, ..
            } => {
                let mut v = vec![*x, *weight];
                v.extend(bias);
                v
            }
            Op::BatchNorm2d { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Linear { x, weight, bias } => vec![*x, *weight, *bias],
            Op::ConcatChannels { xs } => xs.clone(),
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::ScaleChannels { x, gate } | Op::ScalePixels { x, gate } => vec![*x, *gate],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Silu { x }
            | Op::Sigmoid { x }
            | Op::MaxPool2d { x, .. }
            | Op::GlobalAvgPool { x }
            | Op::Sum { x }
            | Op::ChannelMean { x }
            | Op::ChannelMax { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Append-only record of one forward pass. Append order is topological order.
pub struct Tape<T> {
    id: u64,
    pub(crate) nodes: Vec<Node<T>>,
    check_finite: bool,
    perturb: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            check_finite: nan_checks_from_env(),
            perturb: None,
        }
    }

    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    /// Test hook: scales the upstream gradient of every `kind` node by 1.01
    /// during backward, so gradient checks have something to catch.
    #[doc(hidden)]
    pub fn set_backward_perturbation(&mut self, kind: Option<OpKind>) {
        self.perturb = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        assert_eq!(var.tape, self.id, "variable belongs to another tape");
        &self.nodes[var.index].value
    }

    pub fn kind(&self, var: Var) -> OpKind {
        assert_eq!(var.tape, self.id, "variable belongs to another tape");
        self.nodes[var.index].op.kind()
    }

    /// Softmax probabilities cached by a `softmax_cross_entropy` node.
    pub fn cached_probabilities(&self, loss: Var) -> Option<&[T]> {
        match &self.nodes.get(loss.index)?.op {
            Op::SoftmaxCrossEntropy { probs, .. } if loss.tape == self.id => Some(probs),
            _ => None,
        }
    }

    pub(crate) fn resolve(&self, var: Var) -> Result<usize, EngineError> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(EngineError::NoTape);
        }
        Ok(var.index)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var, EngineError> {
        if self.check_finite && !value.all_finite() {
            return Err(EngineError::NonFinite {
                op: op.kind().name(),
            });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape; the
    /// returned [`Gradients`] holds a buffer for every leaf that requires one.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>, EngineError> {
        let root = self.resolve(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(EngineError::ShapeMismatch(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            if self.perturb == Some(node.op.kind()) {
                let s = T::lit(1.01);
                g.iter_mut().for_each(|v| *v *= s);
            }
            backward_node(&self.nodes, &mut grads, i, &g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![T::zero(); node.value.len()]);
            }
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index)?.as_deref()
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index)?.take()
    }
}

/// Zero-initialised gradient slot for node `idx`, or `None` when it needs no gradient.
pub(crate) fn grad_slot<'a, T: Real>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Vec<T>>],
    idx: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let len = nodes[idx].value.len();
    Some(grads[idx].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backward_node<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], i: usize, g: &[T]) {
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Conv2d {
            x,
            weight,
            bias,
            stride,
            padding,
        } => conv::conv2d_backward(nodes, grads, g, *x, *weight, *bias, *stride, *padding),
        Op::BatchNorm2d {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        } => norm::batch_norm_backward(
            nodes, grads, g, *x, *gamma, *beta, xhat, inv_std, *train,
        ),
        Op::Silu { x } => elementwise::silu_backward(nodes, grads, g, *x),
        Op::Sigmoid { x } => elementwise::sigmoid_backward(nodes, grads, g, *x, out),
        Op::MaxPool2d { x, argmax } => pool::scatter_backward(nodes, grads, g, *x, argmax),
        Op::GlobalAvgPool { x } => pool::global_avg_pool_backward(nodes, grads, g, *x),
        Op::Linear { x, weight, bias } => {
            dense::linear_backward(nodes, grads, g, *x, *weight, *bias)
        }
        Op::SoftmaxCrossEntropy {
            logits,
            probs,
            targets,
        } => dense::softmax_cross_entropy_backward(nodes, grads, g, *logits, probs, targets),
        Op::ConcatChannels { xs } => pool::concat_backward(nodes, grads, g, xs),
        Op::Add { a, b } => elementwise::add_backward(nodes, grads, g, *a, *b),
        Op::Mul { a, b } => elementwise::mul_backward(nodes, grads, g, *a, *b),
        Op::Sum { x } => elementwise::sum_backward(nodes, grads, g, *x),
        Op::ScaleChannels { x, gate } => {
            elementwise::scale_channels_backward(nodes, grads, g, *x, *gate)
        }
        Op::ScalePixels { x, gate } => {
            elementwise::scale_pixels_backward(nodes, grads, g, *x, *gate)
        }
        Op::ChannelMean { x } => pool::channel_mean_backward(nodes, grads, g, *x),
        Op::ChannelMax { x, argmax } => pool::scatter_backward(nodes, grads, g, *x, argmax),
        Op::Dropout { x, mask } => elementwise::dropout_backward(nodes, grads, g, *x, mask),
    }
}
