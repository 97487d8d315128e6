use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{init_parameters, BufferSet, ParameterSet};
use super::spec::{ConvBlockSpec, ModelSpec, Stage};
use super::ModelError;
use crate::engine::{BatchNormConfig, NormMode, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Replace both C2PSA gates with 1 (ablation hook).
    pub force_attention_gates_one: bool,
    pub batch_norm: BatchNormConfig,
}

impl ForwardOptions {
    pub fn train() -> Self {
        ForwardOptions {
            mode: Mode::Train,
            force_attention_gates_one: false,
            batch_norm: BatchNormConfig::default(),
        }
    }

    pub fn eval() -> Self {
        ForwardOptions {
            mode: Mode::Eval,
            ..Self::train()
        }
    }
}

/// An architecture together with its trainable parameters and batch-norm buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: ParameterSet<T>,
    pub buffers: BufferSet<T>,
}

impl<T: Real> Model<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let params = init_parameters(&spec, seed);
        let buffers = BufferSet::for_spec(&spec);
        Ok(Model {
            spec,
            params,
            buffers,
        })
    }

    /// Checks that `params` carries exactly the tensors `spec` declares.
    pub fn from_parts(
        spec: ModelSpec,
        params: ParameterSet<T>,
        buffers: BufferSet<T>,
    ) -> Result<Self, ModelError> {
        spec.validate()?;
        let decls = spec.parameters();
        if decls.len() != params.len() {
            return Err(ModelError::ParameterLayout(format!(
                "spec declares {} tensors, got {}",
                decls.len(),
                params.len()
            )));
        }
        for (decl, p) in decls.iter().zip(params.iter()) {
            if decl.name != p.name || decl.shape != p.tensor.shape() {
                return Err(ModelError::ParameterLayout(format!(
                    "expected {} {:?}, got {} {:?}",
                    decl.name,
                    decl.shape,
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(Model {
            spec,
            params,
            buffers,
        })
    }

    /// Records the forward pass on `tape`. `vars` must come from
    /// [`ParameterSet::attach`] (or `attach_frozen`) on this model's parameters.
    /// Train mode updates the batch-norm running statistics.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        vars: &[Var],
        input: Var,
        opts: &ForwardOptions,
        rng: &mut dyn RngCore,
    ) -> Result<Var, ModelError> {
        forward_with(&self.spec, &self.params, vars, &mut self.buffers, tape, input, opts, rng)
    }

    /// Eval-mode logits for an N×3×H×W batch. Leaves the model untouched.
    pub fn predict(&self, batch: Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.attach_frozen(&mut tape);
        let input = tape.constant(batch);
        let mut buffers = self.buffers.clone();
        // eval mode never draws
        let mut no_rng = ChaCha8Rng::seed_from_u64(0);
        let logits = forward_with(
            &self.spec,
            &self.params,
            &vars,
            &mut buffers,
            &mut tape,
            input,
            &ForwardOptions::eval(),
            &mut no_rng,
        )?;
        Ok(tape.value(logits).clone())
    }
}

struct Forward<'a, T> {
    params: &'a ParameterSet<T>,
    vars: &'a [Var],
    buffers: &'a mut BufferSet<T>,
    tape: &'a mut Tape<T>,
    opts: &'a ForwardOptions,
    rng: &'a mut dyn RngCore,
}

impl<T: Real> Forward<'_, T> {
    fn param(&self, name: &str) -> Result<Var, ModelError> {
        self.params
            .position(name)
            .and_then(|i| self.vars.get(i).copied())
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    fn norm_mode(&self) -> NormMode {
        match self.opts.mode {
            Mode::Train => NormMode::Train,
            Mode::Eval => NormMode::Eval,
        }
    }

    fn conv_block(&mut self, prefix: &str, cb: &ConvBlockSpec, x: Var) -> Result<Var, ModelError> {
        let w = self.param(&format!("{prefix}.conv.weight"))?;
        let gamma = self.param(&format!("{prefix}.bn.gamma"))?;
        let beta = self.param(&format!("{prefix}.bn.beta"))?;
        let mode = self.norm_mode();
        let y = self.tape.conv2d(x, w, None, cb.stride, cb.padding())?;
        let stats = self
            .buffers
            .get_mut(&format!("{prefix}.bn"))
            .ok_or_else(|| ModelError::MissingParameter(format!("{prefix}.bn running stats")))?;
        let y = self
            .tape
            .batch_norm2d(y, gamma, beta, stats, mode, self.opts.batch_norm)?;
        Ok(self.tape.silu(y)?)
    }

    fn c3k2(&mut self, prefix: &str, channels: usize, x: Var) -> Result<Var, ModelError> {
        let half = channels / 2;
        let a = self.conv_block(&format!("{prefix}.cv_a"), &ConvBlockSpec::new(channels, half, 1, 1), x)?;
        let b = self.conv_block(&format!("{prefix}.cv_b"), &ConvBlockSpec::new(channels, half, 1, 1), x)?;
        let m = self.conv_block(&format!("{prefix}.m1"), &ConvBlockSpec::new(half, half, 3, 1), b)?;
        let m = self.conv_block(&format!("{prefix}.m2"), &ConvBlockSpec::new(half, half, 3, 1), m)?;
        let b = self.tape.add(b, m)?;
        let cat = self.tape.concat_channels(&[a, b])?;
        self.conv_block(&format!("{prefix}.cv_out"), &ConvBlockSpec::new(2 * half, channels, 1, 1), cat)
    }

    fn sppf(&mut self, prefix: &str, channels: usize, k: usize, x: Var) -> Result<Var, ModelError> {
        let half = channels / 2;
        let x1 = self.conv_block(&format!("{prefix}.cv_in"), &ConvBlockSpec::new(channels, half, 1, 1), x)?;
        let y1 = self.tape.max_pool2d(x1, k, 1, k / 2)?;
        let y2 = self.tape.max_pool2d(y1, k, 1, k / 2)?;
        let y3 = self.tape.max_pool2d(y2, k, 1, k / 2)?;
        let cat = self.tape.concat_channels(&[x1, y1, y2, y3])?;
        self.conv_block(&format!("{prefix}.cv_out"), &ConvBlockSpec::new(4 * half, channels, 1, 1), cat)
    }

    fn c2psa(&mut self, prefix: &str, x: Var) -> Result<Var, ModelError> {
        let fc1w = self.param(&format!("{prefix}.fc1.weight"))?;
        let fc1b = self.param(&format!("{prefix}.fc1.bias"))?;
        let fc2w = self.param(&format!("{prefix}.fc2.weight"))?;
        let fc2b = self.param(&format!("{prefix}.fc2.bias"))?;
        let sw = self.param(&format!("{prefix}.spatial.weight"))?;
        let sb = self.param(&format!("{prefix}.spatial.bias"))?;
        if self.opts.force_attention_gates_one {
            return Ok(x);
        }
        let t = &mut *self.tape;
        // channel attention
        let squeezed = t.global_avg_pool(x)?;
        let h = t.linear(squeezed, fc1w, fc1b)?;
        let h = t.silu(h)?;
        let h = t.linear(h, fc2w, fc2b)?;
        let gate = t.sigmoid(h)?;
        let x = t.scale_channels(x, gate)?;
        // spatial attention
        let avg = t.channel_mean(x)?;
        let max = t.channel_max(x)?;
        let maps = t.concat_channels(&[avg, max])?;
        let k = super::spec::SPATIAL_ATTENTION_KERNEL;
        let s = t.conv2d(maps, sw, Some(sb), 1, k / 2)?;
        let gate = t.sigmoid(s)?;
        Ok(t.scale_pixels(x, gate)?)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward_with<T: Real>(
    spec: &ModelSpec,
    params: &ParameterSet<T>,
    vars: &[Var],
    buffers: &mut BufferSet<T>,
    tape: &mut Tape<T>,
    input: Var,
    opts: &ForwardOptions,
    rng: &mut dyn RngCore,
) -> Result<Var, ModelError> {
    if vars.len() != params.len() {
        return Err(ModelError::ParameterLayout(format!(
            "{} parameter variables for {} parameters",
            vars.len(),
            params.len()
        )));
    }
    let mut f = Forward {
        params,
        vars,
        buffers,
        tape,
        opts,
        rng,
    };
    let mut x = input;
    for s in &spec.stages {
        let name = s.name.as_str();
        x = match &s.stage {
            Stage::ConvBlock(cb) => f.conv_block(name, cb, x)?,
            Stage::C3k2 { channels } => f.c3k2(name, *channels, x)?,
            Stage::Sppf {
                channels,
                pool_kernel,
            } => f.sppf(name, *channels, *pool_kernel, x)?,
            Stage::C2psa { .. } => f.c2psa(name, x)?,
            Stage::MaxPool { kernel, stride } => f.tape.max_pool2d(x, *kernel, *stride, 0)?,
            Stage::GlobalAvgPool => f.tape.global_avg_pool(x)?,
            Stage::Dropout { rate } => match opts.mode {
                Mode::Train => f.tape.dropout(x, *rate, &mut *f.rng)?,
                Mode::Eval => x,
            },
            Stage::Linear { .. } => {
                let w = f.param(&format!("{name}.weight"))?;
                let b = f.param(&format!("{name}.bias"))?;
                f.tape.linear(x, w, b)?
            }
        };
    }
    Ok(x)
}
