use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::engine::conv_output_len;

pub const NUM_CLASSES: usize = 4;
pub const DEFAULT_INPUT_SIDE: usize = 224;
pub const INPUT_CHANNELS: usize = 3;
pub const WIDTH_MULTIPLIERS: [f64; 3] = [0.25, 0.5, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    YoloClsLite,
    CustomCnn,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::YoloClsLite => "yolo_cls_lite",
            ModelName::CustomCnn => "custom_cnn",
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "yolo_cls_lite" => Ok(ModelName::YoloClsLite),
            "custom_cnn" => Ok(ModelName::CustomCnn),
            _ => Err(ModelError::UnknownModel(s.to_string())),
        }
    }
}

/// conv → batch norm → SiLU, "same" padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBlockSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBlockSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        ConvBlockSpec {
            in_ch,
            out_ch,
            kernel,
            stride,
        }
    }

    pub fn padding(&self) -> usize {
        self.kernel / 2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    ConvBlock(ConvBlockSpec),
    /// Two-branch bottleneck: 1×1 split, residual 3×3 pair on one half, concat, 1×1 fuse.
    C3k2 { channels: usize },
    /// 1×1 reduce, three chained same-size max pools, concat, 1×1 restore.
    Sppf { channels: usize, pool_kernel: usize },
    /// Channel gate (squeeze/excite through `hidden` units) then spatial gate (7×7 conv).
    C2psa { channels: usize, hidden: usize },
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    Dropout { rate: f64 },
    Linear { in_features: usize, out_features: usize },
}

pub const SPATIAL_ATTENTION_KERNEL: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedStage {
    pub name: String,
    #[serde(flatten)]
    pub stage: Stage,
}

/// How a trainable tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// U(−b, b) with b = √(6 / fan_in).
    KaimingUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    pub width_mult: f64,
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_side: usize,
    pub stages: Vec<NamedStage>,
}

fn scaled(base: usize, width_mult: f64) -> usize {
    ((base as f64 * width_mult).round() as usize).max(1)
}

fn stage(name: &str, stage: Stage) -> NamedStage {
    NamedStage {
        name: name.to_string(),
        stage,
    }
}

impl ModelSpec {
    /// Simplified YOLO classification backbone.
    pub fn yolo_cls_lite(
        num_classes: usize,
        width_mult: f64,
        input_side: usize,
    ) -> Result<Self, ModelError> {
        if !WIDTH_MULTIPLIERS.contains(&width_mult) {
            return Err(ModelError::UnsupportedWidth(width_mult));
        }
        let c1 = scaled(32, width_mult);
        let c2 = scaled(64, width_mult);
        let c3 = scaled(128, width_mult);
        let c4 = scaled(256, width_mult);
        let spec = ModelSpec {
            name: ModelName::YoloClsLite,
            width_mult,
            num_classes,
            input_channels: INPUT_CHANNELS,
            input_side,
            stages: vec![
                stage("stem", Stage::ConvBlock(ConvBlockSpec::new(INPUT_CHANNELS, c1, 3, 2))),
                stage("down1", Stage::ConvBlock(ConvBlockSpec::new(c1, c2, 3, 2))),
                stage("c3k2_1", Stage::C3k2 { channels: c2 }),
                stage("down2", Stage::ConvBlock(ConvBlockSpec::new(c2, c3, 3, 2))),
                stage("c3k2_2", Stage::C3k2 { channels: c3 }),
                stage("down3", Stage::ConvBlock(ConvBlockSpec::new(c3, c4, 3, 2))),
                stage(
                    "sppf",
                    Stage::Sppf {
                        channels: c4,
                        pool_kernel: 5,
                    },
                ),
                stage(
                    "c2psa",
                    Stage::C2psa {
                        channels: c4,
                        hidden: (c4 / 8).max(1),
                    },
                ),
                stage("pool", Stage::GlobalAvgPool),
                stage(
                    "head",
                    Stage::Linear {
                        in_features: c4,
                        out_features: num_classes,
                    },
                ),
            ],
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Plain four-block CNN with dropout before the classifier.
    pub fn custom_cnn(num_classes: usize, input_side: usize) -> Result<Self, ModelError> {
        let mut stages = Vec::new();
        let widths = [INPUT_CHANNELS, 32, 64, 128, 256];
        for (i, pair) in widths.windows(2).enumerate() {
            stages.push(stage(
                &format!("block{}", i + 1),
                Stage::ConvBlock(ConvBlockSpec::new(pair[0], pair[1], 3, 1)),
            ));
            stages.push(stage(
                &format!("pool{}", i + 1),
                Stage::MaxPool {
                    kernel: 2,
                    stride: 2,
                },
            ));
        }
        stages.push(stage("gap", Stage::GlobalAvgPool));
        stages.push(stage("dropout", Stage::Dropout { rate: 0.5 }));
        stages.push(stage(
            "head",
            Stage::Linear {
                in_features: 256,
                out_features: num_classes,
            },
        ));
        let spec = ModelSpec {
            name: ModelName::CustomCnn,
            width_mult: 1.0,
            num_classes,
            input_channels: INPUT_CHANNELS,
            input_side,
            stages,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the named architecture; `width_mult` only affects yolo_cls_lite.
    pub fn build(
        name: ModelName,
        num_classes: usize,
        width_mult: f64,
        input_side: usize,
    ) -> Result<Self, ModelError> {
        match name {
            ModelName::YoloClsLite => Self::yolo_cls_lite(num_classes, width_mult, input_side),
            ModelName::CustomCnn => Self::custom_cnn(num_classes, input_side),
        }
    }

    /// Same network with one stage dropped (used for ablations).
    pub fn without_stage(&self, name: &str) -> Result<Self, ModelError> {
        let mut spec = self.clone();
        spec.stages.retain(|s| s.name != name);
        spec.validate()?;
        Ok(spec)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("model spec serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// Structural checks plus a dry-run at `input_side`.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes != NUM_CLASSES {
            return Err(ModelError::UnsupportedClassCount(self.num_classes));
        }
        let mut seen = HashSet::new();
        for s in &self.stages {
            if !seen.insert(s.name.as_str()) {
                return Err(ModelError::ShapePropagationFailure {
                    stage: s.name.clone(),
                    reason: "duplicate stage name".into(),
                });
            }
        }
        self.propagate(1)?;
        Ok(())
    }

    /// Output shape of every stage for a batch of `batch` inputs. The chain
    /// must end in `batch × num_classes` logits.
    pub fn propagate(&self, batch: usize) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut shape = vec![batch, self.input_channels, self.input_side, self.input_side];
        let mut shapes = Vec::with_capacity(self.stages.len());
        for s in &self.stages {
            shape = stage_output(&s.stage, &shape).map_err(|reason| {
                ModelError::ShapePropagationFailure {
                    stage: s.name.clone(),
                    reason,
                }
            })?;
            shapes.push(shape.clone());
        }
        if shape != [batch, self.num_classes] {
            return Err(ModelError::ShapePropagationFailure {
                stage: self
                    .stages
                    .last()
                    .map(|s| s.name.clone())
                    .unwrap_or_else(|| "<input>".into()),
                reason: format!(
                    "network ends in {shape:?}, expected [{batch}, {}] logits",
                    self.num_classes
                ),
            });
        }
        Ok(shapes)
    }

    /// Trainable tensors in declaration order.
    pub fn parameters(&self) -> Vec<ParamDecl> {
        let mut out = Vec::new();
        for s in &self.stages {
            let p = &s.name;
            match &s.stage {
                Stage::ConvBlock(cb) => conv_block_params(&mut out, p, cb),
                Stage::C3k2 { channels } => {
                    let c = *channels;
                    let h = c / 2;
                    conv_block_params(&mut out, &format!("{p}.cv_a"), &ConvBlockSpec::new(c, h, 1, 1));
                    conv_block_params(&mut out, &format!("{p}.cv_b"), &ConvBlockSpec::new(c, h, 1, 1));
                    conv_block_params(&mut out, &format!("{p}.m1"), &ConvBlockSpec::new(h, h, 3, 1));
                    conv_block_params(&mut out, &format!("{p}.m2"), &ConvBlockSpec::new(h, h, 3, 1));
                    conv_block_params(&mut out, &format!("{p}.cv_out"), &ConvBlockSpec::new(2 * h, c, 1, 1));
                }
                Stage::Sppf { channels, .. } => {
                    let c = *channels;
                    let h = c / 2;
                    conv_block_params(&mut out, &format!("{p}.cv_in"), &ConvBlockSpec::new(c, h, 1, 1));
                    conv_block_params(&mut out, &format!("{p}.cv_out"), &ConvBlockSpec::new(4 * h, c, 1, 1));
                }
                Stage::C2psa { channels, hidden } => {
                    linear_params(&mut out, &format!("{p}.fc1"), *channels, *hidden);
                    linear_params(&mut out, &format!("{p}.fc2"), *hidden, *channels);
                    let k = SPATIAL_ATTENTION_KERNEL;
                    out.push(ParamDecl {
                        name: format!("{p}.spatial.weight"),
                        shape: vec![1, 2, k, k],
                        init: Init::KaimingUniform { fan_in: 2 * k * k },
                    });
                    out.push(ParamDecl {
                        name: format!("{p}.spatial.bias"),
                        shape: vec![1],
                        init: Init::Zeros,
                    });
                }
                Stage::Linear {
                    in_features,
                    out_features,
                } => linear_params(&mut out, p, *in_features, *out_features),
                Stage::MaxPool { .. } | Stage::GlobalAvgPool | Stage::Dropout { .. } => {}
            }
        }
        out
    }

    /// Names and channel counts of every batch-norm layer, in declaration order.
    pub fn batch_norms(&self) -> Vec<(String, usize)> {
        self.parameters()
            .into_iter()
            .filter_map(|d| {
                d.name
                    .strip_suffix(".bn.gamma")
                    .map(|prefix| (format!("{prefix}.bn"), d.shape[0]))
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters()
            .iter()
            .map(|d| d.shape.iter().product::<usize>())
            .sum()
    }
}

fn conv_block_params(out: &mut Vec<ParamDecl>, prefix: &str, cb: &ConvBlockSpec) {
    out.push(ParamDecl {
        name: format!("{prefix}.conv.weight"),
        shape: vec![cb.out_ch, cb.in_ch, cb.kernel, cb.kernel],
        init: Init::KaimingUniform {
            fan_in: cb.in_ch * cb.kernel * cb.kernel,
        },
    });
    out.push(ParamDecl {
        name: format!("{prefix}.bn.gamma"),
        shape: vec![cb.out_ch],
        init: Init::Ones,
    });
    out.push(ParamDecl {
        name: format!("{prefix}.bn.beta"),
        shape: vec![cb.out_ch],
        init: Init::Zeros,
    });
}

fn linear_params(out: &mut Vec<ParamDecl>, prefix: &str, d: usize, k: usize) {
    out.push(ParamDecl {
        name: format!("{prefix}.weight"),
        shape: vec![d, k],
        init: Init::KaimingUniform { fan_in: d },
    });
    out.push(ParamDecl {
        name: format!("{prefix}.bias"),
        shape: vec![k],
        init: Init::Zeros,
    });
}

fn spatial(shape: &[usize]) -> Result<(usize, usize, usize, usize), String> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(format!("expects an N×C×H×W input, got {shape:?}")),
    }
}

fn expect_channels(actual: usize, expected: usize) -> Result<(), String> {
    if actual != expected {
        return Err(format!("expects {expected} input channels, got {actual}"));
    }
    Ok(())
}

fn conv_out(h: usize, w: usize, k: usize, s: usize, p: usize) -> Result<(usize, usize), String> {
    match (conv_output_len(h, k, s, p), conv_output_len(w, k, s, p)) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok((oh, ow)),
        _ => Err(format!("window {k} stride {s} padding {p} does not fit {h}×{w}")),
    }
}

fn stage_output(stage: &Stage, shape: &[usize]) -> Result<Vec<usize>, String> {
    match stage {
        Stage::ConvBlock(cb) => {
            let (n, c, h, w) = spatial(shape)?;
            expect_channels(c, cb.in_ch)?;
            if !crate::engine::SUPPORTED_KERNELS.contains(&cb.kernel) {
                return Err(format!("kernel {} not supported", cb.kernel));
            }
            let (oh, ow) = conv_out(h, w, cb.kernel, cb.stride, cb.padding())?;
            Ok(vec![n, cb.out_ch, oh, ow])
        }
        Stage::C3k2 { channels } | Stage::Sppf { channels, .. } => {
            let (n, c, h, w) = spatial(shape)?;
            expect_channels(c, *channels)?;
            if channels % 2 != 0 {
                return Err(format!("needs an even channel count, got {channels}"));
            }
            if let Stage::Sppf { pool_kernel, .. } = stage {
                conv_out(h, w, *pool_kernel, 1, pool_kernel / 2)?;
            }
            Ok(vec![n, c, h, w])
        }
        Stage::C2psa { channels, hidden } => {
            let (n, c, h, w) = spatial(shape)?;
            expect_channels(c, *channels)?;
            if *hidden == 0 {
                return Err("attention hidden width must be positive".into());
            }
            Ok(vec![n, c, h, w])
        }
        Stage::MaxPool { kernel, stride } => {
            let (n, c, h, w) = spatial(shape)?;
            let (oh, ow) = conv_out(h, w, *kernel, *stride, 0)?;
            Ok(vec![n, c, oh, ow])
        }
        Stage::GlobalAvgPool => {
            let (n, c, _, _) = spatial(shape)?;
            Ok(vec![n, c])
        }
        Stage::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                return Err(format!("dropout rate {rate} outside [0, 1)"));
            }
            Ok(shape.to_vec())
        }
        Stage::Linear {
            in_features,
            out_features,
        } => match *shape {
            [n, d] if d == *in_features => Ok(vec![n, *out_features]),
            _ => Err(format!("expects [N, {in_features}] features, got {shape:?}")),
        },
    }
}
