//! End-to-end finite-difference check of a full model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::{forward_with, ForwardOptions};
use super::params::{init_parameters, BufferSet};
use super::spec::{ModelName, ModelSpec};
use super::ModelError;
use crate::engine::gradcheck::{check_gradients, Coordinates, GradCheckOutcome, DEFAULT_STEP};
use crate::engine::{OpKind, Tensor};

pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const MODEL_SAMPLED_COORDINATES: usize = 24;
const SIDE: usize = 32;
const BATCH: usize = 2;

/// Checks `MODEL_SAMPLED_COORDINATES` random parameter scalars of `name`
/// (width 0.25 for yolo_cls_lite) on a 2×3×32×32 batch with train-mode batch
/// norm and a fixed dropout mask.
pub fn check_model(
    name: ModelName,
    seed: u64,
    perturb: Option<OpKind>,
) -> Result<GradCheckOutcome, ModelError> {
    let spec = ModelSpec::build(name, 4, 0.25, SIDE)?;
    let params = init_parameters::<f64>(&spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6D6F_6465_6C00);
    let input = Tensor::from_fn(&[BATCH, 3, SIDE, SIDE], |_| rng.random_range(0.0..1.0));
    let targets: Vec<usize> = (0..BATCH).map(|_| rng.random_range(0..4)).collect();

    // every tensor is equally likely, then a uniform coordinate inside it
    let sizes: Vec<usize> = params.iter().map(|p| p.tensor.len()).collect();
    let pairs: Vec<(usize, usize)> = (0..MODEL_SAMPLED_COORDINATES)
        .map(|_| {
            let which = rng.random_range(0..sizes.len());
            (which, rng.random_range(0..sizes[which]))
        })
        .collect();
    let dropout_seed = rng.random::<u64>();

    let inputs: Vec<Tensor<f64>> = params.iter().map(|p| p.tensor.clone()).collect();
    let opts = ForwardOptions::train();
    let build = |tape: &mut crate::engine::Tape<f64>, vars: &[crate::engine::Var]| {
        let mut buffers = BufferSet::for_spec(&spec);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let x = tape.constant(input.clone());
        let logits = forward_with(&spec, &params, vars, &mut buffers, tape, x, &opts, &mut drop_rng)
            .map_err(|e| match e {
                ModelError::Engine(e) => e,
                other => crate::engine::EngineError::ShapeMismatch(other.to_string()),
            })?;
        tape.softmax_cross_entropy(logits, &targets)
    };
    let (checked, worst) = check_gradients(
        &inputs,
        Coordinates::Pairs(pairs),
        DEFAULT_STEP,
        perturb,
        build,
    )?;
    Ok(GradCheckOutcome {
        name: format!("model:{name}"),
        checked,
        max_rel_error: worst,
        tolerance: MODEL_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn custom_cnn_gradients_match_finite_differences() {
        let out = check_model(ModelName::CustomCnn, 1, None).unwrap();
        assert!(out.checked >= 20);
        assert!(out.passed(), "{out:?}");
    }

    #[test]
    fn yolo_gradients_match_finite_differences() {
        let out = check_model(ModelName::YoloClsLite, 1, None).unwrap();
        assert!(out.checked >= 20);
        assert!(out.passed(), "{out:?}");
    }
}
