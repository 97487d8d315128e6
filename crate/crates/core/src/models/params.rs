use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::spec::{Init, ModelSpec};
use super::ModelError;
use crate::engine::{Real, RunningStats, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Named trainable tensors in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    pub init_seed: u64,
}

impl<T: Real> ParameterSet<T> {
    pub fn from_parameters(params: Vec<Parameter<T>>, init_seed: u64) -> Result<Self, ModelError> {
        let mut index = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            if index.insert(p.name.clone(), i).is_some() {
                return Err(ModelError::DuplicateParameter(p.name.clone()));
            }
        }
        Ok(ParameterSet {
            params,
            index,
            init_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(|i| &mut self.params[i].tensor)
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn attach(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), true))
            .collect()
    }

    /// Records every parameter as a constant.
    pub fn attach_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.constant(p.tensor.clone()))
            .collect()
    }

    /// SHA-256 over names, shapes and raw value bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            for d in p.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            let mut buf = Vec::with_capacity(p.tensor.len() * 8);
            for v in p.tensor.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }
}

/// Running statistics of every batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BufferSet<T> {
    stats: Vec<(String, RunningStats<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Real> BufferSet<T> {
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let stats: Vec<(String, RunningStats<T>)> = spec
            .batch_norms()
            .into_iter()
            .map(|(name, c)| (name, RunningStats::new(c)))
            .collect();
        let index = stats
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        BufferSet { stats, index }
    }

    pub fn get(&self, name: &str) -> Option<&RunningStats<T>> {
        self.index.get(name).map(|&i| &self.stats[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut RunningStats<T>> {
        self.index.get(name).map(|&i| &mut self.stats[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.stats.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, s) in &self.stats {
            h.update(name.as_bytes());
            let mut buf = Vec::new();
            for v in s.mean.iter().chain(&s.var) {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        hex::encode(h.finalize())
    }
}

/// Per-parameter stream so values do not depend on declaration order.
fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Kaiming-uniform fan-in weights, zero biases, unit gamma, zero beta.
pub fn init_parameters<T: Real>(spec: &ModelSpec, seed: u64) -> ParameterSet<T> {
    let params = spec
        .parameters()
        .into_iter()
        .map(|decl| {
            let tensor = match decl.init {
                Init::Zeros => Tensor::zeros(&decl.shape),
                Init::Ones => Tensor::full(&decl.shape, T::one()),
                Init::KaimingUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let mut rng = param_rng(seed, &decl.name);
                    Tensor::from_fn(&decl.shape, |_| T::lit(rng.random_range(-bound..bound)))
                }
            };
            Parameter {
                name: decl.name,
                tensor,
            }
        })
        .collect();
    ParameterSet::from_parameters(params, seed).expect("spec declares unique names")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bits() {
        let spec = ModelSpec::yolo_cls_lite(4, 0.25, 64).unwrap();
        let a = init_parameters::<f32>(&spec, 9);
        let b = init_parameters::<f32>(&spec, 9);
        let c = init_parameters::<f32>(&spec, 10);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn gammas_are_one_and_biases_zero() {
        let spec = ModelSpec::custom_cnn(4, 64).unwrap();
        let p = init_parameters::<f64>(&spec, 1);
        for param in p.iter() {
            if param.name.ends_with(".bn.gamma") {
                assert!(param.tensor.data().iter().all(|v| *v == 1.0));
            }
            if param.name.ends_with(".bias") || param.name.ends_with(".bn.beta") {
                assert!(param.tensor.data().iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn conv_weight_spread_matches_kaiming() {
        // 3×3, 64→64 bottleneck conv.
        let spec = ModelSpec::yolo_cls_lite(4, 1.0, 224).unwrap();
        let p = init_parameters::<f64>(&spec, 5);
        let w = p.get("c3k2_2.m1.conv.weight").unwrap();
        assert_eq!(w.shape(), &[64, 64, 3, 3]);
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expected = (2.0f64 / (64.0 * 9.0)).sqrt();
        assert!((std / expected - 1.0).abs() < 0.10, "std {std} vs {expected}");
    }

    #[test]
    fn buffers_cover_every_batch_norm() {
        let spec = ModelSpec::yolo_cls_lite(4, 0.25, 64).unwrap();
        let buffers = BufferSet::<f32>::for_spec(&spec);
        let gammas = spec
            .parameters()
            .iter()
            .filter(|d| d.name.ends_with(".bn.gamma"))
            .count();
        assert_eq!(buffers.len(), gammas);
        assert!(buffers.get("sppf.cv_in.bn").is_some());
    }
}
