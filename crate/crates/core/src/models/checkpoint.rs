//! Binary checkpoint files.
//!
//! Layout: `TGCKPT01`, a little-endian u64 header length, the JSON header, then
//! one record per tensor: u32 name length, name, u32 rank, u64 dims, values in
//! the header's dtype. Records appear as parameters (declaration order), then
//! batch-norm running mean/var, then optional Adam moments.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::forward::Model;
use super::params::{BufferSet, Parameter, ParameterSet};
use super::spec::{ModelName, ModelSpec};
use super::ModelError;
use crate::engine::{Dtype, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TGCKPT01";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("spec hash mismatch: expected {expected}, checkpoint has {found}")]
    SpecHashMismatch { expected: String, found: String },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::Corrupt(_) => "CorruptCheckpoint",
            CheckpointError::SpecHashMismatch { .. } => "SpecHashMismatch",
            CheckpointError::Io(_) => "IoFailure",
            CheckpointError::Model(e) => e.code(),
        }
    }
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub model: ModelName,
    pub spec: ModelSpec,
    pub spec_hash: String,
    pub epoch: usize,
    pub dtype: Dtype,
    pub param_count: usize,
    pub init_seed: u64,
    /// Number of Adam updates applied; 0 when no optimizer state is stored.
    pub adam_step: u64,
    pub has_optimizer_state: bool,
    pub metrics: BTreeMap<String, f64>,
    /// Opaque trainer state needed for exact resume.
    #[serde(default)]
    pub trainer_state: serde_json::Value,
    pub tensor_count: usize,
    pub body_bytes: u64,
}

/// Adam first and second moments, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub epoch: usize,
    pub adam_step: u64,
    pub moments: Option<Moments<T>>,
    pub metrics: BTreeMap<String, f64>,
    pub trainer_state: serde_json::Value,
}

impl<T: Real> Checkpoint<T> {
    /// A checkpoint of bare weights, with no optimizer or trainer state.
    pub fn weights_only(model: Model<T>, epoch: usize) -> Self {
        Checkpoint {
            model,
            epoch,
            adam_step: 0,
            moments: None,
            metrics: BTreeMap::new(),
            trainer_state: serde_json::Value::Null,
        }
    }

    fn records(&self) -> Vec<(String, &[usize], &[T])> {
        let mut out: Vec<(String, &[usize], &[T])> = Vec::new();
        for p in self.model.params.iter() {
            out.push((p.name.clone(), p.tensor.shape(), p.tensor.data()));
        }
        for (name, stats) in self.model.buffers.iter() {
            // rank-1 records; the empty shape is expanded when writing
            out.push((format!("{name}.running_mean"), &[], &stats.mean));
            out.push((format!("{name}.running_var"), &[], &stats.var));
        }
        if let Some(mom) = &self.moments {
            for (p, t) in self.model.params.iter().zip(&mom.m) {
                out.push((format!("adam.m.{}", p.name), t.shape(), t.data()));
            }
            for (p, t) in self.model.params.iter().zip(&mom.v) {
                out.push((format!("adam.v.{}", p.name), t.shape(), t.data()));
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = T::DTYPE.byte_width();
        let mut body = Vec::new();
        let records = self.records();
        for (name, shape, data) in &records {
            let dims: Vec<usize> = if shape.is_empty() {
                vec![data.len()]
            } else {
                shape.to_vec()
            };
            body.extend_from_slice(&(name.len() as u32).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            body.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in &dims {
                body.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            body.reserve(data.len() * width);
            for v in data.iter() {
                v.write_le(&mut body);
            }
        }
        let spec = &self.model.spec;
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT,
            model: spec.name,
            spec: spec.clone(),
            spec_hash: spec.spec_hash(),
            epoch: self.epoch,
            dtype: T::DTYPE,
            param_count: self.model.params.scalar_count(),
            init_seed: self.model.params.init_seed,
            adam_step: self.adam_step,
            has_optimizer_state: self.moments.is_some(),
            metrics: self.metrics.clone(),
            trainer_state: self.trainer_state.clone(),
            tensor_count: records.len(),
            body_bytes: body.len() as u64,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + body.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        out
    }

    /// Reads only the header, validating magic and total length.
    pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize), CheckpointError> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header extends past end of file"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(corrupt(format!("unsupported format {}", header.format)));
        }
        let expected_len = body_start as u64 + header.body_bytes;
        if bytes.len() as u64 != expected_len {
            return Err(corrupt(format!(
                "file is {} bytes, header declares {expected_len}",
                bytes.len()
            )));
        }
        if header.spec.spec_hash() != header.spec_hash {
            return Err(corrupt("stored spec does not match stored spec hash"));
        }
        Ok((header, body_start))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let (header, body_start) = Self::read_header(bytes)?;
        let mut reader = Reader {
            bytes: &bytes[body_start..],
            pos: 0,
            dtype: header.dtype,
            records: 0,
        };
        let spec = header.spec.clone();
        spec.validate()?;

        let decls = spec.parameters();
        let mut params = Vec::with_capacity(decls.len());
        for decl in &decls {
            let t = reader.expect_tensor::<T>(&decl.name)?;
            if t.shape() != decl.shape.as_slice() {
                return Err(corrupt(format!("{} has shape {:?}", decl.name, t.shape())));
            }
            params.push(Parameter {
                name: decl.name.clone(),
                tensor: t,
            });
        }
        let params = ParameterSet::from_parameters(params, header.init_seed)?;
        if params.scalar_count() != header.param_count {
            return Err(corrupt("parameter count disagrees with header"));
        }

        let mut buffers = BufferSet::<T>::for_spec(&spec);
        let names: Vec<String> = buffers.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let mean = reader.expect_tensor::<T>(&format!("{name}.running_mean"))?;
            let var = reader.expect_tensor::<T>(&format!("{name}.running_var"))?;
            let stats = buffers.get_mut(&name).expect("name from same buffer set");
            if mean.len() != stats.mean.len() || var.len() != stats.var.len() {
                return Err(corrupt(format!("{name} running stats have wrong length")));
            }
            stats.mean = mean.into_data();
            stats.var = var.into_data();
        }

        let moments = if header.has_optimizer_state {
            let mut m = Vec::with_capacity(decls.len());
            let mut v = Vec::with_capacity(decls.len());
            for (prefix, out) in [("adam.m", &mut m), ("adam.v", &mut v)] {
                for decl in &decls {
                    let t = reader.expect_tensor::<T>(&format!("{prefix}.{}", decl.name))?;
                    if t.shape() != decl.shape.as_slice() {
                        return Err(corrupt(format!("{prefix}.{} has wrong shape", decl.name)));
                    }
                    out.push(t);
                }
            }
            Some(Moments { m, v })
        } else {
            None
        };

        if reader.pos != reader.bytes.len() || reader.records != header.tensor_count {
            return Err(corrupt("trailing data after last tensor record"));
        }
        let model = Model::from_parts(spec, params, buffers)?;
        Ok(Checkpoint {
            model,
            epoch: header.epoch,
            adam_step: header.adam_step,
            moments,
            metrics: header.metrics,
            trainer_state: header.trainer_state,
        })
    }

    /// Writes to a sibling temp file, then renames into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads and additionally requires the stored spec hash to equal `expected`.
    pub fn load_expecting(path: &Path, expected_hash: &str) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path)?;
        let (header, _) = Self::read_header(&bytes)?;
        if header.spec_hash != expected_hash {
            return Err(CheckpointError::SpecHashMismatch {
                expected: expected_hash.to_string(),
                found: header.spec_hash,
            });
        }
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    dtype: Dtype,
    records: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("unexpected end of tensor data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn expect_tensor<T: Real>(&mut self, name: &str) -> Result<Tensor<T>, CheckpointError> {
        let len = self.u32()? as usize;
        let found = self.take(len)?;
        if found != name.as_bytes() {
            return Err(corrupt(format!(
                "expected tensor {name}, found {}",
                String::from_utf8_lossy(found)
            )));
        }
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(corrupt(format!("{name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| corrupt(format!("{name} shape overflows")))?;
        let dtype = self.dtype;
        let width = dtype.byte_width();
        let raw = self.take(
            count
                .checked_mul(width)
                .ok_or_else(|| corrupt(format!("{name} too large")))?,
        )?;
        let data: Vec<T> = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| T::lit(f32::read_le(c) as f64))
                .collect(),
            Dtype::F64 => raw.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
        };
        self.records += 1;
        Tensor::new(shape, data).map_err(|e| corrupt(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let spec = ModelSpec::yolo_cls_lite(4, 0.25, 32).unwrap();
        let mut model = Model::<f32>::new(spec, 4).unwrap();
        model.buffers.get_mut("stem.bn").unwrap().mean[0] = 0.25;
        let m: Vec<_> = model.params.iter().map(|p| Tensor::full(p.tensor.shape(), 0.5)).collect();
        let v: Vec<_> = model.params.iter().map(|p| Tensor::full(p.tensor.shape(), 2.0)).collect();
        let mut metrics = BTreeMap::new();
        metrics.insert("val_accuracy".to_string(), 0.75);
        Checkpoint {
            model,
            epoch: 3,
            adam_step: 12,
            moments: Some(Moments { m, v }),
            metrics,
            trainer_state: serde_json::json!({"k": 1}),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = Checkpoint::weights_only(sample().model, 0).to_bytes();
        for cut in [0, 7, 15, 16, 100, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::<f32>::from_bytes(&bytes[..cut]).unwrap_err();
            assert_eq!(err.code(), "CorruptCheckpoint", "cut {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::<f32>::from_bytes(&longer).is_err());
    }

    #[test]
    fn flipped_name_byte_is_rejected() {
        let bytes = sample().to_bytes();
        let (_, body) = Checkpoint::<f32>::read_header(&bytes).unwrap();
        let mut bad = bytes.clone();
        bad[body + 4] ^= 0x20;
        assert_eq!(
            Checkpoint::<f32>::from_bytes(&bad).unwrap_err().code(),
            "CorruptCheckpoint"
        );
    }

    #[test]
    fn spec_hash_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        sample().save(&path).unwrap();
        let other = ModelSpec::custom_cnn(4, 32).unwrap().spec_hash();
        let err = Checkpoint::<f32>::load_expecting(&path, &other).unwrap_err();
        assert_eq!(err.code(), "SpecHashMismatch");
        let own = sample().model.spec.spec_hash();
        assert!(Checkpoint::<f32>::load_expecting(&path, &own).is_ok());
    }

    #[test]
    fn f32_file_loads_into_f64() {
        let ck = sample();
        let wide = Checkpoint::<f64>::from_bytes(&ck.to_bytes()).unwrap();
        let a = ck.model.params.iter().next().unwrap().tensor.data()[0];
        let b = wide.model.params.iter().next().unwrap().tensor.data()[0];
        assert_eq!(a as f64, b);
    }
}
