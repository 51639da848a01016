//! DARE merging of a fine-tuned parameter set into its base, plus the `npk`
//! named-array container used to store parameter sets on disk.
//!
//! `npk` layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes   "NPK1"
//! count    u32       number of arrays
//! per array, in ascending byte order of name:
//!   name_len u32
//!   name     name_len bytes, UTF-8
//!   ndim     u32
//!   dims     ndim x u64
//!   values   prod(dims) x f32
//! ```
//!
//! Nothing may follow the last array.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const NPK_MAGIC: &[u8; 4] = b"NPK1";

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("parameter `{name}`: {reason}")]
    ShapeMismatch { name: String, reason: String },
    #[error("invalid merge spec: {0}")]
    InvalidSpec(String),
    #[error("npk format: {0}")]
    Format(String),
    #[error("npk i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl MergeError {
    pub fn category(&self) -> &'static str {
        match self {
            MergeError::ShapeMismatch { .. } => "shape_mismatch",
            MergeError::InvalidSpec(_) => "invalid_spec",
            MergeError::Format(_) => "format",
            MergeError::Io(_) => "io",
        }
    }
}

/// A flat array of reals with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<u64>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<u64>, values: Vec<f32>) -> Result<Self, MergeError> {
        let n = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d));
        if n != Some(values.len() as u64) {
            return Err(MergeError::Format(format!(
                "shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn vector(values: Vec<f32>) -> Self {
        Tensor {
            shape: vec![values.len() as u64],
            values,
        }
    }

    pub fn shape(&self) -> &[u64] {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Named arrays, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterMap {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.entries.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Errors on the first name or shape that differs.
    pub fn check_compatible(&self, other: &ParameterMap) -> Result<(), MergeError> {
        for name in self.entries.keys() {
            if !other.entries.contains_key(name) {
                return Err(MergeError::ShapeMismatch {
                    name: name.clone(),
                    reason: "missing from the fine-tuned set".into(),
                });
            }
        }
        for (name, t) in &other.entries {
            match self.entries.get(name) {
                None => {
                    return Err(MergeError::ShapeMismatch {
                        name: name.clone(),
                        reason: "missing from the base set".into(),
                    })
                }
                Some(b) if b.shape != t.shape => {
                    return Err(MergeError::ShapeMismatch {
                        name: name.clone(),
                        reason: format!("base shape {:?}, fine-tuned shape {:?}", b.shape, t.shape),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn to_npk_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.num_values() * 4);
        out.extend_from_slice(NPK_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_npk_bytes(bytes: &[u8]) -> Result<Self, MergeError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != NPK_MAGIC {
            return Err(MergeError::Format("bad magic".into()));
        }
        let count = r.u32()?;
        let mut map = ParameterMap::new();
        let mut previous: Option<String> = None;
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| MergeError::Format("name is not UTF-8".into()))?
                .to_string();
            if previous.as_ref().is_some_and(|p| *p >= name) {
                return Err(MergeError::Format(format!("`{name}` is out of order or repeated")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .and_then(|n| usize::try_from(n).ok())
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| MergeError::Format(format!("`{name}`: shape {shape:?} overruns the file")))?;
            let values = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            map.insert(name.clone(), Tensor { shape, values });
            previous = Some(name);
        }
        if r.remaining() != 0 {
            return Err(MergeError::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MergeError> {
        Ok(std::fs::write(path, self.to_npk_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MergeError> {
        Self::from_npk_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MergeError> {
        if n > self.remaining() {
            return Err(MergeError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MergeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, MergeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeSpec {
    /// Probability of dropping each delta coordinate.
    pub drop_rate: f64,
    /// Weight on the rescaled delta.
    pub weight: f64,
    pub seed: u64,
}

impl Default for MergeSpec {
    fn default() -> Self {
        MergeSpec {
            drop_rate: 0.5,
            weight: 0.6,
            seed: 0,
        }
    }
}

impl MergeSpec {
    pub fn validate(&self) -> Result<(), MergeError> {
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(MergeError::InvalidSpec(format!("drop rate {} not in [0, 1)", self.drop_rate)));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(MergeError::InvalidSpec(format!("weight {} not in [0, 1]", self.weight)));
        }
        Ok(())
    }
}

/// Per-parameter RNG seed, so results do not depend on processing order.
pub fn parameter_seed(seed: u64, name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    seed ^ u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Keep-mask for one parameter: `true` where the delta coordinate survives.
pub fn keep_mask(name: &str, len: usize, spec: &MergeSpec) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(parameter_seed(spec.seed, name));
    (0..len).map(|_| rng.gen::<f64>() >= spec.drop_rate).collect()
}

fn merge_one(name: &str, base: &[f32], ft: &[f32], spec: &MergeSpec) -> Vec<f32> {
    let mask = keep_mask(name, base.len(), spec);
    let scale = spec.weight / (1.0 - spec.drop_rate);
    base.iter()
        .zip(ft)
        .zip(mask)
        .map(|((&b, &f), keep)| {
            if !keep || spec.weight == 0.0 {
                b
            } else if scale == 1.0 {
                // w = 1, p = 0: exactly the fine-tuned value.
                f
            } else {
                (b as f64 + scale * (f as f64 - b as f64)) as f32
            }
        })
        .collect()
}

/// `base + w * mask(finetuned - base) / (1 - p)`, computed per parameter.
pub fn dare_merge(base: &ParameterMap, finetuned: &ParameterMap, spec: &MergeSpec) -> Result<ParameterMap, MergeError> {
    spec.validate()?;
    base.check_compatible(finetuned)?;
    let merged: Vec<(String, Tensor)> = base
        .entries
        .par_iter()
        .map(|(name, b)| {
            let f = &finetuned.entries[name];
            let values = merge_one(name, &b.values, &f.values, spec);
            (
                name.clone(),
                Tensor {
                    shape: b.shape.clone(),
                    values,
                },
            )
        })
        .collect();
    Ok(ParameterMap {
        entries: merged.into_iter().collect(),
    })
}
