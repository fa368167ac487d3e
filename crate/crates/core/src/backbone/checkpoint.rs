//! Flat name → tensor archive.
//!
//! Layout: the 8 magic bytes `SPLCKPT1`, a little-endian `u64` header length,
//! a JSON header, then every tensor's values as little-endian `f64` in
//! header order. The header records dtype, endianness, each tensor's name,
//! shape and element offset, and free-form metadata.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;

pub const MAGIC: &[u8; 8] = b"SPLCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: ArrayD<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    endianness: String,
    tensors: Vec<TensorEntry>,
    metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Snapshot of every parameter (trainable or not) of `model`.
    pub fn from_module(model: &dyn Module, metadata: serde_json::Value) -> Self {
        Checkpoint {
            tensors: model
                .params()
                .into_iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    value: p.value.clone(),
                })
                .collect(),
            metadata,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            value,
        });
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    /// Copies stored values into `model`. Every parameter must be present with
    /// a matching shape; extra tensors (optimizer state) are ignored.
    pub fn apply_to(&self, model: &mut dyn Module) -> Result<()> {
        for p in model.params_mut() {
            let t = self
                .get(&p.name)
                .ok_or_else(|| bad(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(bad(format!(
                    "{}: stored shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value.assign(t);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut seen = BTreeSet::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(bad(format!("duplicate tensor name {}", t.name)));
            }
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.value.shape().to_vec(),
                offset,
            });
            offset += t.value.len();
        }
        let header = serde_json::to_vec(&Header {
            dtype: "f64".into(),
            endianness: "little".into(),
            tensors: entries,
            metadata: self.metadata.clone(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in t.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..body])?;
        if header.dtype != "f64" || header.endianness != "little" {
            return Err(bad(format!(
                "unsupported dtype/endianness {}/{}",
                header.dtype, header.endianness
            )));
        }
        let data = &bytes[body..];
        if !data.len().is_multiple_of(8) {
            return Err(bad("data section is not a whole number of f64 values"));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let slice = e
                .offset
                .checked_add(n)
                .and_then(|end| values.get(e.offset..end))
                .ok_or_else(|| bad(format!("{} runs past the data section", e.name)))?;
            let value = ArrayD::from_shape_vec(IxDyn(&e.shape), slice.to_vec()).map_err(|err| bad(err.to_string()))?;
            tensors.push(NamedTensor { name: e.name, value });
        }
        Ok(Checkpoint {
            tensors,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{BackboneConfig, MobileNetV1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = MobileNetV1::new(BackboneConfig::with_depth_multiplier(0.25), &mut rng).unwrap();
        let ck = Checkpoint::from_module(&net, serde_json::json!({"step": 3}));
        let b1 = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&b1).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), b1);
    }

    #[test]
    fn apply_restores_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = MobileNetV1::new(BackboneConfig::with_depth_multiplier(0.25), &mut rng).unwrap();
        let mut b = MobileNetV1::new(BackboneConfig::with_depth_multiplier(0.25), &mut rng).unwrap();
        Checkpoint::from_module(&a, serde_json::Value::Null).apply_to(&mut b).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.value, q.value);
        }
        assert!(b.params().iter().any(|p| p.name == "backbone.conv1.dw.bn_var"));
        assert!(b.params().iter().any(|p| p.name == "backbone.conv13.pw.weight"));
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
        let mut ck = Checkpoint {
            tensors: Vec::new(),
            metadata: serde_json::Value::Null,
        };
        ck.push("x", ArrayD::zeros(IxDyn(&[2, 2])));
        let mut b = ck.to_bytes().unwrap();
        b.truncate(b.len() - 8);
        assert!(Checkpoint::from_bytes(&b).is_err());
        ck.push("x", ArrayD::zeros(IxDyn(&[1])));
        assert!(ck.to_bytes().is_err());
    }
}
