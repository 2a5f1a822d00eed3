//! Single-file tensor container: a JSON header followed by raw little-endian
//! values. Used for parameter snapshots, external backbone weights and
//! training checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::elem::Elem;
use crate::optim::{Adam, AdamSlot};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::NnError;

const MAGIC: &[u8; 4] = b"VMCW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    dtype: String,
    meta: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive<T> {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Elem> Archive<T> {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            dtype: T::DTYPE.to_string(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(n, t)| TensorHeader { name: n.clone(), shape: t.shape.clone() }).collect(),
        };
        let hjson = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for (_, t) in &self.tensors {
            for &v in &t.data {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(NnError::Format("not a tensor archive".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(NnError::Format(format!("archive version {version}, expected {VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| NnError::Format("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| NnError::Format(e.to_string()))?;
        if header.dtype != T::DTYPE {
            return Err(NnError::Format(format!("archive holds {}, expected {}", header.dtype, T::DTYPE)));
        }
        let mut pos = 16 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let n: usize = th.shape.iter().product();
            let end = pos + n * T::BYTES;
            let raw = bytes.get(pos..end).ok_or_else(|| NnError::Format(format!("truncated tensor {}", th.name)))?;
            let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            tensors.push((th.name, Tensor::new(th.shape, data)));
            pos = end;
        }
        if pos != bytes.len() {
            return Err(NnError::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { meta: header.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.encode()).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = fs::read(path).map_err(|e| NnError::Io(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

/// Appends every entry of `store` under `prefix`.
pub fn push_store<T: Elem>(archive: &mut Archive<T>, prefix: &str, store: &ParamStore<T>) {
    for e in store.entries() {
        archive.push(format!("{prefix}{}", e.name), e.value.clone());
    }
}

/// Overwrites `store` from entries saved with [`push_store`].
pub fn restore_store<T: Elem>(archive: &Archive<T>, prefix: &str, store: &mut ParamStore<T>) -> Result<(), NnError> {
    for e in store.entries_mut() {
        let key = format!("{prefix}{}", e.name);
        let t = archive.get(&key).ok_or_else(|| NnError::Format(format!("missing tensor {key}")))?;
        if t.shape != e.value.shape {
            return Err(NnError::Format(format!("{key}: shape {:?}, expected {:?}", t.shape, e.value.shape)));
        }
        e.value.data.copy_from_slice(&t.data);
    }
    Ok(())
}

pub fn push_adam<T: Elem>(archive: &mut Archive<T>, prefix: &str, adam: &Adam<T>) {
    for (i, slot) in adam.slots().iter().enumerate() {
        if let Some(s) = slot {
            archive.push(format!("{prefix}{i}.m"), Tensor::new(vec![s.m.len()], s.m.clone()));
            archive.push(format!("{prefix}{i}.v"), Tensor::new(vec![s.v.len()], s.v.clone()));
            archive.push(format!("{prefix}{i}.step"), Tensor::scalar(T::of(s.step as f64)));
        }
    }
}

pub fn restore_adam<T: Elem>(archive: &Archive<T>, prefix: &str, adam: &mut Adam<T>) {
    let slots = (0..adam.slots().len())
        .map(|i| {
            let m = archive.get(&format!("{prefix}{i}.m"))?;
            let v = archive.get(&format!("{prefix}{i}.v"))?;
            let step = archive.get(&format!("{prefix}{i}.step"))?;
            Some(AdamSlot { m: m.data.clone(), v: v.data.clone(), step: step.data[0].f64() as u64 })
        })
        .collect();
    adam.set_slots(slots);
}
