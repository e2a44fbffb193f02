//! Checkpoint format: magic `HIDF0001`, a `u64` LE manifest length, the JSON
//! manifest (config snapshot, trainer state, tensor table), then the raw
//! little-endian tensor payload. Adam moments are stored as tensors named
//! `adam.m.<param>` and `adam.v.<param>`.

use std::path::Path;

use hidflow_tensor::{DType, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{HidError, Result};
use crate::io::write_atomic;
use crate::layers::Init;
use crate::model::HidFlowNet;
use crate::train::TrainState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HIDF0001";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub optimizer_step: u64,
    pub config: RunConfig,
    pub state: TrainState,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes<T: Real>(
    model: &HidFlowNet<T>,
    config: &RunConfig,
    state: &TrainState,
) -> Result<Vec<u8>> {
    let store = model.store();
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: String, t: &Tensor<T>| {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: T::DTYPE.name().to_string(),
            offset: payload.len() as u64,
        });
        for &v in t.data() {
            v.write_le(&mut payload);
        }
    };
    for id in store.ids() {
        push(store.name(id).to_string(), store.value(id));
    }
    for id in store.ids() {
        let (m, v) = store.moments(id);
        push(format!("adam.m.{}", store.name(id)), m);
        push(format!("adam.v.{}", store.name(id)), v);
    }
    let manifest = Manifest {
        format: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        optimizer_step: store.step(),
        config: config.clone(),
        state: state.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest)
        .map_err(|e| HidError::Data(format!("manifest encoding: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save<T: Real>(
    path: &Path,
    model: &HidFlowNet<T>,
    config: &RunConfig,
    state: &TrainState,
) -> Result<()> {
    write_atomic(path, &to_bytes(model, config, state)?)
}

fn split(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(HidError::Data("not a checkpoint file (bad magic)".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| HidError::Data("truncated checkpoint manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..end])
        .map_err(|e| HidError::Data(format!("bad checkpoint manifest: {e}")))?;
    Ok((manifest, &bytes[end..]))
}

pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    Ok(split(bytes)?.0)
}

/// A loaded checkpoint, with parameters converted to the requested precision.
pub struct Loaded<T> {
    pub model: HidFlowNet<T>,
    pub config: RunConfig,
    pub state: TrainState,
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Loaded<T>> {
    let (manifest, payload) = split(bytes)?;
    manifest.config.validate()?;
    let mut model =
        HidFlowNet::<T>::new(&manifest.config.model, Init::Standard, manifest.config.seed)?;
    let read = |entry: &TensorEntry| -> Result<Tensor<T>> {
        let dtype = DType::parse(&entry.dtype).ok_or_else(|| {
            HidError::Data(format!(
                "tensor `{}` has unknown dtype {}",
                entry.name, entry.dtype
            ))
        })?;
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * dtype.size_of();
        let raw = payload.get(start..end).ok_or_else(|| {
            HidError::Data(format!("tensor `{}` lies outside the payload", entry.name))
        })?;
        let values: Vec<f64> = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::read_le(c) as f64)
                .collect(),
            DType::F64 => raw.chunks_exact(8).map(f64::read_le).collect(),
        };
        Ok(Tensor::from_f64(&entry.shape, &values)?)
    };
    let find = |name: &str| {
        manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| HidError::Data(format!("checkpoint is missing tensor `{name}`")))
    };
    let ids: Vec<_> = model.store().ids().collect();
    if manifest.tensors.len() != 3 * ids.len() {
        return Err(HidError::Data(format!(
            "checkpoint holds {} tensors, model expects {}",
            manifest.tensors.len(),
            3 * ids.len()
        )));
    }
    let store = model.store_mut();
    for id in ids {
        let name = store.name(id).to_string();
        store.set_value(id, read(find(&name)?)?)?;
        let m = read(find(&format!("adam.m.{name}"))?)?;
        let v = read(find(&format!("adam.v.{name}"))?)?;
        store.set_moments(id, m, v)?;
    }
    store.set_step(manifest.optimizer_step);
    Ok(Loaded {
        model,
        config: manifest.config,
        state: manifest.state,
    })
}

pub fn load<T: Real>(path: &Path) -> Result<Loaded<T>> {
    let bytes = std::fs::read(path).map_err(|e| HidError::io(path, e))?;
    from_bytes(&bytes)
}
