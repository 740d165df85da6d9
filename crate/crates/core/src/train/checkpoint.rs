//! Binary checkpoint container.
//!
//! Layout: magic `RWGN`, format version (u32 LE), header length (u64 LE),
//! JSON header, then every tensor as little-endian f32 in directory order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pool::{ImagePool, RngState};
use super::{TrainConfig, TrainState};
use crate::nets::{LayerSpec, NetMeta, Network};
use crate::tensor::{AdamState, Tensor};

pub const MAGIC: &[u8; 4] = b"RWGN";
pub const VERSION: u32 = 1;
const PREFIX: usize = 16;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset within the payload.
    pub offset: u64,
    /// Byte length.
    pub len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetEntry {
    name: String,
    meta: NetMeta,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OptEntry {
    name: String,
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    step_count: u64,
    buffers: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoolEntry {
    name: String,
    capacity: usize,
    rng: RngState,
    images: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Header {
    config: TrainConfig,
    epoch: usize,
    step: u64,
    networks: Vec<NetEntry>,
    optimizers: Vec<OptEntry>,
    pools: Vec<PoolEntry>,
    pub tensors: Vec<TensorEntry>,
}

struct Payload {
    entries: Vec<TensorEntry>,
    bytes: Vec<u8>,
}

impl Payload {
    fn push(&mut self, name: String, shape: &[usize], data: &[f32]) {
        let offset = self.bytes.len() as u64;
        for v in data {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(TensorEntry { name, shape: shape.to_vec(), offset, len: data.len() as u64 * 4 });
    }
}

/// Serialize a training state to checkpoint bytes.
pub fn to_bytes(state: &TrainState) -> Vec<u8> {
    let mut payload = Payload { entries: Vec::new(), bytes: Vec::new() };
    let mut networks = Vec::new();
    for (name, net) in &state.nets {
        for p in &net.params {
            payload.push(format!("net/{name}/{}", p.name), p.tensor.shape(), &p.tensor.data());
        }
        networks.push(NetEntry { name: name.clone(), meta: net.meta.clone(), layers: net.layers.clone() });
    }
    let mut optimizers = Vec::new();
    for (name, opt) in &state.optims {
        for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
            payload.push(format!("adam/{name}/m/{i}"), &[m.len()], m);
            payload.push(format!("adam/{name}/v/{i}"), &[v.len()], v);
        }
        optimizers.push(OptEntry {
            name: name.clone(),
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            step_count: opt.step_count,
            buffers: opt.m.len(),
        });
    }
    let mut pools = Vec::new();
    for (name, pool) in &state.pools {
        for (i, img) in pool.images.iter().enumerate() {
            payload.push(format!("pool/{name}/{i}"), img.shape(), &img.data());
        }
        pools.push(PoolEntry {
            name: name.clone(),
            capacity: pool.capacity,
            rng: RngState::capture(&pool.rng),
            images: pool.images.len(),
        });
    }
    let header = Header {
        config: state.config.clone(),
        epoch: state.epoch,
        step: state.step,
        networks,
        optimizers,
        pools,
        tensors: payload.entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(PREFIX + json.len() + payload.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload.bytes);
    out
}

/// Parse the fixed prefix and JSON header; returns the header and the
/// payload slice.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::Format("missing RWGN magic".into()));
    }
    if bytes.len() < PREFIX {
        return Err(CheckpointError::Corrupt("truncated prefix".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let hend = (PREFIX as u64).checked_add(hlen).filter(|&e| e <= bytes.len() as u64);
    let Some(hend) = hend else {
        return Err(CheckpointError::Corrupt(format!("header of {hlen} bytes exceeds file")));
    };
    let header: Header = serde_json::from_slice(&bytes[PREFIX..hend as usize])
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    Ok((header, &bytes[hend as usize..]))
}

fn tensor_values(e: &TensorEntry, payload: &[u8], expected: u64) -> Result<Vec<f32>> {
    let numel: usize = e.shape.iter().product();
    if e.len != numel as u64 * 4 {
        return Err(CheckpointError::Corrupt(format!("{}: length {} for shape {:?}", e.name, e.len, e.shape)));
    }
    if e.offset != expected {
        return Err(CheckpointError::Corrupt(format!("{}: offset {} is not contiguous", e.name, e.offset)));
    }
    let end = e.offset.checked_add(e.len).filter(|&x| x <= payload.len() as u64);
    let Some(end) = end else {
        return Err(CheckpointError::Corrupt(format!("{}: payload truncated", e.name)));
    };
    Ok(payload[e.offset as usize..end as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let (header, payload) = read_header(bytes)?;
    let mut cursor = 0u64;
    let mut entries = header.tensors.iter();
    let mut next = |prefix: &str| -> Result<(String, Vec<usize>, Vec<f32>)> {
        let e = entries.next().ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor for {prefix}")))?;
        let name = e
            .name
            .strip_prefix(prefix)
            .ok_or_else(|| CheckpointError::Corrupt(format!("expected {prefix}*, found {}", e.name)))?
            .to_string();
        let values = tensor_values(e, payload, cursor)?;
        cursor += e.len;
        Ok((name, e.shape.clone(), values))
    };

    let mut nets = Vec::new();
    for n in &header.networks {
        let count = n
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. } | LayerSpec::InstanceNorm { .. }))
            .count()
            * 2;
        let prefix = format!("net/{}/", n.name);
        let values = (0..count).map(|_| next(&prefix)).collect::<Result<Vec<_>>>()?;
        let net = Network::from_parts(n.meta.clone(), n.layers.clone(), values)
            .map_err(|e| CheckpointError::Corrupt(format!("network {}: {e}", n.name)))?;
        nets.push((n.name.clone(), net));
    }
    let mut optims = Vec::new();
    for o in &header.optimizers {
        let mut st = AdamState::new(o.lr, o.beta1);
        st.beta2 = o.beta2;
        st.eps = o.eps;
        st.step_count = o.step_count;
        for i in 0..o.buffers {
            st.m.push(next(&format!("adam/{}/m/", o.name)).and_then(|(n, _, v)| check_index(n, i, v))?);
            st.v.push(next(&format!("adam/{}/v/", o.name)).and_then(|(n, _, v)| check_index(n, i, v))?);
        }
        optims.push((o.name.clone(), st));
    }
    let mut pools = Vec::new();
    for p in &header.pools {
        let rng = p.rng.restore().ok_or_else(|| CheckpointError::Corrupt(format!("pool {} rng state", p.name)))?;
        let mut pool = ImagePool::new(p.capacity, rng);
        for i in 0..p.images {
            let (n, shape, v) = next(&format!("pool/{}/", p.name))?;
            let v = check_index(n, i, v)?;
            pool.images.push(Tensor::from_vec(&shape, v).map_err(|e| CheckpointError::Corrupt(e.to_string()))?);
        }
        pools.push((p.name.clone(), pool));
    }
    if entries.next().is_some() {
        return Err(CheckpointError::Corrupt("unreferenced tensors in directory".into()));
    }
    if cursor != payload.len() as u64 {
        return Err(CheckpointError::Corrupt(format!("{} trailing payload bytes", payload.len() as u64 - cursor)));
    }
    Ok(TrainState { config: header.config, epoch: header.epoch, step: header.step, nets, optims, pools })
}

fn check_index(name: String, i: usize, v: Vec<f32>) -> Result<Vec<f32>> {
    if name == i.to_string() {
        Ok(v)
    } else {
        Err(CheckpointError::Corrupt(format!("expected index {i}, found {name}")))
    }
}

/// Write atomically through a temporary file in the same directory.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("rwgn.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(state))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    from_bytes(&fs::read(path)?)
}
