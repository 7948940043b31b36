//! Versioned binary checkpoint archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   b"DCENCKPT"
//! u32     format version
//! u64     metadata length, then that many bytes of JSON
//! u32     tensor count
//! tensor* u32 name length, name (UTF-8), u32 ndim, u64 dims[ndim], f64 data
//! ```
//!
//! Metadata holds the architecture, the training config, the step counter
//! and the queue bookkeeping. Tensors are the parameters and buffers of
//! every network, the optimizer velocities and the queue buffer, in a fixed
//! order, so identical states encode to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::encoders::{init_encoders, ArchConfig, EncoderSet};
use crate::error::{DcenError, Result};
use crate::losses::NegativeQueue;
use crate::nn::Parameters;
use crate::optim::Sgd;
use crate::trainer::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"DCENCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    arch: ArchConfig,
    config: TrainConfig,
    step: u64,
    queue_capacity: usize,
    queue_len: usize,
    queue_cursor: usize,
}

fn corrupt(msg: impl Into<String>) -> DcenError {
    DcenError::Checkpoint(msg.into())
}

fn write_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: impl Iterator<Item = f64>) {
    out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
    out.extend_from_slice(name.as_bytes());
    out.write_u32::<LittleEndian>(shape.len() as u32).unwrap();
    for &d in shape {
        out.write_u64::<LittleEndian>(d as u64).unwrap();
    }
    for v in data {
        out.write_f64::<LittleEndian>(v).unwrap();
    }
}

pub fn encode(state: &TrainState, cfg: &TrainConfig) -> Vec<u8> {
    let meta = Metadata {
        arch: state.encoders.arch.clone(),
        config: cfg.clone(),
        step: state.step,
        queue_capacity: state.queue.capacity(),
        queue_len: state.queue.len(),
        queue_cursor: state.queue.cursor(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u64::<LittleEndian>(json.len() as u64).unwrap();
    out.extend_from_slice(&json);

    let enc = &state.encoders;
    let params = enc.params();
    let buffers = enc.buffers();
    let velocity = state.optimizer.velocity();
    let count = params.len() + buffers.len() + velocity.len() + 1;
    out.write_u32::<LittleEndian>(count as u32).unwrap();
    for (name, v) in &params {
        write_tensor(&mut out, &format!("param.{name}"), v.shape(), v.iter().copied());
    }
    for (name, v) in &buffers {
        write_tensor(&mut out, &format!("buffer.{name}"), v.shape(), v.iter().copied());
    }
    for (name, v) in velocity {
        write_tensor(&mut out, &format!("velocity.{name}"), v.shape(), v.iter().copied());
    }
    let q = state.queue.buffer();
    write_tensor(&mut out, "queue.buffer", q.shape(), q.iter().copied());
    out
}

fn read_header(r: &mut Cursor<&[u8]>) -> Result<Metadata> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic; not a dcen checkpoint"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated header"))?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    let len = r.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated header"))?;
    let remaining = r.get_ref().len() as u64 - r.position();
    if len > remaining {
        return Err(corrupt("metadata length exceeds file size"));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|_| corrupt("truncated metadata"))?;
    serde_json::from_slice(&json).map_err(|e| corrupt(format!("bad metadata: {e}")))
}

fn read_tensors(r: &mut Cursor<&[u8]>) -> Result<BTreeMap<String, ArrayD<f64>>> {
    let trunc = |_| corrupt("truncated tensor section");
    let count = r.read_u32::<LittleEndian>().map_err(trunc)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut name = vec![0u8; name_len.min(4096)];
        if name_len > 4096 {
            return Err(corrupt("tensor name too long"));
        }
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let ndim = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if ndim > 8 {
            return Err(corrupt(format!("tensor {name} has {ndim} dims")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u64::<LittleEndian>().map_err(trunc)? as usize);
        }
        let n: usize = shape.iter().product();
        let remaining = (r.get_ref().len() as u64 - r.position()) / 8;
        if n as u64 > remaining {
            return Err(corrupt(format!("tensor {name} exceeds file size")));
        }
        let mut data = vec![0.0; n];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(trunc)?;
        let arr = ArrayD::from_shape_vec(IxDyn(&shape), data).map_err(|e| corrupt(e.to_string()))?;
        if out.insert(name.clone(), arr).is_some() {
            return Err(corrupt(format!("duplicate tensor {name}")));
        }
    }
    if r.position() != r.get_ref().len() as u64 {
        return Err(corrupt("trailing bytes after tensor section"));
    }
    Ok(out)
}

fn fill_encoders(enc: &mut EncoderSet, tensors: &mut BTreeMap<String, ArrayD<f64>>) -> Result<()> {
    let mut take = |kind: &str, name: &str, mut dst: ndarray::ArrayViewMutD<'_, f64>| -> Result<()> {
        let key = format!("{kind}.{name}");
        let src = tensors.remove(&key).ok_or_else(|| corrupt(format!("missing tensor {key}")))?;
        if src.shape() != dst.shape() {
            return Err(DcenError::DimensionMismatch(format!(
                "tensor {key} has shape {:?}, architecture expects {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.assign(&src);
        Ok(())
    };
    for (name, dst) in enc.params_mut() {
        take("param", &name, dst)?;
    }
    for (name, dst) in enc.buffers_mut() {
        take("buffer", &name, dst)?;
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<(TrainState, TrainConfig)> {
    let mut r = Cursor::new(bytes);
    let meta = read_header(&mut r)?;
    let mut tensors = read_tensors(&mut r)?;
    let mut encoders = init_encoders(&meta.arch, 0)?;
    fill_encoders(&mut encoders, &mut tensors)?;

    let queue_buf = tensors
        .remove("queue.buffer")
        .ok_or_else(|| corrupt("missing tensor queue.buffer"))?
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|_| corrupt("queue buffer must be 2-D"))?;
    if queue_buf.dim() != (meta.queue_capacity, meta.arch.embed_dim) {
        return Err(corrupt("queue buffer shape disagrees with metadata"));
    }
    let queue = NegativeQueue::from_parts(Array2::from(queue_buf), meta.queue_len, meta.queue_cursor)?;

    let mut optimizer = Sgd::new(meta.config.sgd_momentum, meta.config.weight_decay);
    let known: std::collections::BTreeSet<String> = encoders.params().into_iter().map(|(n, _)| n).collect();
    for (name, v) in tensors {
        let Some(param) = name.strip_prefix("velocity.") else {
            return Err(corrupt(format!("unexpected tensor {name}")));
        };
        if !known.contains(param) {
            return Err(corrupt(format!("velocity for unknown parameter {param}")));
        }
        optimizer.set_velocity(param.to_string(), v);
    }
    Ok((TrainState { encoders, queue, optimizer, step: meta.step }, meta.config))
}

pub fn save(path: &Path, state: &TrainState, cfg: &TrainConfig) -> Result<()> {
    fs::write(path, encode(state, cfg)).map_err(|e| DcenError::io(path, e))
}

pub fn load(path: &Path) -> Result<(TrainState, TrainConfig)> {
    let bytes = fs::read(path).map_err(|e| DcenError::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentationSpec;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::trainer::{train, ModelConfig};

    fn run(steps: u64) -> (TrainState, TrainConfig) {
        let ds = generate_synthetic(&SynthConfig {
            num_seen: 3,
            num_unseen: 2,
            attr_dim: 6,
            samples_per_class: 8,
            image_size: 16,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            steps,
            queue_capacity: 6,
            eval_every: 0,
            augmentation: AugmentationSpec { out_size: 16, ..AugmentationSpec::default() },
            model: ModelConfig { embed_dim: 8, conv_widths: vec![4], ..ModelConfig::default() },
            ..TrainConfig::default()
        };
        (train(&ds, &cfg, None).unwrap().state, cfg)
    }

    #[test]
    fn round_trip_is_exact() {
        let (state, cfg) = run(2);
        let bytes = encode(&state, &cfg);
        let (back, cfg_back) = decode(&bytes).unwrap();
        assert_eq!(back, state);
        assert_eq!(cfg_back, cfg);
        assert_eq!(encode(&back, &cfg_back), bytes);
    }

    #[test]
    fn tampered_header_is_rejected() {
        let (state, cfg) = run(0);
        let mut bytes = encode(&state, &cfg);
        bytes[8] = 9;
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        bytes[0] = b'X';
        assert!(decode(&bytes).unwrap_err().to_string().contains("magic"));
        let ok = encode(&state, &cfg);
        assert!(decode(&ok[..ok.len() - 3]).is_err());
    }
}
