//! Checkpoint serialization: a versioned little-endian binary format with a
//! whole-file SHA-256 checksum.
//!
//! Layout: magic `PGNC`, format version, the NetSpec (input shape, layers,
//! action count), then each column (seed, frozen flag, named parameter
//! tensors in sorted id order), then 32 checksum bytes over everything
//! before them. Canonical ordering makes save→load→save byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Column, LayerSpec, NetSpec, ParamId, ProgressiveNetwork};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PGNC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checksum mismatch: file is corrupt")]
    ChecksumMismatch,
    #[error("truncated checkpoint while reading {context}")]
    Truncated { context: &'static str },
    #[error("malformed checkpoint field: {0}")]
    Malformed(String),
}

// ── Writing ─────────────────────────────────────────────────────────────

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.push(0); // dtype 0 = f64
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the network to its canonical byte form (checksum included).
pub fn to_bytes(net: &ProgressiveNetwork) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);

    let spec = net.spec();
    put_u32(&mut out, spec.input.len() as u32);
    for &d in &spec.input {
        put_u32(&mut out, d as u32);
    }
    put_u32(&mut out, spec.layers.len() as u32);
    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv { width, kernel, stride } => {
                out.push(0);
                put_u32(&mut out, *width as u32);
                put_u32(&mut out, kernel.0 as u32);
                put_u32(&mut out, kernel.1 as u32);
                put_u32(&mut out, stride.0 as u32);
                put_u32(&mut out, stride.1 as u32);
            }
            LayerSpec::Dense { width } => {
                out.push(1);
                put_u32(&mut out, *width as u32);
                for _ in 0..4 {
                    put_u32(&mut out, 0);
                }
            }
        }
    }
    put_u32(&mut out, spec.n_actions as u32);

    put_u32(&mut out, net.n_columns() as u32);
    for column in net.columns() {
        put_u64(&mut out, column.seed());
        out.push(column.is_frozen() as u8);
        let ids: Vec<ParamId> = column.param_ids().collect();
        put_u32(&mut out, ids.len() as u32);
        for id in ids {
            put_str(&mut out, &id.to_string());
            put_tensor(&mut out, column.param(id).expect("id came from this column"));
        }
    }

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint(net: &ProgressiveNetwork, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(net))?;
    Ok(())
}

// ── Reading ─────────────────────────────────────────────────────────────

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bytes.len() {
            return Err(CheckpointError::Truncated { context });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self, context: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, context)?[0])
    }

    fn u32(&mut self, context: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }

    fn u64(&mut self, context: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, context)?.try_into().unwrap()))
    }

    fn str(&mut self, context: &'static str) -> Result<String, CheckpointError> {
        let len = self.u32(context)? as usize;
        let raw = self.take(len, context)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CheckpointError::Malformed(format!("non-utf8 {context}")))
    }

    fn tensor(&mut self, context: &'static str) -> Result<Tensor, CheckpointError> {
        let dtype = self.u8(context)?;
        if dtype != 0 {
            return Err(CheckpointError::Malformed(format!("unknown dtype {dtype} in {context}")));
        }
        let ndim = self.u32(context)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32(context)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = self.take(numel * 8, context)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("{context}: {e}")))
    }
}

/// Parses and validates a checkpoint from its byte form.
pub fn from_bytes(bytes: &[u8]) -> Result<ProgressiveNetwork, CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(CheckpointError::Truncated { context: "header" });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != tail {
        return Err(CheckpointError::ChecksumMismatch);
    }

    let mut c = Cursor { bytes: body, at: 4 };
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version, supported: VERSION });
    }

    let n_input = c.u32("input shape")? as usize;
    let mut input = Vec::with_capacity(n_input);
    for _ in 0..n_input {
        input.push(c.u32("input shape")? as usize);
    }
    let n_layers = c.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = c.u8("layer kind")?;
        let width = c.u32("layer width")? as usize;
        let kh = c.u32("layer kernel")? as usize;
        let kw = c.u32("layer kernel")? as usize;
        let sh = c.u32("layer stride")? as usize;
        let sw = c.u32("layer stride")? as usize;
        layers.push(match kind {
            0 => LayerSpec::Conv { width, kernel: (kh, kw), stride: (sh, sw) },
            1 => LayerSpec::Dense { width },
            k => return Err(CheckpointError::Malformed(format!("unknown layer kind {k}"))),
        });
    }
    let n_actions = c.u32("action count")? as usize;
    let spec = NetSpec { input, layers, n_actions };
    spec.hidden_shapes()
        .map_err(|e| CheckpointError::Malformed(format!("invalid spec: {e}")))?;

    let n_columns = c.u32("column count")? as usize;
    let mut columns = Vec::with_capacity(n_columns);
    for ci in 0..n_columns {
        let seed = c.u64("column seed")?;
        let frozen = c.u8("frozen flag")? != 0;
        let n_params = c.u32("parameter count")? as usize;
        let mut params = BTreeMap::new();
        for _ in 0..n_params {
            let name = c.str("parameter name")?;
            let id: ParamId = name
                .parse()
                .map_err(|e| CheckpointError::Malformed(format!("{e}")))?;
            if id.column as usize != ci + 1 {
                return Err(CheckpointError::Malformed(format!(
                    "parameter {name} filed under column {}",
                    ci + 1
                )));
            }
            let tensor = c.tensor("parameter payload")?;
            params.insert(id, tensor);
        }
        let expected = ProgressiveNetwork::param_shapes_for_column(&spec, ci + 1)
            .map_err(|e| CheckpointError::Malformed(format!("{e}")))?;
        if expected.len() != params.len() {
            return Err(CheckpointError::Malformed(format!(
                "column {} has {} parameters, spec implies {}",
                ci + 1,
                params.len(),
                expected.len()
            )));
        }
        for (id, shape) in expected {
            match params.get(&id) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(CheckpointError::Malformed(format!(
                        "{id} has shape {:?}, spec implies {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(CheckpointError::Malformed(format!("missing parameter {id}"))),
            }
        }
        columns.push(Column { seed, frozen, params });
    }
    if c.at != body.len() {
        return Err(CheckpointError::Malformed("trailing bytes after last column".into()));
    }

    Ok(ProgressiveNetwork { spec, columns })
}

pub fn load_checkpoint(path: &Path) -> Result<ProgressiveNetwork, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
