//! Self-contained training checkpoints: model configuration, parameter
//! tensors, and optional optimizer state, integrity-checked end to end.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic       8  bytes  "SADNCKPT"
//! version     1  byte   1
//! config      5x u32    a, channels, n, m, stages
//! n_params    u32
//! per param (sorted by name):
//!   name_len  u16, name bytes, shape 4x u64, values numel x f64
//! adam_flag   u8        0 = none, 1 = present
//! if present:
//!   step u64, lr f64, beta1 f64, beta2 f64, eps f64,
//!   first moments  (numel x f64 per param, same order, shapes implied)
//!   second moments (likewise)
//! checksum    u64       FNV-1a over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::model::{fnv1a64, SadnConfig, SadnModel};
use crate::train::AdamState;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SADNCKPT";
const VERSION: u8 = 1;

/// A restored checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SadnModel,
    pub adam: Option<AdamState>,
}

/// Serializes a model and optional optimizer state.
pub fn write_checkpoint(model: &SadnModel, adam: Option<&AdamState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in [
        model.config.a,
        model.config.channels,
        model.config.n,
        model.config.m,
        model.config.stages,
    ] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, tensor) in &model.params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match adam {
        None => out.push(0),
        Some(state) => {
            out.push(1);
            out.extend_from_slice(&state.step.to_le_bytes());
            for v in [state.lr, state.beta1, state.beta2, state.eps] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for moments in [&state.first, &state.second] {
                for name in model.params.keys() {
                    // moments mirror the parameter map; absence is a bug
                    for v in moments[name].data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    let checksum = fnv1a64(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    out
}

/// Parses bytes produced by [`write_checkpoint`].
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 1 + 8 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8-byte tail"));
    if fnv1a64(body) != stored {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }

    let mut cur = Cursor { buf: body, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = cur.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let config = SadnConfig {
        a: cur.u32()? as usize,
        channels: cur.u32()? as usize,
        n: cur.u32()? as usize,
        m: cur.u32()? as usize,
        stages: cur.u32()? as usize,
    };
    let n_params = cur.u32()? as usize;
    let mut params = BTreeMap::new();
    let mut prev_name: Option<String> = None;
    for _ in 0..n_params {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(Error::Format("parameter names out of order".into()));
            }
        }
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = cur.u64()? as usize;
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("parameter shape overflows".into()))?;
        let data = cur.f64s(numel)?;
        params.insert(
            name.clone(),
            Tensor::from_vec(shape, data)
                .map_err(|e| Error::Format(format!("parameter {name}: {e}")))?,
        );
        prev_name = Some(name);
    }
    let model = SadnModel::from_params(config, params)?;

    let adam = match cur.u8()? {
        0 => None,
        1 => {
            let step = cur.u64()?;
            let lr = cur.f64()?;
            let beta1 = cur.f64()?;
            let beta2 = cur.f64()?;
            let eps = cur.f64()?;
            let mut moments = [BTreeMap::new(), BTreeMap::new()];
            for m in &mut moments {
                for (name, tensor) in &model.params {
                    let data = cur.f64s(tensor.numel())?;
                    m.insert(name.clone(), Tensor::from_vec(tensor.shape(), data)?);
                }
            }
            let [first, second] = moments;
            Some(AdamState { step, lr, beta1, beta2, eps, first, second })
        }
        other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
    };
    if cur.pos != cur.buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            cur.buf.len() - cur.pos
        )));
    }
    Ok(Checkpoint { model, adam })
}

/// Writes a checkpoint file.
pub fn save_checkpoint(path: &Path, model: &SadnModel, adam: Option<&AdamState>) -> Result<()> {
    std::fs::write(path, write_checkpoint(model, adam))?;
    Ok(())
}

/// Reads a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&bytes)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let need = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format("tensor length overflows".into()))?;
        let raw = self.take(need)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}
