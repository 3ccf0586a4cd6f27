//! Self-describing binary model container.
//!
//! Layout: `ESTCKPT\0`, `u32` version, `u32`-length JSON config, `u32`
//! tensor count, then per tensor a `u32`-length name, `u32` rank, `u64`
//! dims and little-endian `f64` values. Fixed reservoir matrices are stored
//! under `fixed.` names next to the trainable ones.

use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"ESTCKPT\0";
pub const VERSION: u32 = 1;

fn fixed_name(layer: usize, unit: usize) -> String {
    format!("fixed.layer{layer}.unit{unit}.w_hat")
}

fn named_tensors(model: &Model) -> Vec<(String, Tensor)> {
    let p = model.params();
    let mut out: Vec<(String, Tensor)> = p
        .names()
        .iter()
        .cloned()
        .zip(p.tensors().iter().map(Tensor::detached))
        .collect();
    if let Model::Est(est) = model {
        for (l, layer) in est.fixed_weights().into_iter().enumerate() {
            for (u, w) in layer.into_iter().enumerate() {
                out.push((fixed_name(l, u), w.clone()));
            }
        }
    }
    out
}

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(&model.config()).map_err(|e| Error::Format(e.to_string()))?;
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let tensors = named_tensors(model);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let len = c.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(c.take(len)?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let mut model = Model::new(&config)?;
    let count = c.u32()? as usize;
    let mut stored = Vec::with_capacity(count);
    for _ in 0..count {
        let n = c.u32()? as usize;
        let name =
            String::from_utf8(c.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        stored.push((name, Tensor::new(shape, data)?));
    }
    if c.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let expected = named_tensors(&model);
    if expected.len() != stored.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model needs {}",
            stored.len(),
            expected.len()
        )));
    }
    for ((want, t), (got, s)) in expected.iter().zip(&stored) {
        if want != got || t.shape() != s.shape() {
            return Err(Error::Format(format!(
                "tensor {got} {:?} does not fit {want} {:?}",
                s.shape(),
                t.shape()
            )));
        }
    }
    let n_params = model.params().len();
    for (slot, (_, t)) in model.params_mut().tensors_mut().iter_mut().zip(&stored) {
        slot.data_mut().copy_from_slice(t.data());
    }
    if let Model::Est(est) = &mut model {
        let mut fixed = stored[n_params..].iter().map(|(_, t)| t.clone());
        let layout: Vec<usize> = est.fixed_weights().iter().map(Vec::len).collect();
        let grouped = layout
            .iter()
            .map(|&k| fixed.by_ref().take(k).collect())
            .collect();
        est.set_fixed_weights(grouped)?;
    }
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
