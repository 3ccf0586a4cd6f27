//! Dataset files: `ESTDATA1`, a `u32`-length JSON header, then for every
//! sample its inputs and targets as little-endian `f64` rows followed by one
//! mask byte per timestep.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, SampleKind, Split, Task, TaskSample};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ESTDATA1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub task: Task,
    pub config_hash: String,
    pub seed: u64,
    pub split: Split,
    pub samples: usize,
    pub length: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub kind: SampleKind,
}

pub fn write_split(path: &Path, header: &ExportHeader, samples: &[TaskSample]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for s in samples {
        for v in s.inputs.data().iter().chain(s.targets.data()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(s.eval_mask.iter().map(|&m| u8::from(m)));
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Writes one file per split plus `config.toml`; returns the paths written.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for split in Split::ALL {
        let samples = ds.split(split);
        let header = ExportHeader {
            task: ds.config.task,
            config_hash: ds.config.hash(),
            seed: ds.seed,
            split,
            samples: samples.len(),
            length: samples.first().map_or(0, TaskSample::len),
            input_dim: ds.dims.input_dim,
            output_dim: ds.dims.output_dim,
            kind: ds.dims.kind,
        };
        let path = dir.join(format!("{}-{}.estdata", ds.config.task, split.name()));
        write_split(&path, &header, samples)?;
        written.push(path);
    }
    let echo = toml::to_string(&ds.config).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, format!("# seed = {}\n{echo}", ds.seed))
        .map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

pub fn read_split(path: &Path) -> Result<(ExportHeader, Vec<TaskSample>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |detail: &str| Error::Data {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a dataset file (bad magic)"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: ExportHeader =
        serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
    let (t, i, o) = (header.length, header.input_dim, header.output_dim);
    let per = 8 * t * (i + o) + t;
    let body = &bytes[12 + len..];
    if body.len() != per * header.samples {
        return Err(bad("body size does not match header"));
    }
    let floats = |b: &[u8]| -> Vec<f64> {
        b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    let samples = body
        .chunks_exact(per.max(1))
        .take(header.samples)
        .map(|chunk| {
            let (x, rest) = chunk.split_at(8 * t * i);
            let (y, m) = rest.split_at(8 * t * o);
            Ok(TaskSample {
                inputs: Tensor::matrix(t, i, floats(x))?,
                targets: Tensor::matrix(t, o, floats(y))?,
                eval_mask: m.iter().map(|&b| b != 0).collect(),
                kind: header.kind,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, samples))
}
