//! Append-only results file: one tab-separated `key=value` record per line.
//! A final line without its newline is an interrupted write and is skipped.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Family, SizeBucket};
use crate::stream::Task;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub task: Task,
    pub family: Family,
    pub size: SizeBucket,
    pub config: String,
    pub learning_rate: f64,
    pub seed: u64,
    pub val_error: f64,
    pub test_error: f64,
    pub epochs: usize,
    pub wall_ms: u64,
    pub status: RunStatus,
}

/// Identity of a grid cell; two records with equal keys describe the same run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub task: Task,
    pub config: String,
    pub learning_rate_bits: u64,
    pub seed: u64,
}

impl RunRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            task: self.task,
            config: self.config.clone(),
            learning_rate_bits: self.learning_rate.to_bits(),
            seed: self.seed,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Equal in everything except wall time, with errors compared bitwise.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        self.key() == other.key()
            && self.family == other.family
            && self.size == other.size
            && self.val_error.to_bits() == other.val_error.to_bits()
            && self.test_error.to_bits() == other.test_error.to_bits()
            && self.epochs == other.epochs
            && self.status == other.status
    }

    pub fn to_line(&self) -> String {
        let status = match &self.status {
            RunStatus::Ok => "ok".to_string(),
            RunStatus::Failed(why) => format!("failed: {}", why.replace(['\t', '\n', '\r'], " ")),
        };
        let fields = [
            ("task", self.task.name().to_string()),
            ("family", self.family.name().to_string()),
            ("size", self.size.label().to_string()),
            ("config", self.config.clone()),
            ("lr", self.learning_rate.to_string()),
            ("seed", self.seed.to_string()),
            ("val_error", self.val_error.to_string()),
            ("test_error", self.test_error.to_string()),
            ("epochs", self.epochs.to_string()),
            ("wall_ms", self.wall_ms.to_string()),
            ("status", status),
        ];
        fields
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("\t")
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let get = |key: &str| -> Result<String> {
            line.split('\t')
                .find_map(|f| f.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| Error::Format(format!("record is missing {key}: {line:?}")))
        };
        let num = |key: &str, v: String| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Format(format!("{key}={v} is not a number")))
        };
        let int = |key: &str, v: String| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Format(format!("{key}={v} is not an integer")))
        };
        let status = get("status")?;
        let status = if status == "ok" {
            RunStatus::Ok
        } else if let Some(why) = status.strip_prefix("failed: ") {
            RunStatus::Failed(why.to_string())
        } else {
            return Err(Error::Format(format!("unknown status {status:?}")));
        };
        Ok(RunRecord {
            task: Task::parse(&get("task")?).map_err(|e| Error::Format(e.to_string()))?,
            family: Family::parse(&get("family")?).map_err(|e| Error::Format(e.to_string()))?,
            size: SizeBucket::parse(&get("size")?).map_err(|e| Error::Format(e.to_string()))?,
            config: get("config")?,
            learning_rate: num("lr", get("lr")?)?,
            seed: int("seed", get("seed")?)?,
            val_error: num("val_error", get("val_error")?)?,
            test_error: num("test_error", get("test_error")?)?,
            epochs: int("epochs", get("epochs")?)? as usize,
            wall_ms: int("wall_ms", get("wall_ms")?)?,
            status,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResultsStore {
    path: PathBuf,
}

impl ResultsStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ResultsStore { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Every complete record; a missing file is an empty store.
    pub fn load(&self) -> Result<Vec<RunRecord>> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        let complete = match text.rfind('\n') {
            Some(end) => &text[..end],
            None => return Ok(Vec::new()),
        };
        complete
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(RunRecord::parse_line)
            .collect()
    }

    pub fn completed_keys(&self) -> Result<BTreeSet<RecordKey>> {
        Ok(self.load()?.iter().map(RunRecord::key).collect())
    }

    /// Appends one record and flushes it. A torn tail from an earlier crash
    /// is cut off first so the new line starts cleanly.
    pub fn append(&self, record: &RunRecord) -> Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        if let Ok(text) = std::fs::read(&self.path) {
            if !text.is_empty() && !text.ends_with(b"\n") {
                let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                std::fs::write(&self.path, &text[..keep]).map_err(|e| Error::io(&self.path, e))?;
            }
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{}", record.to_line()).map_err(|e| Error::io(&self.path, e))?;
        f.flush().map_err(|e| Error::io(&self.path, e))
    }
}
