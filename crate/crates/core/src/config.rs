//! Experiment files: a TOML document with optional `[task]`, `[model]`,
//! `[train]` and `[sweep]` tables. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    configs_for, named_config, named_configs, Family, ModelConfig, NamedConfig, SizeBucket,
};
use crate::stream::{Task, TaskConfig, TaskOverrides};
use crate::training::{SweepPlan, TrainConfig, GRID_LEARNING_RATES, GRID_SEEDS};

fn prefixed(table: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::config(format!("{table} {msg}")),
        other => other,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// A published configuration such as `est-1-1k`.
    pub name: Option<String>,
    /// An explicit configuration; `input_dim`/`output_dim` come from the task.
    pub config: Option<ModelConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Tasks at their published settings; defaults to the `[task]` table.
    pub tasks: Option<Vec<Task>>,
    /// Published configuration names.
    pub configs: Option<Vec<String>>,
    /// Every published configuration of these families and sizes.
    pub families: Option<Vec<Family>>,
    pub sizes: Option<Vec<SizeBucket>>,
    pub learning_rates: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub results: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub task: Option<TaskOverrides>,
    pub model: Option<ModelSpec>,
    pub train: Option<TrainOverrides>,
    pub sweep: Option<SweepSpec>,
    /// Directory holding the MNIST IDX files.
    pub data_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: ExperimentSpec =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        spec.check_ranges()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn check_ranges(&self) -> Result<()> {
        if let Some(t) = &self.train {
            let probe = TrainConfig {
                learning_rate: t.learning_rate.unwrap_or(1e-3),
                weight_decay: t.weight_decay.unwrap_or(0.0),
                batch_size: t.batch_size.unwrap_or(1),
                epochs: t.epochs.unwrap_or(usize::MAX),
                patience: t.patience.unwrap_or(1),
                seed: 0,
                clip_norm: t.clip_norm.unwrap_or(1.0),
            };
            probe.validate().map_err(|e| prefixed("[train]", e))?;
        }
        if let Some(s) = &self.sweep {
            if let Some(lrs) = &s.learning_rates {
                if lrs.is_empty() || lrs.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
                    return Err(Error::config(
                        "[sweep] learning_rates: need positive finite values",
                    ));
                }
            }
            if s.seeds.as_ref().is_some_and(Vec::is_empty) {
                return Err(Error::config("[sweep] seeds: must not be empty"));
            }
            if s.workers == Some(0) {
                return Err(Error::config("[sweep] workers: must be positive"));
            }
        }
        Ok(())
    }

    /// The `[task]` table over published defaults, with `[train]` batch,
    /// epoch and patience overrides folded in.
    pub fn task_config(&self, task: Option<Task>) -> Result<TaskConfig> {
        let mut o = self.task.clone().unwrap_or_default();
        match (task, o.task) {
            (Some(t), Some(existing)) if t != existing => {
                return Err(Error::config(format!(
                    "task {t} requested but the config file describes {existing}"
                )));
            }
            (Some(t), _) => o.task = Some(t),
            (None, None) => {
                return Err(Error::config(
                    "task: missing (set [task] task = ... or pass --task)",
                ))
            }
            _ => {}
        }
        let mut cfg = TaskConfig::from_overrides(&o).map_err(|e| prefixed("[task]", e))?;
        self.fold_train_schedule(&mut cfg)?;
        Ok(cfg)
    }

    fn fold_train_schedule(&self, cfg: &mut TaskConfig) -> Result<()> {
        if let Some(t) = &self.train {
            if let Some(v) = t.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = t.epochs {
                cfg.epochs = v;
                cfg.patience = cfg.patience.min(v);
            }
            if let Some(v) = t.patience {
                cfg.patience = v;
            }
        }
        cfg.validate()
    }

    pub fn model(&self, name: Option<&str>) -> Result<NamedConfig> {
        if let Some(n) = name {
            return named_config(n);
        }
        let spec = self
            .model
            .as_ref()
            .ok_or_else(|| Error::config("model: missing (set [model] name or pass --model)"))?;
        match (&spec.name, &spec.config) {
            (Some(n), None) => named_config(n),
            (None, Some(c)) => {
                let count = c.count_parameters();
                let bucket = SizeBucket::ALL
                    .into_iter()
                    .min_by(|a, b| {
                        let d = |s: SizeBucket| {
                            ((count.max(1) as f64).ln() - (s.nominal() as f64).ln()).abs()
                        };
                        d(*a).total_cmp(&d(*b))
                    })
                    .expect("four buckets");
                Ok(NamedConfig {
                    name: format!("{}-custom", c.family()),
                    bucket,
                    config: c.clone(),
                })
            }
            _ => Err(Error::config("[model]: set exactly one of name or config")),
        }
    }

    pub fn train_config(
        &self,
        task: &TaskConfig,
        lr: Option<f64>,
        seed: Option<u64>,
    ) -> Result<TrainConfig> {
        let t = self.train.clone().unwrap_or_default();
        let learning_rate = lr
            .or(t.learning_rate)
            .ok_or_else(|| Error::config("train.learning_rate: missing (set it or pass --lr)"))?;
        let mut cfg = TrainConfig::for_task(task, learning_rate, seed.or(t.seed).unwrap_or(0));
        if let Some(v) = t.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = t.clip_norm {
            cfg.clip_norm = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sweep_plan(&self) -> Result<SweepPlan> {
        let s = self
            .sweep
            .clone()
            .ok_or_else(|| Error::config("[sweep]: missing"))?;
        let tasks = match &s.tasks {
            Some(names) if !names.is_empty() => names
                .iter()
                .map(|&t| {
                    let mut cfg = if self.task.as_ref().and_then(|o| o.task) == Some(t) {
                        self.task_config(Some(t))?
                    } else {
                        TaskConfig::standard(t)
                    };
                    self.fold_train_schedule(&mut cfg)?;
                    Ok(cfg)
                })
                .collect::<Result<Vec<_>>>()?,
            Some(_) => return Err(Error::config("[sweep] tasks: must not be empty")),
            None => vec![self.task_config(None)?],
        };
        let mut configs: Vec<NamedConfig> = Vec::new();
        if let Some(names) = &s.configs {
            for n in names {
                configs.push(named_config(n)?);
            }
        }
        if s.families.is_some() || s.sizes.is_some() {
            let families = s.families.clone().unwrap_or_else(|| Family::ALL.to_vec());
            let sizes = s.sizes.clone().unwrap_or_else(|| SizeBucket::ALL.to_vec());
            for f in &families {
                for b in &sizes {
                    configs.extend(configs_for(*f, *b));
                }
            }
        }
        if configs.is_empty() {
            if self.model.is_some() {
                configs.push(self.model(None)?);
            } else {
                configs = named_configs();
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        configs.retain(|c| seen.insert(c.name.clone()));
        let plan = SweepPlan {
            tasks,
            configs,
            learning_rates: s
                .learning_rates
                .unwrap_or_else(|| GRID_LEARNING_RATES.to_vec()),
            seeds: s.seeds.unwrap_or_else(|| GRID_SEEDS.to_vec()),
        };
        plan.validate()?;
        Ok(plan)
    }
}
