//! Grid execution over tasks × configurations × learning rates × seeds.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc;

use rayon::prelude::*;

use super::store::{ResultsStore, RunRecord, RunStatus};
use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{Model, NamedConfig};
use crate::stream::{dims, generate_with_data, Dataset, Task, TaskConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub tasks: Vec<TaskConfig>,
    pub configs: Vec<NamedConfig>,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Cell {
    task: usize,
    config: usize,
    learning_rate: f64,
    seed: u64,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty()
            || self.configs.is_empty()
            || self.learning_rates.is_empty()
            || self.seeds.is_empty()
        {
            return Err(Error::config(
                "sweep grid: every axis needs at least one entry",
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tasks.len() * self.configs.len() * self.learning_rates.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.len());
        for task in 0..self.tasks.len() {
            for config in 0..self.configs.len() {
                for &learning_rate in &self.learning_rates {
                    for &seed in &self.seeds {
                        out.push(Cell {
                            task,
                            config,
                            learning_rate,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    fn key_of(&self, c: &Cell) -> super::store::RecordKey {
        super::store::RecordKey {
            task: self.tasks[c.task].task,
            config: self.configs[c.config].name.clone(),
            learning_rate_bits: c.learning_rate.to_bits(),
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    pub workers: usize,
    pub resume: bool,
    /// Stop after this many new runs, leaving the rest for a later resume.
    pub max_runs: Option<usize>,
    pub data_dir: Option<PathBuf>,
    pub verbose: bool,
}

/// Trains one grid cell. Training failures become a failed record rather
/// than an error.
pub fn run_one(
    task: &TaskConfig,
    data: &Dataset,
    named: &NamedConfig,
    learning_rate: f64,
    seed: u64,
) -> RunRecord {
    run_with(
        task,
        data,
        named,
        &TrainConfig::for_task(task, learning_rate, seed),
    )
    .0
}

/// Like [`run_one`] with an explicit training configuration; also hands back
/// the trained model when training succeeded.
pub fn run_with(
    task: &TaskConfig,
    data: &Dataset,
    named: &NamedConfig,
    cfg: &TrainConfig,
) -> (RunRecord, Option<Model>) {
    let d = dims(task);
    let mut record = RunRecord {
        task: task.task,
        family: named.family(),
        size: named.bucket,
        config: named.name.clone(),
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        val_error: f64::NAN,
        test_error: f64::NAN,
        epochs: 0,
        wall_ms: 0,
        status: RunStatus::Ok,
    };
    let config = named
        .config
        .clone()
        .with_io(d.input_dim, d.output_dim)
        .with_seed(cfg.seed);
    let outcome =
        Model::new(&config).and_then(|mut model| train(&mut model, data, cfg).map(|o| (o, model)));
    match outcome {
        Ok((o, model)) => {
            record.val_error = o.val_error;
            record.test_error = o.test_error;
            record.epochs = o.epochs_run;
            record.wall_ms = o.wall_ms;
            (record, Some(model))
        }
        Err(e) => {
            record.status = RunStatus::Failed(e.to_string());
            (record, None)
        }
    }
}

/// Runs every cell not yet in the store and appends each record as it
/// finishes. Returns the records produced by this call.
pub fn sweep(
    plan: &SweepPlan,
    store: &ResultsStore,
    opts: &SweepOptions,
) -> Result<Vec<RunRecord>> {
    plan.validate()?;
    let done = store.completed_keys()?;
    if !done.is_empty() && !opts.resume {
        return Err(Error::config(format!(
            "results store {} already holds {} records; resume to continue it",
            store.path().display(),
            done.len()
        )));
    }
    let mut pending: Vec<Cell> = plan
        .cells()
        .into_iter()
        .filter(|c| !done.contains(&plan.key_of(c)))
        .collect();
    if let Some(limit) = opts.max_runs {
        pending.truncate(limit);
    }
    let mut datasets: BTreeMap<usize, Dataset> = BTreeMap::new();
    for c in &pending {
        if !datasets.contains_key(&c.task) {
            let t = &plan.tasks[c.task];
            datasets.insert(
                c.task,
                generate_with_data(t, t.seed, opts.data_dir.as_deref())?,
            );
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Training(format!("worker pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let mut produced = Vec::with_capacity(pending.len());
    let mut write_error = None;
    std::thread::scope(|scope| {
        scope.spawn(|| {
            pool.install(|| {
                pending.par_iter().for_each_with(tx, |tx, c| {
                    let task = &plan.tasks[c.task];
                    let record = run_one(
                        task,
                        &datasets[&c.task],
                        &plan.configs[c.config],
                        c.learning_rate,
                        c.seed,
                    );
                    let _ = tx.send(record);
                });
            });
        });
        for record in rx {
            if opts.verbose {
                eprintln!(
                    "{} {} lr={} seed={} test_error={} epochs={} {}ms{}",
                    record.task,
                    record.config,
                    record.learning_rate,
                    record.seed,
                    record.test_error,
                    record.epochs,
                    record.wall_ms,
                    match &record.status {
                        RunStatus::Ok => String::new(),
                        RunStatus::Failed(why) => format!(" failed: {why}"),
                    }
                );
            }
            if write_error.is_none() {
                if let Err(e) = store.append(&record) {
                    write_error = Some(e);
                }
            }
            produced.push(record);
        }
    });
    match write_error {
        Some(e) => Err(e),
        None => Ok(produced),
    }
}

/// Task list for a sweep from task names, using the published configs.
pub fn standard_tasks(names: &[Task]) -> Vec<TaskConfig> {
    names.iter().map(|&t| TaskConfig::standard(t)).collect()
}
