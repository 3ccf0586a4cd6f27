//! The twelve STREAM tasks: configuration, generation, and scoring.
//!
//! Composite inputs use a fixed channel order: symbol (or value) block
//! first, then marker, trigger and mask bits where the task has them. See
//! [`TaskDims`] for the widths.

mod export;
pub mod mnist;
mod tasks;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::rng_for;

pub use export::{read_split, write_dataset, write_split, ExportHeader};
pub use tasks::{
    bracket_depth_ok, is_balanced, lorenz_rk4_step, sinus_signal, LORENZ_DT, LORENZ_TRANSIENT,
};

/// Environment variable naming the directory with the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "EST_LAB_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    DiscretePostcasting,
    ContinuousPostcasting,
    SinusForecasting,
    ChaoticForecasting,
    DiscretePatternCompletion,
    ContinuousPatternCompletion,
    SimpleCopy,
    SelectiveCopy,
    AddingProblem,
    SortingProblem,
    SequentialMnist,
    BracketMatching,
}

impl Task {
    pub const ALL: [Task; 12] = [
        Task::DiscretePostcasting,
        Task::ContinuousPostcasting,
        Task::SinusForecasting,
        Task::ChaoticForecasting,
        Task::DiscretePatternCompletion,
        Task::ContinuousPatternCompletion,
        Task::SimpleCopy,
        Task::SelectiveCopy,
        Task::AddingProblem,
        Task::SortingProblem,
        Task::SequentialMnist,
        Task::BracketMatching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::DiscretePostcasting => "discrete-postcasting",
            Task::ContinuousPostcasting => "continuous-postcasting",
            Task::SinusForecasting => "sinus-forecasting",
            Task::ChaoticForecasting => "chaotic-forecasting",
            Task::DiscretePatternCompletion => "discrete-pattern-completion",
            Task::ContinuousPatternCompletion => "continuous-pattern-completion",
            Task::SimpleCopy => "simple-copy",
            Task::SelectiveCopy => "selective-copy",
            Task::AddingProblem => "adding-problem",
            Task::SortingProblem => "sorting-problem",
            Task::SequentialMnist => "sequential-mnist",
            Task::BracketMatching => "bracket-matching",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Task::DiscretePostcasting => "Discrete Postcasting",
            Task::ContinuousPostcasting => "Continuous Postcasting",
            Task::SinusForecasting => "Sinus Forecasting",
            Task::ChaoticForecasting => "Chaotic Forecasting",
            Task::DiscretePatternCompletion => "Discrete Pattern Completion",
            Task::ContinuousPatternCompletion => "Continuous Pattern Completion",
            Task::SimpleCopy => "Simple Copy",
            Task::SelectiveCopy => "Selective Copy",
            Task::AddingProblem => "Adding Problem",
            Task::SortingProblem => "Sorting Problem",
            Task::SequentialMnist => "Sequential MNIST",
            Task::BracketMatching => "Bracket Matching",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task {s:?}")))
    }

    pub fn kind(self) -> SampleKind {
        match self {
            Task::ContinuousPostcasting
            | Task::SinusForecasting
            | Task::ChaoticForecasting
            | Task::ContinuousPatternCompletion => SampleKind::Continuous,
            _ => SampleKind::Discrete,
        }
    }

    pub fn is_forecasting(self) -> bool {
        matches!(self, Task::SinusForecasting | Task::ChaoticForecasting)
    }

    /// Task-specific keys a config file may set for this task.
    fn own_keys(self) -> &'static [&'static str] {
        match self {
            Task::DiscretePostcasting => &["sequence_length", "delay", "n_symbols"],
            Task::ContinuousPostcasting => &["sequence_length", "delay"],
            Task::SinusForecasting => &[
                "sequence_length",
                "forecast_length",
                "training_ratio",
                "validation_ratio",
                "testing_ratio",
                "modulation_index",
            ],
            Task::ChaoticForecasting => &[
                "sequence_length",
                "forecast_length",
                "training_ratio",
                "validation_ratio",
                "testing_ratio",
            ],
            Task::DiscretePatternCompletion => {
                &["sequence_length", "n_symbols", "base_length", "mask_ratio"]
            }
            Task::ContinuousPatternCompletion => &["sequence_length", "base_length", "mask_ratio"],
            Task::SimpleCopy => &["sequence_length", "delay", "n_symbols"],
            Task::SelectiveCopy => &["sequence_length", "delay", "n_markers", "n_symbols"],
            Task::AddingProblem => &["sequence_length", "max_number"],
            Task::SortingProblem => &["sequence_length", "n_symbols"],
            Task::SequentialMnist => &[],
            Task::BracketMatching => &["sequence_length", "max_depth"],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Discrete,
    Continuous,
}

/// A fully resolved task configuration. Keys a task does not use keep
/// their defaults and are ignored by its generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: Task,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub sequence_length: usize,
    pub delay: usize,
    pub n_symbols: usize,
    pub base_length: usize,
    pub mask_ratio: f64,
    pub n_markers: usize,
    pub max_number: usize,
    pub max_depth: usize,
    pub forecast_length: usize,
    pub training_ratio: f64,
    pub validation_ratio: f64,
    pub testing_ratio: f64,
    pub modulation_index: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

/// Config-file form of [`TaskConfig`]: any subset of keys over the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskOverrides {
    pub task: Option<Task>,
    pub n_train: Option<usize>,
    pub n_valid: Option<usize>,
    pub n_test: Option<usize>,
    pub sequence_length: Option<usize>,
    pub delay: Option<usize>,
    pub n_symbols: Option<usize>,
    pub base_length: Option<usize>,
    pub mask_ratio: Option<f64>,
    pub n_markers: Option<usize>,
    pub max_number: Option<usize>,
    pub max_depth: Option<usize>,
    pub forecast_length: Option<usize>,
    pub training_ratio: Option<f64>,
    pub validation_ratio: Option<f64>,
    pub testing_ratio: Option<f64>,
    pub modulation_index: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
}

impl TaskConfig {
    /// The published configuration of `task`.
    pub fn standard(task: Task) -> Self {
        let mut c = TaskConfig {
            task,
            n_train: 100,
            n_valid: 20,
            n_test: 100,
            sequence_length: 50,
            delay: 5,
            n_symbols: 3,
            base_length: 4,
            mask_ratio: 0.2,
            n_markers: 5,
            max_number: 3,
            max_depth: 5,
            forecast_length: 5,
            training_ratio: 0.45,
            validation_ratio: 0.1,
            testing_ratio: 0.45,
            modulation_index: 2.0,
            batch_size: 10,
            epochs: 250,
            patience: 30,
            seed: 0,
        };
        match task {
            Task::SinusForecasting | Task::ChaoticForecasting => {
                c.sequence_length = 200;
                c.batch_size = 1;
            }
            Task::DiscretePatternCompletion | Task::ContinuousPatternCompletion => {
                c.sequence_length = 60
            }
            Task::SimpleCopy => c.sequence_length = 22,
            Task::SelectiveCopy => c.sequence_length = 40,
            Task::AddingProblem | Task::SortingProblem => c.sequence_length = 10,
            Task::SequentialMnist => c.sequence_length = mnist::SIDE,
            _ => {}
        }
        c
    }

    pub fn from_overrides(o: &TaskOverrides) -> Result<Self> {
        let task = o.task.ok_or_else(|| Error::config("task: missing"))?;
        let mut c = TaskConfig::standard(task);
        let mut set = Vec::new();
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = o.$field {
                    c.$field = v;
                    set.push(stringify!($field));
                })*
            };
        }
        apply!(
            sequence_length,
            delay,
            n_symbols,
            base_length,
            mask_ratio,
            n_markers,
            max_number,
            max_depth,
            forecast_length,
            training_ratio,
            validation_ratio,
            testing_ratio,
            modulation_index
        );
        for key in set {
            if !task.own_keys().contains(&key) {
                return Err(Error::config(format!(
                    "{key}: not a parameter of task {task}"
                )));
            }
        }
        let mut shared = Vec::new();
        macro_rules! apply_shared {
            ($($field:ident),*) => {
                $(if let Some(v) = o.$field {
                    c.$field = v;
                    shared.push(stringify!($field));
                })*
            };
        }
        apply_shared!(n_train, n_valid, n_test, batch_size, epochs, patience, seed);
        if o.patience.is_none() {
            c.patience = c.patience.min(c.epochs);
        }
        if task.is_forecasting() {
            if let Some(key) = shared.iter().find(|k| k.starts_with("n_")) {
                return Err(Error::config(format!(
                    "{key}: forecasting tasks split one series by ratios, not sample counts"
                )));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::config(format!("{field}: {why}")));
        let t = self.task;
        if self.sequence_length == 0 {
            return bad("sequence_length", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.patience == 0 || self.patience > self.epochs {
            return bad("patience", "must be in 1..=epochs");
        }
        if t.is_forecasting() {
            let r = [
                self.training_ratio,
                self.validation_ratio,
                self.testing_ratio,
            ];
            if r.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
                return bad("training_ratio", "split ratios must lie in (0, 1)");
            }
            if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("testing_ratio", "split ratios must sum to 1");
            }
            let (a, b, _) = forecast_split(self);
            if a == 0 || b == 0 || a + b >= self.sequence_length {
                return bad(
                    "sequence_length",
                    "too short to give every split a timestep",
                );
            }
            if !self.modulation_index.is_finite() {
                return bad("modulation_index", "must be finite");
            }
        } else if self.n_train == 0 || self.n_valid == 0 || self.n_test == 0 {
            return bad("n_train", "every split needs at least one sample");
        }
        match t {
            Task::DiscretePostcasting | Task::ContinuousPostcasting
                if self.delay >= self.sequence_length =>
            {
                bad("delay", "must be smaller than sequence_length")
            }
            Task::DiscretePostcasting
            | Task::SimpleCopy
            | Task::SelectiveCopy
            | Task::SortingProblem
                if self.n_symbols < 2 =>
            {
                bad("n_symbols", "needs at least two symbols")
            }
            Task::DiscretePatternCompletion if self.n_symbols < 2 => {
                bad("n_symbols", "needs at least two symbols")
            }
            Task::DiscretePatternCompletion | Task::ContinuousPatternCompletion
                if self.base_length == 0 || self.base_length > self.sequence_length =>
            {
                bad("base_length", "must be in 1..=sequence_length")
            }
            Task::DiscretePatternCompletion | Task::ContinuousPatternCompletion
                if !(0.0..=1.0).contains(&self.mask_ratio) =>
            {
                bad("mask_ratio", "must lie in [0, 1]")
            }
            Task::SelectiveCopy if self.n_markers == 0 || self.n_markers > self.sequence_length => {
                bad("n_markers", "must be in 1..=sequence_length")
            }
            Task::AddingProblem if self.sequence_length < 2 => {
                bad("sequence_length", "needs room for two marked numbers")
            }
            Task::AddingProblem if self.max_number == 0 => bad("max_number", "must be positive"),
            Task::BracketMatching if self.sequence_length % 2 == 1 => bad(
                "sequence_length",
                "balanced bracket strings need an even length",
            ),
            Task::BracketMatching if self.max_depth == 0 => bad("max_depth", "must be positive"),
            Task::SequentialMnist if self.sequence_length != mnist::SIDE => bad(
                "sequence_length",
                "fixed at 28 columns for sequential MNIST",
            ),
            _ => Ok(()),
        }
    }

    /// Short stable digest of the full configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("task config serialises");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Channel widths, sequence length and target kind of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskDims {
    pub input_dim: usize,
    pub output_dim: usize,
    pub length: usize,
    pub kind: SampleKind,
}

pub fn dims(cfg: &TaskConfig) -> TaskDims {
    let (l, s) = (cfg.sequence_length, cfg.n_symbols);
    let (input_dim, output_dim, length) = match cfg.task {
        Task::DiscretePostcasting => (s, s, l),
        Task::ContinuousPostcasting => (1, 1, l),
        Task::SinusForecasting => (1, 1, l),
        Task::ChaoticForecasting => (3, 3, l),
        Task::DiscretePatternCompletion => (s + 2, s, l),
        Task::ContinuousPatternCompletion => (1, 1, l),
        Task::SimpleCopy => (s + 1, s, 2 * l + cfg.delay),
        Task::SelectiveCopy => (s + 2, s, l + cfg.delay + cfg.n_markers),
        Task::AddingProblem => (cfg.max_number + 2, 2 * cfg.max_number - 1, l + 1),
        Task::SortingProblem => (s + l + 1, s, 2 * l),
        Task::SequentialMnist => (mnist::SIDE + 1, 10, mnist::SIDE + 1),
        Task::BracketMatching => (2, 2, l),
    };
    TaskDims {
        input_dim,
        output_dim,
        length,
        kind: cfg.task.kind(),
    }
}

/// Timesteps of the train, valid and test windows of a forecasting series.
pub fn forecast_split(cfg: &TaskConfig) -> (usize, usize, usize) {
    let n = cfg.sequence_length;
    let train = (cfg.training_ratio * n as f64).round() as usize;
    let valid = (cfg.validation_ratio * n as f64).round() as usize;
    (train, valid, n.saturating_sub(train + valid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub eval_mask: Vec<bool>,
    pub kind: SampleKind,
}

impl TaskSample {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn masked_count(&self) -> usize {
        self.eval_mask.iter().filter(|&&m| m).count()
    }

    /// Argmax class of each evaluated target row.
    pub fn class_targets(&self) -> Vec<Option<usize>> {
        self.eval_mask
            .iter()
            .enumerate()
            .map(|(t, &on)| on.then(|| argmax(self.targets.row_slice(t))))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: TaskConfig,
    pub seed: u64,
    pub dims: TaskDims,
    pub train: Vec<TaskSample>,
    pub valid: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[TaskSample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

/// Generates all three splits. Sequential MNIST reads its files from
/// `$EST_LAB_DATA_DIR`.
pub fn generate(cfg: &TaskConfig, seed: u64) -> Result<Dataset> {
    let dir = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from);
    generate_with_data(cfg, seed, dir.as_deref())
}

pub fn generate_with_data(cfg: &TaskConfig, seed: u64, data_dir: Option<&Path>) -> Result<Dataset> {
    cfg.validate()?;
    let d = dims(cfg);
    let (train, valid, test) = if cfg.task.is_forecasting() {
        tasks::forecasting_splits(cfg, seed)?
    } else if cfg.task == Task::SequentialMnist {
        let dir = data_dir.ok_or_else(|| Error::Data {
            path: PathBuf::from(format!("${DATA_DIR_ENV}")),
            detail: "sequential MNIST needs the directory of the four IDX files".into(),
        })?;
        mnist::splits(cfg, seed, dir)?
    } else {
        let split = |s: Split, n: usize| -> Result<Vec<TaskSample>> {
            let mut rng = rng_for(seed, &format!("data.{}", s.name()));
            (0..n).map(|i| tasks::sample(cfg, i, &mut rng)).collect()
        };
        (
            split(Split::Train, cfg.n_train)?,
            split(Split::Valid, cfg.n_valid)?,
            split(Split::Test, cfg.n_test)?,
        )
    };
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        dims: d,
        train,
        valid,
        test,
    })
}

/// Draws a single synthetic sample from `rng`; `index` only matters for
/// tasks that balance labels across a split.
pub fn sample(cfg: &TaskConfig, index: usize, rng: &mut impl rand::Rng) -> Result<TaskSample> {
    cfg.validate()?;
    if cfg.task.is_forecasting() || cfg.task == Task::SequentialMnist {
        return Err(Error::Usage(format!(
            "{} samples come from a shared source, use generate",
            cfg.task
        )));
    }
    tasks::sample(cfg, index, rng)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Error over evaluated positions: misclassification rate for discrete
/// tasks, mean squared error per channel for continuous ones.
pub fn score(samples: &[TaskSample], predictions: &[Tensor]) -> Result<f64> {
    if samples.len() != predictions.len() {
        return Err(Error::dim(
            "score",
            format!(
                "{} predictions for {} samples",
                predictions.len(),
                samples.len()
            ),
        ));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (s, p) in samples.iter().zip(predictions) {
        if p.shape() != s.targets.shape() {
            return Err(Error::dim(
                "score",
                format!(
                    "prediction {:?} vs target {:?}",
                    p.shape(),
                    s.targets.shape()
                ),
            ));
        }
        for (t, _) in s.eval_mask.iter().enumerate().filter(|(_, &m)| m) {
            let (pr, tr) = (p.row_slice(t), s.targets.row_slice(t));
            match s.kind {
                SampleKind::Discrete => {
                    total += f64::from(argmax(pr) != argmax(tr));
                    count += 1;
                }
                SampleKind::Continuous => {
                    total += pr.iter().zip(tr).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    count += tr.len();
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Usage(
            "score needs at least one evaluated position".into(),
        ));
    }
    Ok(total / count as f64)
}
