//! Backpropagation-through-time training with AdamW, early stopping on the
//! validation error, and the grid sweep that drives it.

mod aggregate;
mod report;
mod store;
mod sweep;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{rng_for, ParamStore};
use crate::stream::{score, Dataset, SampleKind, TaskConfig, TaskSample};

pub use aggregate::{aggregate_boa, aggregate_bwa, CellKey, CellSummary};
pub use report::{format_cell, render_csv, render_param_buckets, render_text, Report};
pub use store::{RecordKey, ResultsStore, RunRecord, RunStatus};
pub use sweep::{run_one, run_with, standard_tasks, sweep, SweepOptions, SweepPlan};

pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;
pub const DEFAULT_CLIP_NORM: f64 = 1.0;
pub const GRID_LEARNING_RATES: [f64; 5] = [0.01, 0.003, 0.001, 0.0003, 0.0001];
pub const GRID_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn default_weight_decay() -> f64 {
    DEFAULT_WEIGHT_DECAY
}

fn default_clip_norm() -> f64 {
    DEFAULT_CLIP_NORM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
}

impl TrainConfig {
    /// Batch size, epochs and patience from the task, the rest defaulted.
    pub fn for_task(task: &TaskConfig, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            learning_rate,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            batch_size: task.batch_size,
            epochs: task.epochs,
            patience: task.patience,
            seed,
            clip_norm: DEFAULT_CLIP_NORM,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate: must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay: must be non-negative"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs: must be positive"));
        }
        if self.patience == 0 || self.patience > self.epochs {
            return Err(Error::config("patience: must be in 1..=epochs"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm: must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.numel()])
            .collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update with decoupled decay:
    /// `p ← p − lr·(m̂/(√v̂ + ε) + wd·p)`. Missing gradients count as zero.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64, weight_decay: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::dim(
                "adamw_step",
                format!("{} moment slots for {} tensors", self.m.len(), params.len()),
            ));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((t, m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if m.len() != t.numel() {
                return Err(Error::dim(
                    "adamw_step",
                    "moment shape differs from parameter".to_string(),
                ));
            }
            let grad = t
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; m.len()]);
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let (mh, vh) = (m[i] / c1, v[i] / c2);
                *p -= lr * (mh / (vh.sqrt() + self.eps) + weight_decay * *p);
            }
        }
        Ok(())
    }
}

/// Scales every gradient so their global L2 norm is at most `max_norm`;
/// returns the norm before scaling.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params
        .tensors()
        .iter()
        .filter_map(Tensor::grad)
        .flatten()
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for t in params.tensors_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|x| *x *= k);
            }
        }
    }
    norm
}

/// Number of scalars the masked loss averages over.
fn loss_count(s: &TaskSample) -> usize {
    match s.kind {
        SampleKind::Discrete => s.masked_count(),
        SampleKind::Continuous => s.masked_count() * s.targets.cols(),
    }
}

/// Accumulates gradients of the batch-mean masked loss into the model's
/// parameter buffers and returns that loss.
pub fn accumulate_batch_gradients(model: &mut Model, batch: &[&TaskSample]) -> Result<f64> {
    let total: usize = batch.iter().map(|s| loss_count(s)).sum();
    if total == 0 {
        return Err(Error::Usage("batch has no evaluated positions".into()));
    }
    let scale = 1.0 / total as f64;
    let mut loss_sum = 0.0;
    for s in batch {
        let mut tape = Tape::new();
        tape.set_checked(false);
        let p = model.params().bind(&mut tape);
        let y = model.forward_on(&mut tape, &p, &s.inputs)?;
        let loss = match s.kind {
            SampleKind::Discrete => tape.cross_entropy(y, &s.class_targets(), scale)?,
            SampleKind::Continuous => tape.squared_error(y, &s.targets, &s.eval_mask, scale)?,
        };
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "training loss",
            });
        }
        loss_sum += value;
        let grads = tape.backward(loss)?;
        grads.accumulate_into(&p, model.params_mut().tensors_mut());
    }
    Ok(loss_sum)
}

pub fn predict(model: &Model, samples: &[TaskSample]) -> Result<Vec<Tensor>> {
    samples
        .iter()
        .map(|s| model.forward_sequence(&s.inputs))
        .collect()
}

pub fn evaluate(model: &Model, samples: &[TaskSample]) -> Result<f64> {
    score(samples, &predict(model, samples)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub val_error: f64,
    pub test_error: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub val_history: Vec<f64>,
    pub wall_ms: u64,
}

/// Trains in place. On success the model holds the best-validation
/// parameters and the test split has been scored exactly once.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (i, o) = model.config().io();
    if (i, o) != (data.dims.input_dim, data.dims.output_dim) {
        return Err(Error::dim(
            "train",
            format!(
                "model io {i}→{o} vs task {}→{}",
                data.dims.input_dim, data.dims.output_dim
            ),
        ));
    }
    let start = Instant::now();
    let mut rng = rng_for(cfg.seed, "train.shuffle");
    let mut opt = AdamW::new(model.params());
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best = (f64::INFINITY, model.params().clone(), 0usize);
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TaskSample> = chunk.iter().map(|&k| &data.train[k]).collect();
            model.params_mut().zero_grad();
            accumulate_batch_gradients(model, &batch)?;
            clip_grad_norm(model.params_mut(), cfg.clip_norm);
            opt.step(model.params_mut(), cfg.learning_rate, cfg.weight_decay)?;
        }
        let val = evaluate(model, &data.valid)?;
        if !val.is_finite() {
            return Err(Error::Training(format!(
                "validation error is {val} at epoch {epoch}"
            )));
        }
        history.push(val);
        if val < best.0 {
            best = (val, model.params().clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.params_mut().load_values(&best.1);
    model.params_mut().zero_grad();
    let test_error = evaluate(model, &data.test)?;
    Ok(TrainOutcome {
        val_error: best.0,
        test_error,
        epochs_run: history.len(),
        best_epoch: best.2,
        val_history: history,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}
