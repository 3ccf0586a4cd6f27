use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{dims, forecast_split, SampleKind, Task, TaskConfig, TaskSample};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::rng_for;

pub const LORENZ_DT: f64 = 0.01;
pub const LORENZ_TRANSIENT: usize = 1000;
const SINUS_DT: f64 = 0.01;
const CARRIER_HZ: f64 = 10.0;
const MODULATOR_HZ: f64 = 0.5;

struct Builder {
    inputs: Tensor,
    targets: Tensor,
    mask: Vec<bool>,
}

impl Builder {
    fn new(cfg: &TaskConfig) -> Self {
        let d = dims(cfg);
        Builder {
            inputs: Tensor::zeros(d.length, d.input_dim),
            targets: Tensor::zeros(d.length, d.output_dim),
            mask: vec![false; d.length],
        }
    }

    fn target_class(&mut self, t: usize, class: usize) {
        self.targets.set(t, class, 1.0);
    }

    fn finish(self, kind: SampleKind) -> TaskSample {
        debug_assert!(self.mask.iter().any(|&m| m));
        TaskSample {
            inputs: self.inputs,
            targets: self.targets,
            eval_mask: self.mask,
            kind,
        }
    }
}

pub(super) fn sample(cfg: &TaskConfig, index: usize, rng: &mut impl Rng) -> Result<TaskSample> {
    let kind = cfg.task.kind();
    let mut b = Builder::new(cfg);
    let (l, s) = (cfg.sequence_length, cfg.n_symbols);
    match cfg.task {
        Task::DiscretePostcasting => {
            let symbols: Vec<usize> = (0..l).map(|_| rng.random_range(0..s)).collect();
            for t in 0..l {
                b.inputs.set(t, symbols[t], 1.0);
                if t >= cfg.delay {
                    b.target_class(t, symbols[t - cfg.delay]);
                    b.mask[t] = true;
                }
            }
        }
        Task::ContinuousPostcasting => {
            let values: Vec<f64> = (0..l).map(|_| rng.random_range(-0.8..=0.8)).collect();
            for t in 0..l {
                b.inputs.set(t, 0, values[t]);
                if t >= cfg.delay {
                    b.targets.set(t, 0, values[t - cfg.delay]);
                    b.mask[t] = true;
                }
            }
        }
        Task::DiscretePatternCompletion => {
            let base: Vec<usize> = (0..cfg.base_length)
                .map(|_| rng.random_range(0..s))
                .collect();
            let masked = masked_positions(cfg, rng);
            for t in 0..l {
                let sym = base[t % base.len()];
                b.target_class(t, sym);
                if masked[t] {
                    b.inputs.set(t, s, 1.0);
                    b.inputs.set(t, s + 1, 1.0);
                    b.mask[t] = true;
                } else {
                    b.inputs.set(t, sym, 1.0);
                }
            }
        }
        Task::ContinuousPatternCompletion => {
            let base: Vec<f64> = (0..cfg.base_length)
                .map(|_| rng.random_range(0.0..=0.8))
                .collect();
            let masked = masked_positions(cfg, rng);
            for t in 0..l {
                let v = base[t % base.len()];
                b.targets.set(t, 0, v);
                b.inputs.set(t, 0, if masked[t] { -1.0 } else { v });
                b.mask[t] = masked[t];
            }
        }
        Task::SimpleCopy => {
            let symbols: Vec<usize> = (0..l).map(|_| rng.random_range(0..s)).collect();
            let start = l + cfg.delay;
            for (t, &sym) in symbols.iter().enumerate() {
                b.inputs.set(t, sym, 1.0);
                b.target_class(start + t, sym);
                b.mask[start + t] = true;
            }
            b.inputs.set(start, s, 1.0);
        }
        Task::SelectiveCopy => {
            let symbols: Vec<usize> = (0..l).map(|_| rng.random_range(0..s)).collect();
            let mut marked = index::sample(rng, l, cfg.n_markers).into_vec();
            marked.sort_unstable();
            for (t, &sym) in symbols.iter().enumerate() {
                b.inputs.set(t, sym, 1.0);
            }
            let start = l + cfg.delay;
            for (k, &pos) in marked.iter().enumerate() {
                b.inputs.set(pos, s, 1.0);
                b.target_class(start + k, symbols[pos]);
                b.mask[start + k] = true;
            }
            b.inputs.set(start, s + 1, 1.0);
        }
        Task::AddingProblem => {
            let m = cfg.max_number;
            let values: Vec<usize> = (0..l).map(|_| rng.random_range(0..m)).collect();
            let marked = index::sample(rng, l, 2).into_vec();
            for (t, &v) in values.iter().enumerate() {
                b.inputs.set(t, v, 1.0);
            }
            for &pos in &marked {
                b.inputs.set(pos, m, 1.0);
            }
            b.inputs.set(l, m + 1, 1.0);
            b.target_class(l, values[marked[0]] + values[marked[1]]);
            b.mask[l] = true;
        }
        Task::SortingProblem => {
            let symbols: Vec<usize> = (0..l).map(|_| rng.random_range(0..s)).collect();
            let mut order: Vec<usize> = (0..l).collect();
            order.shuffle(rng);
            for t in 0..l {
                b.inputs.set(t, symbols[t], 1.0);
                b.inputs.set(t, s + order[t], 1.0);
                b.target_class(l + order[t], symbols[t]);
                b.mask[l + t] = true;
            }
            b.inputs.set(l, s + l, 1.0);
        }
        Task::BracketMatching => {
            let valid = index % 2 == 0;
            let mut seq = balanced_sequence(l, cfg.max_depth, rng);
            if !valid {
                corrupt(&mut seq, rng);
            }
            for (t, &open) in seq.iter().enumerate() {
                b.inputs.set(t, usize::from(!open), 1.0);
            }
            b.target_class(l - 1, usize::from(is_balanced(&seq)));
            b.mask[l - 1] = true;
        }
        Task::SinusForecasting | Task::ChaoticForecasting | Task::SequentialMnist => {
            return Err(Error::Usage(format!(
                "{} is not sampled per sequence",
                cfg.task
            )));
        }
    }
    Ok(b.finish(kind))
}

/// At least one masked position. Masks avoid the first period of the
/// pattern when there is room, so the pattern is shown once before any gap.
fn masked_positions(cfg: &TaskConfig, rng: &mut impl Rng) -> Vec<bool> {
    let l = cfg.sequence_length;
    let count = ((cfg.mask_ratio * l as f64).round() as usize).clamp(1, l);
    let offset = if l - cfg.base_length >= count {
        cfg.base_length
    } else {
        0
    };
    let mut out = vec![false; l];
    for i in index::sample(rng, l - offset, count) {
        out[offset + i] = true;
    }
    out
}

/// `true` is an opening bracket.
pub fn is_balanced(seq: &[bool]) -> bool {
    let mut depth: i64 = 0;
    for &open in seq {
        depth += if open { 1 } else { -1 };
        if depth < 0 {
            return false;
        }
    }
    depth == 0
}

pub fn bracket_depth_ok(seq: &[bool], max_depth: usize) -> bool {
    let mut depth: i64 = 0;
    let mut worst = 0;
    for &open in seq {
        depth += if open { 1 } else { -1 };
        worst = worst.max(depth);
    }
    worst <= max_depth as i64
}

/// Uniform choice at each position among the moves that can still finish
/// as a balanced string within the depth bound.
fn balanced_sequence(len: usize, max_depth: usize, rng: &mut impl Rng) -> Vec<bool> {
    let mut seq = Vec::with_capacity(len);
    let mut depth = 0usize;
    for i in 0..len {
        let remaining = len - i;
        let can_open = depth < max_depth && depth + 1 < remaining;
        let can_close = depth > 0;
        let open = match (can_open, can_close) {
            (true, true) => rng.random_bool(0.5),
            (open, _) => open,
        };
        depth = if open { depth + 1 } else { depth - 1 };
        seq.push(open);
    }
    seq
}

/// One flip or one swap of two differing tokens, redrawn until unbalanced.
fn corrupt(seq: &mut [bool], rng: &mut impl Rng) {
    let original = seq.to_vec();
    loop {
        seq.copy_from_slice(&original);
        if rng.random_bool(0.5) {
            let i = rng.random_range(0..seq.len());
            seq[i] = !seq[i];
        } else {
            let i = rng.random_range(0..seq.len());
            let j = rng.random_range(0..seq.len());
            seq.swap(i, j);
        }
        if !is_balanced(seq) {
            return;
        }
    }
}

pub fn sinus_signal(t: f64, modulation_index: f64) -> f64 {
    use std::f64::consts::TAU;
    (TAU * CARRIER_HZ * t + modulation_index * (TAU * MODULATOR_HZ * t).sin()).sin()
}

pub fn lorenz_rk4_step(x: [f64; 3], dt: f64) -> [f64; 3] {
    let f = |v: [f64; 3]| {
        [
            10.0 * (v[1] - v[0]),
            v[0] * (28.0 - v[2]) - v[1],
            v[0] * v[1] - 8.0 / 3.0 * v[2],
        ]
    };
    let add =
        |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let k1 = f(x);
    let k2 = f(add(x, k1, dt / 2.0));
    let k3 = f(add(x, k2, dt / 2.0));
    let k4 = f(add(x, k3, dt));
    let mut out = x;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Rows of the full series, `sequence_length + forecast_length` long.
fn forecasting_series(cfg: &TaskConfig, seed: u64) -> Vec<Vec<f64>> {
    let n = cfg.sequence_length + cfg.forecast_length;
    let mut rng = rng_for(seed, "data.series");
    match cfg.task {
        Task::SinusForecasting => {
            let t0: f64 = rng.random_range(0.0..2.0);
            (0..n)
                .map(|k| vec![sinus_signal(t0 + k as f64 * SINUS_DT, cfg.modulation_index)])
                .collect()
        }
        _ => {
            let mut x = [1.0, 1.0, 1.0];
            for v in &mut x {
                *v += rng.random_range(-0.01..0.01);
            }
            for _ in 0..LORENZ_TRANSIENT {
                x = lorenz_rk4_step(x, LORENZ_DT);
            }
            let mut rows = Vec::with_capacity(n);
            for _ in 0..n {
                rows.push(x.to_vec());
                x = lorenz_rk4_step(x, LORENZ_DT);
            }
            for d in 0..3 {
                let lo = rows.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
                for r in &mut rows {
                    r[d] = 2.0 * (r[d] - lo) / (hi - lo) - 1.0;
                }
            }
            rows
        }
    }
}

type Splits = (Vec<TaskSample>, Vec<TaskSample>, Vec<TaskSample>);

/// One sample per split, cut chronologically out of a single series.
pub(super) fn forecasting_splits(cfg: &TaskConfig, seed: u64) -> Result<Splits> {
    let series = forecasting_series(cfg, seed);
    let f = cfg.forecast_length;
    let width = series[0].len();
    let window = |start: usize, len: usize| -> Result<Vec<TaskSample>> {
        let inputs: Vec<f64> = series[start..start + len]
            .iter()
            .flatten()
            .copied()
            .collect();
        let targets: Vec<f64> = series[start + f..start + f + len]
            .iter()
            .flatten()
            .copied()
            .collect();
        Ok(vec![TaskSample {
            inputs: Tensor::matrix(len, width, inputs)?,
            targets: Tensor::matrix(len, width, targets)?,
            eval_mask: vec![true; len],
            kind: SampleKind::Continuous,
        }])
    };
    let (a, b, c) = forecast_split(cfg);
    Ok((window(0, a)?, window(a, b)?, window(a + b, c)?))
}
