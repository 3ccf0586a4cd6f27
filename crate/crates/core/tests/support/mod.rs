//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls back into the generator code it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use est_lab::autodiff::Tensor;
use est_lab::model::{Family, SizeBucket};
use est_lab::params::rng_for;
use est_lab::stream::{Task, TaskConfig, TaskSample};
use est_lab::training::{RunRecord, RunStatus};
use rand::Rng;

pub type Check = Result<(), String>;

fn row(t: &Tensor, r: usize) -> &[f64] {
    let c = t.cols();
    &t.data()[r * c..(r + 1) * c]
}

/// Index of the single 1.0 in `xs`; every other entry must be 0.0.
fn one_hot(xs: &[f64], what: &str) -> Result<usize, String> {
    let hot: Vec<usize> = xs
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1.0)
        .map(|(i, _)| i)
        .collect();
    let clean = xs.iter().all(|&v| v == 0.0 || v == 1.0);
    match (hot.as_slice(), clean) {
        ([i], true) => Ok(*i),
        _ => Err(format!("{what}: not one-hot: {xs:?}")),
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn masked(s: &TaskSample) -> Vec<usize> {
    (0..s.eval_mask.len()).filter(|&t| s.eval_mask[t]).collect()
}

/// Checks a per-sequence sample against the task's defining relation.
pub fn check_sample(cfg: &TaskConfig, s: &TaskSample, index: usize) -> Check {
    let (l, sy) = (cfg.sequence_length, cfg.n_symbols);
    let x = &s.inputs;
    let y = &s.targets;
    match cfg.task {
        Task::DiscretePostcasting => {
            ensure(masked(s) == (cfg.delay..l).collect::<Vec<_>>(), || {
                "mask is not t >= delay".into()
            })?;
            for t in cfg.delay..l {
                let want = one_hot(row(x, t - cfg.delay), "input")?;
                ensure(one_hot(row(y, t), "target")? == want, || {
                    format!("shift broken at {t}")
                })?;
            }
        }
        Task::ContinuousPostcasting => {
            ensure(masked(s) == (cfg.delay..l).collect::<Vec<_>>(), || {
                "mask is not t >= delay".into()
            })?;
            for t in cfg.delay..l {
                ensure(y.get(t, 0) == x.get(t - cfg.delay, 0), || {
                    format!("shift broken at {t}")
                })?;
            }
        }
        Task::DiscretePatternCompletion => {
            let want = ((cfg.mask_ratio * l as f64).round() as usize).max(1);
            ensure(masked(s).len() == want, || {
                format!("{} masked, want {want}", masked(s).len())
            })?;
            let mut pattern = vec![None; cfg.base_length];
            for t in 0..l {
                let target = one_hot(row(y, t), "target")?;
                let slot = &mut pattern[t % cfg.base_length];
                ensure(slot.is_none_or(|p| p == target), || {
                    format!("targets do not tile at {t}")
                })?;
                *slot = Some(target);
                if s.eval_mask[t] {
                    ensure(x.get(t, sy) == 1.0 && x.get(t, sy + 1) == 1.0, || {
                        format!("gap marker missing at {t}")
                    })?;
                    ensure(row(x, t)[..sy].iter().all(|&v| v == 0.0), || {
                        format!("symbol leaks at gap {t}")
                    })?;
                } else {
                    ensure(one_hot(row(x, t), "input")? == target, || {
                        format!("visible input differs at {t}")
                    })?;
                }
            }
        }
        Task::ContinuousPatternCompletion => {
            let want = ((cfg.mask_ratio * l as f64).round() as usize).max(1);
            ensure(masked(s).len() == want, || {
                format!("{} masked, want {want}", masked(s).len())
            })?;
            for t in 0..l {
                ensure(y.get(t, 0) == y.get(t % cfg.base_length, 0), || {
                    format!("targets do not tile at {t}")
                })?;
                let expect = if s.eval_mask[t] { -1.0 } else { y.get(t, 0) };
                ensure(x.get(t, 0) == expect, || format!("input wrong at {t}"))?;
            }
        }
        Task::SimpleCopy => {
            let start = l + cfg.delay;
            ensure(masked(s) == (start..start + l).collect::<Vec<_>>(), || {
                "copy window mask".into()
            })?;
            ensure(one_hot(row(x, start), "trigger")? == sy, || {
                "trigger missing".into()
            })?;
            for t in 0..l {
                ensure(
                    one_hot(row(y, start + t), "target")? == one_hot(row(x, t), "input")?,
                    || format!("copy broken at {t}"),
                )?;
            }
            for t in l..x.rows() {
                ensure(t == start || row(x, t).iter().all(|&v| v == 0.0), || {
                    format!("noise at {t}")
                })?;
            }
        }
        Task::SelectiveCopy => {
            let marked: Vec<usize> = (0..l).filter(|&t| x.get(t, sy) == 1.0).collect();
            ensure(marked.len() == cfg.n_markers, || {
                format!("{} markers", marked.len())
            })?;
            let start = l + cfg.delay;
            ensure(x.get(start, sy + 1) == 1.0, || "trigger missing".into())?;
            ensure(
                masked(s) == (start..start + cfg.n_markers).collect::<Vec<_>>(),
                || "answer mask".into(),
            )?;
            for (k, &pos) in marked.iter().enumerate() {
                let sym = one_hot(&row(x, pos)[..sy], "input")?;
                ensure(one_hot(row(y, start + k), "target")? == sym, || {
                    format!("filter broken at {k}")
                })?;
            }
        }
        Task::AddingProblem => {
            let m = cfg.max_number;
            let mut sum = 0;
            let mut count = 0;
            for t in 0..l {
                for v in 0..m {
                    if x.get(t, v) == 1.0 && x.get(t, m) == 1.0 {
                        sum += v;
                        count += 1;
                    }
                }
            }
            ensure(count == 2, || format!("{count} marked numbers"))?;
            ensure(masked(s) == vec![l], || "answer mask".into())?;
            ensure(x.get(l, m + 1) == 1.0, || "trigger missing".into())?;
            ensure(one_hot(row(y, l), "target")? == sum, || {
                format!("sum {sum} not the target")
            })?;
        }
        Task::SortingProblem => {
            let mut seen = vec![false; l];
            let mut answer = vec![usize::MAX; l];
            for t in 0..l {
                let sym = one_hot(&row(x, t)[..sy], "symbol")?;
                let rank = one_hot(&row(x, t)[sy..sy + l], "rank")?;
                ensure(!seen[rank], || format!("rank {rank} repeated"))?;
                seen[rank] = true;
                answer[rank] = sym;
            }
            ensure(x.get(l, sy + l) == 1.0, || "trigger missing".into())?;
            ensure(masked(s) == (l..2 * l).collect::<Vec<_>>(), || {
                "answer mask".into()
            })?;
            for (r, &sym) in answer.iter().enumerate() {
                ensure(one_hot(row(y, l + r), "target")? == sym, || {
                    format!("sort broken at rank {r}")
                })?;
            }
        }
        Task::BracketMatching => {
            let seq: Vec<bool> = (0..l).map(|t| x.get(t, 0) == 1.0).collect();
            for t in 0..l {
                ensure(x.get(t, 0) + x.get(t, 1) == 1.0, || {
                    format!("token {t} is not one bracket")
                })?;
            }
            let label = stack_balanced(&seq);
            ensure(masked(s) == vec![l - 1], || "answer mask".into())?;
            ensure(
                one_hot(row(y, l - 1), "label")? == usize::from(label),
                || "label disagrees with stack".into(),
            )?;
            ensure(label == (index % 2 == 0), || {
                format!("sample {index} has label {label}")
            })?;
        }
        other => return Err(format!("{other} is not a per-sequence task")),
    }
    Ok(())
}

/// Balanced-bracket check with an explicit stack.
pub fn stack_balanced(seq: &[bool]) -> bool {
    let mut stack = Vec::new();
    for &open in seq {
        if open {
            stack.push('(');
        } else if stack.pop().is_none() {
            return false;
        }
    }
    stack.is_empty()
}

/// The frequency-modulated sine, written out from its definition.
pub fn fm_sine(t: f64, beta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    (two_pi * 10.0 * t + beta * (two_pi * 0.5 * t).sin()).sin()
}

/// Reference sinus series for `seed`: offset drawn the way the generator
/// documents it, sampled every 0.01 s.
pub fn sinus_reference(cfg: &TaskConfig, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, "data.series");
    let t0: f64 = rng.random_range(0.0..2.0);
    (0..cfg.sequence_length + cfg.forecast_length)
        .map(|k| fm_sine(t0 + 0.01 * k as f64, cfg.modulation_index))
        .collect()
}

fn lorenz_deriv(v: [f64; 3]) -> [f64; 3] {
    let (sigma, rho, beta) = (10.0, 28.0, 8.0 / 3.0);
    [
        sigma * (v[1] - v[0]),
        v[0] * (rho - v[2]) - v[1],
        v[0] * v[1] - beta * v[2],
    ]
}

/// A second RK4 integrator of the Lorenz system, normalised per dimension.
pub fn lorenz_reference(cfg: &TaskConfig, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = rng_for(seed, "data.series");
    let mut x = [1.0f64; 3];
    for v in &mut x {
        *v += rng.random_range(-0.01..0.01);
    }
    let h = 0.01;
    let step = |x: [f64; 3]| {
        let k1 = lorenz_deriv(x);
        let k2 = lorenz_deriv(std::array::from_fn(|i| x[i] + 0.5 * h * k1[i]));
        let k3 = lorenz_deriv(std::array::from_fn(|i| x[i] + 0.5 * h * k2[i]));
        let k4 = lorenz_deriv(std::array::from_fn(|i| x[i] + h * k3[i]));
        std::array::from_fn(|i| x[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
    };
    for _ in 0..1000 {
        x = step(x);
    }
    let n = cfg.sequence_length + cfg.forecast_length;
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        rows.push(x);
        x = step(x);
    }
    for d in 0..3 {
        let (lo, hi) = rows.iter().fold((f64::MAX, f64::MIN), |(lo, hi), r| {
            (lo.min(r[d]), hi.max(r[d]))
        });
        for r in &mut rows {
            r[d] = (r[d] - lo) / (hi - lo) * 2.0 - 1.0;
        }
    }
    rows
}

/// Checks that the three forecasting windows are consecutive cuts of
/// `series` with targets `forecast_length` steps ahead.
pub fn check_forecasting(
    cfg: &TaskConfig,
    splits: [&[TaskSample]; 3],
    series: &[Vec<f64>],
    tol: f64,
) -> Check {
    let mut start = 0;
    for (k, split) in splits.iter().enumerate() {
        ensure(split.len() == 1, || {
            format!("split {k} has {} windows", split.len())
        })?;
        let s = &split[0];
        for t in 0..s.len() {
            for d in 0..series[0].len() {
                let (xi, yi) = (s.inputs.get(t, d), s.targets.get(t, d));
                let (xr, yr) = (
                    series[start + t][d],
                    series[start + t + cfg.forecast_length][d],
                );
                ensure((xi - xr).abs() <= tol && (yi - yr).abs() <= tol, || {
                    format!("split {k} step {t} dim {d}: ({xi}, {yi}) vs ({xr}, {yr})")
                })?;
            }
        }
        ensure(s.eval_mask.iter().all(|&m| m), || {
            "forecast mask not full".into()
        })?;
        start += s.len();
    }
    Ok(())
}

/// A synthetic MNIST directory. Image `i` of each file stores `i` in its
/// first two pixels (base 256) and seeded noise elsewhere; labels are `i % 10`.
pub fn write_mnist_fixture(
    dir: &Path,
    n_train: usize,
    n_test: usize,
) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    let make = |n: usize, salt: &str| -> Vec<Vec<u8>> {
        let mut rng = rng_for(99, salt);
        (0..n)
            .map(|i| {
                let mut px: Vec<u8> = (0..784).map(|_| rng.random()).collect();
                px[0] = (i / 256) as u8;
                px[1] = (i % 256) as u8;
                px
            })
            .collect()
    };
    let train = make(n_train, "fixture.train");
    let test = make(n_test, "fixture.test");
    let write = |stem_img: &str, stem_lab: &str, imgs: &[Vec<u8>]| {
        let mut img = Vec::new();
        img.extend_from_slice(&0x0803u32.to_be_bytes());
        img.extend_from_slice(&(imgs.len() as u32).to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        img.extend_from_slice(&28u32.to_be_bytes());
        for im in imgs {
            img.extend_from_slice(im);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&0x0801u32.to_be_bytes());
        lab.extend_from_slice(&(imgs.len() as u32).to_be_bytes());
        lab.extend((0..imgs.len()).map(|i| (i % 10) as u8));
        std::fs::write(dir.join(stem_img), img).unwrap();
        std::fs::write(dir.join(stem_lab), lab).unwrap();
    };
    write("train-images-idx3-ubyte", "train-labels-idx1-ubyte", &train);
    write("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", &test);
    (train, test)
}

/// Column `t` of the sample must be column `t` of its source image / 255;
/// the source is identified by the index stored in its first two pixels.
/// Returns the source index.
pub fn check_mnist_sample(s: &TaskSample, source: &[Vec<u8>]) -> Result<usize, String> {
    let px = |t: usize, r: usize| (s.inputs.get(t, r) * 255.0).round() as usize;
    let i = px(0, 0) * 256 + px(1, 0);
    let img = source
        .get(i)
        .ok_or_else(|| format!("source index {i} out of range"))?;
    for col in 0..28 {
        for r in 0..28 {
            let want = f64::from(img[r * 28 + col]) / 255.0;
            ensure(s.inputs.get(col, r) == want, || {
                format!("image {i} pixel ({r}, {col})")
            })?;
        }
        ensure(s.inputs.get(col, 28) == 0.0, || "trigger set early".into())?;
    }
    ensure(s.inputs.get(28, 28) == 1.0, || "trigger missing".into())?;
    ensure(masked(s) == vec![28], || "mask".into())?;
    ensure(one_hot(row(&s.targets, 28), "label")? == i % 10, || {
        format!("label of image {i}")
    })?;
    Ok(i)
}

pub type GroupKey = (Task, Family, SizeBucket);

/// A record in one of two task × family × size groups.
pub fn synthetic_record(
    group: usize,
    config: usize,
    lr: usize,
    seed: u64,
    error: f64,
    failed: bool,
) -> RunRecord {
    let (task, family, size) = [
        (Task::AddingProblem, Family::Gru, SizeBucket::K1),
        (Task::SimpleCopy, Family::Est, SizeBucket::K10),
    ][group % 2];
    RunRecord {
        task,
        family,
        size,
        config: format!("cfg{config}"),
        learning_rate: [1e-2, 3e-3, 1e-3][lr % 3],
        seed,
        val_error: error,
        test_error: error,
        epochs: 1,
        wall_ms: 0,
        status: if failed {
            RunStatus::Failed("synthetic".into())
        } else {
            RunStatus::Ok
        },
    }
}

/// Best seed-averaged (config, lr) per group, by enumerating every
/// candidate pair and requiring a run for every seed present in the group.
pub fn brute_bwa(records: &[RunRecord]) -> BTreeMap<GroupKey, f64> {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let mut out = BTreeMap::new();
    let keys: Vec<GroupKey> = ok.iter().map(|r| (r.task, r.family, r.size)).collect();
    for key in keys {
        if out.contains_key(&key) {
            continue;
        }
        let group: Vec<&&RunRecord> = ok
            .iter()
            .filter(|r| (r.task, r.family, r.size) == key)
            .collect();
        let mut seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mut best: Option<f64> = None;
        for a in &group {
            let mut total = 0.0;
            let mut complete = true;
            for &s in &seeds {
                match group.iter().find(|r| {
                    r.config == a.config && r.learning_rate == a.learning_rate && r.seed == s
                }) {
                    Some(r) => total += r.test_error,
                    None => complete = false,
                }
            }
            if complete {
                let mean = total / seeds.len() as f64;
                best = Some(best.map_or(mean, |b: f64| b.min(mean)));
            }
        }
        if let Some(b) = best {
            out.insert(key, b);
        }
    }
    out
}

/// Lowest single successful run per group.
pub fn brute_boa(records: &[RunRecord]) -> BTreeMap<GroupKey, f64> {
    let mut out: BTreeMap<GroupKey, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_ok()) {
        let e = out
            .entry((r.task, r.family, r.size))
            .or_insert(f64::INFINITY);
        *e = e.min(r.test_error);
    }
    out
}
