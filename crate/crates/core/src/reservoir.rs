//! Working memory: a set of leaky reservoir units with fixed random
//! recurrent weights, a trainable spectral radius per unit, and leak rates
//! that compete through a softmax over per-unit scores.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::spectral_radius;
use crate::params::{fan_in, rng_for, ParamId, ParamStore};

pub const DEFAULT_CONNECTIVITY: f64 = 0.2;
pub const INITIAL_SPECTRAL_RADIUS: f64 = 0.9;

/// One reservoir. `w_hat` is fixed at construction and rescaled to unit
/// spectral radius; the effective recurrent matrix is `rho · w_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirUnit {
    pub w_hat: Tensor,
    pub rho: ParamId,
    pub w_in: ParamId,
    pub score_w: ParamId,
    pub score_b: ParamId,
    pub memory_dim: usize,
    pub input_dim: usize,
}

impl ReservoirUnit {
    pub fn num_params(memory_dim: usize, input_dim: usize) -> usize {
        // w_in, score_w, score_b, rho
        input_dim * memory_dim + input_dim + 2
    }
}

/// Samples a sparse standard-normal matrix and rescales it to unit spectral
/// radius. Degenerate draws (zero radius) are redrawn from the next sub-seed.
pub fn sample_unit_radius_matrix(n: usize, connectivity: f64, seed: u64) -> Result<Tensor> {
    if !(connectivity > 0.0 && connectivity <= 1.0) {
        return Err(Error::config(format!(
            "connectivity must lie in (0, 1], got {connectivity}"
        )));
    }
    for sub in 0u64.. {
        let mut rng = rng_for(seed, &format!("reservoir.w_hat.{sub}"));
        let data: Vec<f64> = (0..n * n)
            .map(|_| {
                let keep = rng.random::<f64>() < connectivity;
                let v: f64 = rng.sample(StandardNormal);
                if keep {
                    v
                } else {
                    0.0
                }
            })
            .collect();
        let w = Tensor::matrix(n, n, data)?;
        let radius = spectral_radius(&w);
        if radius > 1e-8 {
            let scaled = w.data().iter().map(|v| v / radius).collect();
            return Tensor::matrix(n, n, scaled);
        }
    }
    unreachable!("sub-seed loop is unbounded")
}

/// Builds a reservoir unit and registers its trainable tensors.
pub fn init_reservoir(
    store: &mut ParamStore,
    prefix: &str,
    memory_dim: usize,
    input_dim: usize,
    connectivity: f64,
    seed: u64,
) -> Result<ReservoirUnit> {
    if memory_dim == 0 || input_dim == 0 {
        return Err(Error::config("reservoir dimensions must be positive"));
    }
    let w_hat = sample_unit_radius_matrix(memory_dim, connectivity, seed)?;
    let mut rng = rng_for(seed, "reservoir.params");
    Ok(ReservoirUnit {
        w_hat,
        rho: store.add(
            format!("{prefix}.rho"),
            Tensor::scalar(INITIAL_SPECTRAL_RADIUS),
        ),
        w_in: store.add(
            format!("{prefix}.w_in"),
            fan_in(&mut rng, input_dim, memory_dim, input_dim),
        ),
        score_w: store.add(
            format!("{prefix}.score_w"),
            fan_in(&mut rng, input_dim, 1, input_dim),
        ),
        score_b: store.add(format!("{prefix}.score_b"), Tensor::scalar(0.0)),
        memory_dim,
        input_dim,
    })
}

/// The recurrent state of a working memory: row `i` is unit `i`'s state.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingMemoryState {
    states: Tensor,
}

impl WorkingMemoryState {
    pub fn zeros(units: usize, memory_dim: usize) -> Self {
        WorkingMemoryState {
            states: Tensor::zeros(units, memory_dim),
        }
    }

    pub fn from_tensor(states: Tensor) -> Self {
        WorkingMemoryState { states }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.states
    }

    pub fn units(&self) -> usize {
        self.states.rows()
    }

    pub fn memory_dim(&self) -> usize {
        self.states.cols()
    }
}

/// Softmax-normalised leak rates, one per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakRates {
    pub alpha: Vec<f64>,
}

impl LeakRates {
    pub fn from_tape(tape: &Tape, v: Var) -> Self {
        LeakRates {
            alpha: tape.value(v).data().to_vec(),
        }
    }
}

/// Leaky update `(1−α)·s + α·tanh(x·w_in + ρ·s·ŵᵀ)` for one unit.
///
/// `w_hat` is the tape handle of the unit's fixed matrix (bound as a constant)
/// and `alpha` a `1×1` value.
pub fn unit_step(
    tape: &mut Tape,
    params: &[Var],
    unit: &ReservoirUnit,
    w_hat: Var,
    s_prev: Var,
    x: Var,
    alpha: Var,
) -> Result<Var> {
    let drive = tape.matmul(x, unit.w_in.of(params))?;
    let echo = tape.matmul_nt(s_prev, w_hat)?;
    let echo = tape.scale_by(unit.rho.of(params), echo)?;
    let pre = tape.add(drive, echo)?;
    let candidate = tape.tanh(pre)?;
    let keep = tape.affine(alpha, -1.0, 1.0)?;
    let kept = tape.scale_by(keep, s_prev)?;
    let fresh = tape.scale_by(alpha, candidate)?;
    tape.add(kept, fresh)
}

/// Scores each unit from its information vector and normalises with a softmax.
/// Returns a `1×M` row.
pub fn adaptive_leak_rates(
    tape: &mut Tape,
    params: &[Var],
    inputs: &[Var],
    units: &[ReservoirUnit],
) -> Result<Var> {
    if inputs.is_empty() || inputs.len() != units.len() {
        return Err(Error::config(format!(
            "{} information vectors for {} memory units",
            inputs.len(),
            units.len()
        )));
    }
    let scores = inputs
        .iter()
        .zip(units)
        .map(|(x, u)| {
            let s = tape.matmul(*x, u.score_w.of(params))?;
            tape.add(s, u.score_b.of(params))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = tape.concat_cols(&scores)?;
    tape.softmax_rows(scores)
}

/// One working-memory update. `states` is `M×d_m`, `inputs[i]` is unit `i`'s
/// `1×d_a` information vector, `fixed[i]` the bound `w_hat` of unit `i`.
pub fn memory_step(
    tape: &mut Tape,
    params: &[Var],
    states: Var,
    inputs: &[Var],
    units: &[ReservoirUnit],
    fixed: &[Var],
) -> Result<Var> {
    let (m, _) = tape.shape(states);
    if m != units.len() || fixed.len() != units.len() {
        return Err(Error::config(format!(
            "{m} state rows for {} units",
            units.len()
        )));
    }
    let alpha = adaptive_leak_rates(tape, params, inputs, units)?;
    let rows = units
        .iter()
        .enumerate()
        .map(|(i, unit)| {
            let s_prev = tape.slice_rows(states, i, 1)?;
            let a = tape.slice_cols(alpha, i, 1)?;
            unit_step(tape, params, unit, fixed[i], s_prev, inputs[i], a)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.concat_rows(&rows)
}

/// Multiply-add count of one [`memory_step`]; depends only on the sizes.
pub fn memory_step_flops(units: usize, memory_dim: usize, input_dim: usize) -> u64 {
    let (m, d, a) = (units as u64, memory_dim as u64, input_dim as u64);
    let scores = m * a;
    let per_unit = a * d + d * d + 6 * d;
    scores + m * per_unit
}
