//! Gated recurrent baselines (GRU and LSTM) with a per-step linear head.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in, rng_for, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrentConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub output_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl RecurrentConfig {
    pub fn new(hidden_size: usize, num_layers: usize) -> Self {
        RecurrentConfig {
            hidden_size,
            num_layers,
            input_dim: 1,
            output_dim: 1,
            seed: 0,
        }
    }

    pub fn with_io(mut self, input_dim: usize, output_dim: usize) -> Self {
        self.input_dim = input_dim;
        self.output_dim = output_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0
            || self.num_layers == 0
            || self.input_dim == 0
            || self.output_dim == 0
        {
            return Err(Error::config("recurrent sizes must be positive"));
        }
        Ok(())
    }

    pub fn count_parameters(&self, kind: CellKind) -> usize {
        let (h, g) = (self.hidden_size, kind.gates());
        let mut total = 0;
        for l in 0..self.num_layers {
            let fan = if l == 0 { self.input_dim } else { h };
            total += g * (fan * h + h * h + 2 * h);
        }
        total + h * self.output_dim + self.output_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
struct CellLayer {
    w_ih: ParamId,
    w_hh: ParamId,
    b_ih: ParamId,
    b_hh: ParamId,
}

/// Hidden (and, for LSTM, cell) state of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub hidden: Vec<Tensor>,
    pub cell: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentModel {
    kind: CellKind,
    config: RecurrentConfig,
    params: ParamStore,
    layers: Vec<CellLayer>,
    out_w: ParamId,
    out_b: ParamId,
    recurrent: Option<RecurrentState>,
}

/// GRU update, gate order (reset, update, new):
/// `n = tanh(x·W_n + b_n + r ⊙ (h·U_n + c_n))`, `h' = (1 − z) ⊙ n + z ⊙ h`.
fn gru_cell(
    tape: &mut Tape,
    p: &[Var],
    layer: &CellLayer,
    h: Var,
    x: Var,
    hidden: usize,
) -> Result<Var> {
    let gi = tape.matmul(x, layer.w_ih.of(p))?;
    let gi = tape.add_row_bias(gi, layer.b_ih.of(p))?;
    let gh = tape.matmul(h, layer.w_hh.of(p))?;
    let gh = tape.add_row_bias(gh, layer.b_hh.of(p))?;
    let part = |tape: &mut Tape, v: Var, k: usize| tape.slice_cols(v, k * hidden, hidden);
    let (ir, hr) = (part(tape, gi, 0)?, part(tape, gh, 0)?);
    let (iz, hz) = (part(tape, gi, 1)?, part(tape, gh, 1)?);
    let (inn, hn) = (part(tape, gi, 2)?, part(tape, gh, 2)?);
    let r = tape.add(ir, hr)?;
    let r = tape.sigmoid(r)?;
    let z = tape.add(iz, hz)?;
    let z = tape.sigmoid(z)?;
    let gated = tape.mul(r, hn)?;
    let n = tape.add(inn, gated)?;
    let n = tape.tanh(n)?;
    let one_minus_z = tape.affine(z, -1.0, 1.0)?;
    let fresh = tape.mul(one_minus_z, n)?;
    let kept = tape.mul(z, h)?;
    tape.add(fresh, kept)
}

/// LSTM update, gate order (input, forget, cell, output).
fn lstm_cell(
    tape: &mut Tape,
    p: &[Var],
    layer: &CellLayer,
    h: Var,
    c: Var,
    x: Var,
    hidden: usize,
) -> Result<(Var, Var)> {
    let gi = tape.matmul(x, layer.w_ih.of(p))?;
    let gi = tape.add_row_bias(gi, layer.b_ih.of(p))?;
    let gh = tape.matmul(h, layer.w_hh.of(p))?;
    let gh = tape.add_row_bias(gh, layer.b_hh.of(p))?;
    let gates = tape.add(gi, gh)?;
    let i = tape.slice_cols(gates, 0, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_cols(gates, hidden, hidden)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let o = tape.sigmoid(o)?;
    let kept = tape.mul(f, c)?;
    let written = tape.mul(i, g)?;
    let c_next = tape.add(kept, written)?;
    let squashed = tape.tanh(c_next)?;
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

impl RecurrentModel {
    pub fn new(kind: CellKind, config: RecurrentConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let g = kind.gates();
        let label = match kind {
            CellKind::Gru => "gru.init",
            CellKind::Lstm => "lstm.init",
        };
        let mut rng = rng_for(config.seed, label);
        let mut params = ParamStore::new();
        let layers = (0..config.num_layers)
            .map(|l| {
                let fan = if l == 0 { config.input_dim } else { h };
                CellLayer {
                    w_ih: params.add(format!("layer{l}.w_ih"), fan_in(&mut rng, fan, g * h, h)),
                    w_hh: params.add(format!("layer{l}.w_hh"), fan_in(&mut rng, h, g * h, h)),
                    b_ih: params.add(format!("layer{l}.b_ih"), fan_in(&mut rng, 1, g * h, h)),
                    b_hh: params.add(format!("layer{l}.b_hh"), fan_in(&mut rng, 1, g * h, h)),
                }
            })
            .collect();
        let out_w = params.add("out.w", fan_in(&mut rng, h, config.output_dim, h));
        let out_b = params.add("out.b", fan_in(&mut rng, 1, config.output_dim, h));
        Ok(RecurrentModel {
            kind,
            config,
            params,
            layers,
            out_w,
            out_b,
            recurrent: None,
        })
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn config(&self) -> &RecurrentConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// One timestep: updates `hidden`/`cell` in place and returns the prediction.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        p: &[Var],
        hidden: &mut [Var],
        cell: &mut [Var],
        token: Var,
    ) -> Result<Var> {
        let size = self.config.hidden_size;
        let mut x = token;
        for (l, layer) in self.layers.iter().enumerate() {
            match self.kind {
                CellKind::Gru => {
                    hidden[l] = gru_cell(tape, p, layer, hidden[l], x, size)?;
                }
                CellKind::Lstm => {
                    let (h, c) = lstm_cell(tape, p, layer, hidden[l], cell[l], x, size)?;
                    hidden[l] = h;
                    cell[l] = c;
                }
            }
            x = hidden[l];
        }
        let y = tape.matmul(x, self.out_w.of(p))?;
        tape.add_row_bias(y, self.out_b.of(p))
    }

    pub fn forward_on(&self, tape: &mut Tape, p: &[Var], inputs: &Tensor) -> Result<Var> {
        if inputs.rows() == 0 {
            return Err(Error::Usage(
                "forward_sequence needs at least one timestep".into(),
            ));
        }
        if inputs.cols() != self.config.input_dim {
            return Err(Error::dim(
                "recurrent forward",
                format!(
                    "token width {} vs input_dim {}",
                    inputs.cols(),
                    self.config.input_dim
                ),
            ));
        }
        let size = self.config.hidden_size;
        let mut hidden: Vec<Var> = (0..self.layers.len())
            .map(|_| tape.constant(Tensor::zeros(1, size)))
            .collect();
        let mut cell = hidden.clone();
        let mut outputs = Vec::with_capacity(inputs.rows());
        for t in 0..inputs.rows() {
            let token = tape.constant(Tensor::row(inputs.row_slice(t).to_vec()));
            outputs.push(self.step_on_tape(tape, p, &mut hidden, &mut cell, token)?);
        }
        tape.concat_rows(&outputs)
    }

    pub fn forward_sequence(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward_on(&mut tape, &p, inputs)?;
        Ok(tape.value(out).clone())
    }

    pub fn reset_state(&mut self) {
        let zeros = vec![Tensor::zeros(1, self.config.hidden_size); self.layers.len()];
        self.recurrent = Some(RecurrentState {
            hidden: zeros.clone(),
            cell: zeros,
        });
    }

    pub fn state(&self) -> Option<&RecurrentState> {
        self.recurrent.as_ref()
    }

    pub fn forward_step(&mut self, token: &[f64]) -> Result<Vec<f64>> {
        let state = self
            .recurrent
            .as_ref()
            .ok_or_else(|| Error::Usage("forward_step before reset_state".into()))?;
        if token.len() != self.config.input_dim {
            return Err(Error::dim(
                "forward_step",
                format!(
                    "token width {} vs input_dim {}",
                    token.len(),
                    self.config.input_dim
                ),
            ));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let mut hidden: Vec<Var> = state
            .hidden
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let mut cell: Vec<Var> = state
            .cell
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let token = tape.constant(Tensor::row(token.to_vec()));
        let y = self.step_on_tape(&mut tape, &p, &mut hidden, &mut cell, token)?;
        self.recurrent = Some(RecurrentState {
            hidden: hidden.iter().map(|v| tape.value(*v).clone()).collect(),
            cell: cell.iter().map(|v| tape.value(*v).clone()).collect(),
        });
        Ok(tape.value(y).data().to_vec())
    }
}
