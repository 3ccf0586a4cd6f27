//! The Echo State Transformer: input embedding, then per layer
//! previous-state attention → working memory → memory self-attention →
//! feed-forward, then an output projection.

use serde::{Deserialize, Serialize};

use crate::attention::{
    feed_forward, memory_self_attention, previous_state_attention_rows, AttentionHead, FeedForward,
};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in, rng_for, ParamId, ParamStore};
use crate::reservoir::{
    init_reservoir, memory_step, ReservoirUnit, WorkingMemoryState, DEFAULT_CONNECTIVITY,
};

fn default_connectivity() -> f64 {
    DEFAULT_CONNECTIVITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstConfig {
    pub memory_units: usize,
    pub memory_dim: usize,
    pub attention_dim: usize,
    pub num_layers: usize,
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub output_dim: usize,
    #[serde(default = "default_connectivity")]
    pub connectivity: f64,
    #[serde(default)]
    pub seed: u64,
}

impl EstConfig {
    pub fn new(
        memory_units: usize,
        memory_dim: usize,
        attention_dim: usize,
        num_layers: usize,
    ) -> Self {
        EstConfig {
            memory_units,
            memory_dim,
            attention_dim,
            num_layers,
            input_dim: 1,
            output_dim: 1,
            connectivity: DEFAULT_CONNECTIVITY,
            seed: 0,
        }
    }

    pub fn with_io(mut self, input_dim: usize, output_dim: usize) -> Self {
        self.input_dim = input_dim;
        self.output_dim = output_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("memory_units", self.memory_units),
            ("memory_dim", self.memory_dim),
            ("attention_dim", self.attention_dim),
            ("num_layers", self.num_layers),
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::config(format!("est.{name} must be positive")));
            }
        }
        if !(self.connectivity > 0.0 && self.connectivity <= 1.0) {
            return Err(Error::config(format!(
                "est.connectivity must lie in (0, 1], got {}",
                self.connectivity
            )));
        }
        Ok(())
    }

    /// Closed-form count of trainable scalars (fixed reservoir matrices excluded).
    pub fn count_parameters(&self) -> usize {
        let (m, d_m, d_a) = (self.memory_units, self.memory_dim, self.attention_dim);
        let embed = self.input_dim * d_a + d_a;
        let prev = m * AttentionHead::num_params(d_a, d_m, d_a, d_a);
        let memory = m * ReservoirUnit::num_params(d_m, d_a);
        let self_attn = AttentionHead::num_params(d_m, d_m, d_a, d_m);
        let reduce = m * d_m * d_a;
        let ff = FeedForward::num_params(d_a);
        let out = d_a * self.output_dim + self.output_dim;
        embed + self.num_layers * (prev + memory + self_attn + reduce + ff) + out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct EstLayer {
    prev_heads: Vec<AttentionHead>,
    units: Vec<ReservoirUnit>,
    self_head: AttentionHead,
    reduce: ParamId,
    ff: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstModel {
    config: EstConfig,
    params: ParamStore,
    embed_w: ParamId,
    embed_b: ParamId,
    layers: Vec<EstLayer>,
    out_w: ParamId,
    out_b: ParamId,
    recurrent: Option<Vec<WorkingMemoryState>>,
}

/// Fixed reservoir matrices bound onto a tape, `[layer][unit]`.
pub type FixedVars = Vec<Vec<Var>>;

impl EstModel {
    pub fn new(config: EstConfig) -> Result<Self> {
        config.validate()?;
        let (m, d_m, d_a) = (config.memory_units, config.memory_dim, config.attention_dim);
        let mut rng = rng_for(config.seed, "est.init");
        let mut params = ParamStore::new();
        let embed_w = params.add(
            "embed.w",
            fan_in(&mut rng, config.input_dim, d_a, config.input_dim),
        );
        let embed_b = params.add("embed.b", fan_in(&mut rng, 1, d_a, config.input_dim));
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let prev_heads = (0..m)
                .map(|i| {
                    AttentionHead::init(
                        &mut params,
                        &format!("layer{l}.prev{i}"),
                        &mut rng,
                        d_a,
                        d_m,
                        d_a,
                        d_a,
                    )
                })
                .collect();
            let units = (0..m)
                .map(|i| {
                    let seed =
                        crate::params::derive_seed(config.seed, &format!("est.layer{l}.unit{i}"));
                    init_reservoir(
                        &mut params,
                        &format!("layer{l}.unit{i}"),
                        d_m,
                        d_a,
                        config.connectivity,
                        seed,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let self_head = AttentionHead::init(
                &mut params,
                &format!("layer{l}.self"),
                &mut rng,
                d_m,
                d_m,
                d_a,
                d_m,
            );
            let reduce = params.add(
                format!("layer{l}.reduce"),
                fan_in(&mut rng, m * d_m, d_a, m * d_m),
            );
            let ff = FeedForward::init(&mut params, &format!("layer{l}.ff"), &mut rng, d_a);
            layers.push(EstLayer {
                prev_heads,
                units,
                self_head,
                reduce,
                ff,
            });
        }
        let out_w = params.add("out.w", fan_in(&mut rng, d_a, config.output_dim, d_a));
        let out_b = params.add("out.b", fan_in(&mut rng, 1, config.output_dim, d_a));
        Ok(EstModel {
            config,
            params,
            embed_w,
            embed_b,
            layers,
            out_w,
            out_b,
            recurrent: None,
        })
    }

    pub fn config(&self) -> &EstConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Fixed reservoir matrices, `[layer][unit]`.
    pub fn fixed_weights(&self) -> Vec<Vec<&Tensor>> {
        self.layers
            .iter()
            .map(|l| l.units.iter().map(|u| &u.w_hat).collect())
            .collect()
    }

    /// Overwrites the fixed matrices, e.g. when restoring a checkpoint.
    pub fn set_fixed_weights(&mut self, fixed: Vec<Vec<Tensor>>) -> Result<()> {
        if fixed.len() != self.layers.len() {
            return Err(Error::Format(format!(
                "{} fixed layers for {} model layers",
                fixed.len(),
                self.layers.len()
            )));
        }
        for (layer, mats) in self.layers.iter_mut().zip(fixed) {
            if mats.len() != layer.units.len() {
                return Err(Error::Format(
                    "fixed matrix count does not match memory units".into(),
                ));
            }
            for (unit, w) in layer.units.iter_mut().zip(mats) {
                if w.shape() != unit.w_hat.shape() {
                    return Err(Error::Format(format!("fixed matrix shape {:?}", w.shape())));
                }
                unit.w_hat = w;
            }
        }
        Ok(())
    }

    pub fn bind_fixed(&self, tape: &mut Tape) -> FixedVars {
        self.layers
            .iter()
            .map(|l| {
                l.units
                    .iter()
                    .map(|u| tape.constant(u.w_hat.clone()))
                    .collect()
            })
            .collect()
    }

    pub fn zero_states(&self, tape: &mut Tape) -> Vec<Var> {
        (0..self.layers.len())
            .map(|_| {
                tape.constant(Tensor::zeros(
                    self.config.memory_units,
                    self.config.memory_dim,
                ))
            })
            .collect()
    }

    /// One timestep on a tape. `states[l]` is layer `l`'s `M×d_m` memory; the
    /// updated memories are returned alongside the `1×output_dim` prediction.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        p: &[Var],
        fixed: &FixedVars,
        states: &[Var],
        token: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let emb = tape.matmul(token, self.embed_w.of(p))?;
        let mut x = tape.add_row_bias(emb, self.embed_b.of(p))?;
        let mut next = Vec::with_capacity(self.layers.len());
        for ((layer, state), fixed) in self.layers.iter().zip(states).zip(fixed) {
            let info = previous_state_attention_rows(tape, p, x, *state, &layer.prev_heads)?;
            let updated = memory_step(tape, p, *state, &info, &layer.units, fixed)?;
            let h = memory_self_attention(tape, p, updated, &layer.self_head, layer.reduce.of(p))?;
            x = feed_forward(tape, p, h, &layer.ff)?;
            next.push(updated);
        }
        let y = tape.matmul(x, self.out_w.of(p))?;
        let y = tape.add_row_bias(y, self.out_b.of(p))?;
        Ok((y, next))
    }

    /// Runs a whole sequence from zero state on one tape, so a backward pass
    /// through the result is full backpropagation through time.
    pub fn forward_on(&self, tape: &mut Tape, p: &[Var], inputs: &Tensor) -> Result<Var> {
        if inputs.rows() == 0 {
            return Err(Error::Usage(
                "forward_sequence needs at least one timestep".into(),
            ));
        }
        if inputs.cols() != self.config.input_dim {
            return Err(Error::dim(
                "est forward",
                format!(
                    "token width {} vs input_dim {}",
                    inputs.cols(),
                    self.config.input_dim
                ),
            ));
        }
        let fixed = self.bind_fixed(tape);
        let mut states = self.zero_states(tape);
        let mut outputs = Vec::with_capacity(inputs.rows());
        for t in 0..inputs.rows() {
            let token = tape.constant(Tensor::row(inputs.row_slice(t).to_vec()));
            let (y, next) = self.step_on_tape(tape, p, &fixed, &states, token)?;
            outputs.push(y);
            states = next;
        }
        tape.concat_rows(&outputs)
    }

    pub fn forward_sequence(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward_on(&mut tape, &p, inputs)?;
        Ok(tape.value(out).clone())
    }

    /// Clears the streaming state to zeros.
    pub fn reset_state(&mut self) {
        self.recurrent = Some(
            (0..self.layers.len())
                .map(|_| {
                    WorkingMemoryState::zeros(self.config.memory_units, self.config.memory_dim)
                })
                .collect(),
        );
    }

    pub fn state(&self) -> Option<&[WorkingMemoryState]> {
        self.recurrent.as_deref()
    }

    /// Streaming inference: consumes one token, advances the stored state and
    /// returns the prediction for this step. The work per call is fixed by the
    /// configuration, whatever the number of preceding calls.
    pub fn forward_step(&mut self, token: &[f64]) -> Result<Vec<f64>> {
        let states = self
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
        let fixed = self.bind_fixed(&mut tape);
        let state_vars: Vec<Var> = states
            .iter()
            .map(|s| tape.constant(s.tensor().clone()))
            .collect();
        let token = tape.constant(Tensor::row(token.to_vec()));
        let (y, next) = self.step_on_tape(&mut tape, &p, &fixed, &state_vars, token)?;
        self.recurrent = Some(
            next.iter()
                .map(|v| WorkingMemoryState::from_tensor(tape.value(*v).clone()))
                .collect(),
        );
        Ok(tape.value(y).data().to_vec())
    }
}
