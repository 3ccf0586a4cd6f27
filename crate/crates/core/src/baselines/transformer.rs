//! Decoder-only Transformer baseline: post-norm blocks of causal multi-head
//! self-attention and a ReLU feed-forward, over a linear token embedding plus
//! sinusoidal positions.

use serde::{Deserialize, Serialize};

use crate::attention::scaled_dot_attention;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in, rng_for, ParamId, ParamStore};

pub const DEFAULT_MAX_LEN: usize = 1024;
const LN_EPS: f64 = 1e-5;

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub nhead: usize,
    pub num_layers: usize,
    pub dim_feedforward: usize,
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub output_dim: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TransformerConfig {
    pub fn new(d_model: usize, nhead: usize, num_layers: usize, dim_feedforward: usize) -> Self {
        TransformerConfig {
            d_model,
            nhead,
            num_layers,
            dim_feedforward,
            input_dim: 1,
            output_dim: 1,
            max_len: DEFAULT_MAX_LEN,
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
            ("d_model", self.d_model),
            ("nhead", self.nhead),
            ("num_layers", self.num_layers),
            ("dim_feedforward", self.dim_feedforward),
            ("input_dim", self.input_dim),
            ("output_dim", self.output_dim),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!(
                "transformer {name} must be positive"
            )));
        }
        if self.d_model % self.nhead != 0 {
            return Err(Error::config(format!(
                "d_model={} is not divisible by nhead={}",
                self.d_model, self.nhead
            )));
        }
        Ok(())
    }

    pub fn count_parameters(&self) -> usize {
        let (d, f) = (self.d_model, self.dim_feedforward);
        let block = 4 * d * d + 4 * d + 2 * d * f + f + d + 4 * d;
        self.input_dim * d + d + self.num_layers * block + d * self.output_dim + self.output_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    w_q: ParamId,
    b_q: ParamId,
    w_k: ParamId,
    b_k: ParamId,
    w_v: ParamId,
    b_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    config: TransformerConfig,
    params: ParamStore,
    embed_w: ParamId,
    embed_b: ParamId,
    blocks: Vec<Block>,
    out_w: ParamId,
    out_b: ParamId,
    history: Option<Vec<Vec<f64>>>,
}

/// `T×d` sinusoidal position table.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            data[pos * d + i] = angle.sin();
            if i + 1 < d {
                data[pos * d + i + 1] = angle.cos();
            }
        }
    }
    Tensor::matrix(len, d, data).expect("positional table shape")
}

/// Row-major `T×T` mask, true where query `i` may read key `j` (`j ≤ i`).
pub fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|k| k % len <= k / len).collect()
}

impl TransformerModel {
    pub fn new(config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let (d, f) = (config.d_model, config.dim_feedforward);
        let mut rng = rng_for(config.seed, "transformer.init");
        let mut params = ParamStore::new();
        let embed_w = params.add(
            "embed.w",
            fan_in(&mut rng, config.input_dim, d, config.input_dim),
        );
        let embed_b = params.add("embed.b", fan_in(&mut rng, 1, d, config.input_dim));
        let blocks = (0..config.num_layers)
            .map(|l| {
                let mut lin = |name: &str, rows: usize, cols: usize, fan: usize| {
                    params.add(
                        format!("block{l}.{name}"),
                        fan_in(&mut rng, rows, cols, fan),
                    )
                };
                let w_q = lin("w_q", d, d, d);
                let b_q = lin("b_q", 1, d, d);
                let w_k = lin("w_k", d, d, d);
                let b_k = lin("b_k", 1, d, d);
                let w_v = lin("w_v", d, d, d);
                let b_v = lin("b_v", 1, d, d);
                let w_o = lin("w_o", d, d, d);
                let b_o = lin("b_o", 1, d, d);
                let w1 = lin("ff.w1", d, f, d);
                let b1 = lin("ff.b1", 1, f, d);
                let w2 = lin("ff.w2", f, d, f);
                let b2 = lin("ff.b2", 1, d, f);
                let ones = Tensor::row(vec![1.0; d]);
                Block {
                    w_q,
                    b_q,
                    w_k,
                    b_k,
                    w_v,
                    b_v,
                    w_o,
                    b_o,
                    ln1_g: params.add(format!("block{l}.ln1.gain"), ones.clone()),
                    ln1_b: params.add(format!("block{l}.ln1.shift"), Tensor::zeros(1, d)),
                    w1,
                    b1,
                    w2,
                    b2,
                    ln2_g: params.add(format!("block{l}.ln2.gain"), ones),
                    ln2_b: params.add(format!("block{l}.ln2.shift"), Tensor::zeros(1, d)),
                }
            })
            .collect();
        let out_w = params.add("out.w", fan_in(&mut rng, d, config.output_dim, d));
        let out_b = params.add("out.b", fan_in(&mut rng, 1, config.output_dim, d));
        Ok(TransformerModel {
            config,
            params,
            embed_w,
            embed_b,
            blocks,
            out_w,
            out_b,
            history: None,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn linear(tape: &mut Tape, p: &[Var], x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let y = tape.matmul(x, w.of(p))?;
        tape.add_row_bias(y, b.of(p))
    }

    fn block(&self, tape: &mut Tape, p: &[Var], x: Var, blk: &Block, mask: &[bool]) -> Result<Var> {
        let d = self.config.d_model;
        let d_head = d / self.config.nhead;
        let q = Self::linear(tape, p, x, blk.w_q, blk.b_q)?;
        let k = Self::linear(tape, p, x, blk.w_k, blk.b_k)?;
        let v = Self::linear(tape, p, x, blk.w_v, blk.b_v)?;
        let heads = (0..self.config.nhead)
            .map(|h| {
                let qh = tape.slice_cols(q, h * d_head, d_head)?;
                let kh = tape.slice_cols(k, h * d_head, d_head)?;
                let vh = tape.slice_cols(v, h * d_head, d_head)?;
                scaled_dot_attention(tape, qh, kh, vh, Some(mask))
            })
            .collect::<Result<Vec<_>>>()?;
        let joined = tape.concat_cols(&heads)?;
        let attn = Self::linear(tape, p, joined, blk.w_o, blk.b_o)?;
        let x = tape.add(x, attn)?;
        let x = tape.layer_norm(x, blk.ln1_g.of(p), blk.ln1_b.of(p), LN_EPS)?;
        let hidden = Self::linear(tape, p, x, blk.w1, blk.b1)?;
        let hidden = tape.relu(hidden)?;
        let ff = Self::linear(tape, p, hidden, blk.w2, blk.b2)?;
        let x = tape.add(x, ff)?;
        tape.layer_norm(x, blk.ln2_g.of(p), blk.ln2_b.of(p), LN_EPS)
    }

    /// All positions in parallel under the causal mask.
    pub fn forward_on(&self, tape: &mut Tape, p: &[Var], inputs: &Tensor) -> Result<Var> {
        let len = inputs.rows();
        if len == 0 {
            return Err(Error::Usage(
                "forward_sequence needs at least one timestep".into(),
            ));
        }
        if len > self.config.max_len {
            return Err(Error::Capacity {
                len,
                max_len: self.config.max_len,
            });
        }
        if inputs.cols() != self.config.input_dim {
            return Err(Error::dim(
                "transformer forward",
                format!(
                    "token width {} vs input_dim {}",
                    inputs.cols(),
                    self.config.input_dim
                ),
            ));
        }
        let tokens = tape.constant(inputs.clone());
        let pe = tape.constant(positional_encoding(len, self.config.d_model));
        let x = Self::linear(tape, p, tokens, self.embed_w, self.embed_b)?;
        let mut x = tape.add(x, pe)?;
        let mask = causal_mask(len);
        for blk in &self.blocks {
            x = self.block(tape, p, x, blk, &mask)?;
        }
        Self::linear(tape, p, x, self.out_w, self.out_b)
    }

    pub fn forward_sequence(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward_on(&mut tape, &p, inputs)?;
        Ok(tape.value(out).clone())
    }

    pub fn reset_state(&mut self) {
        self.history = Some(Vec::new());
    }

    pub fn history_len(&self) -> Option<usize> {
        self.history.as_ref().map(Vec::len)
    }

    /// Streaming inference without a cache: the whole prefix is re-encoded on
    /// every call, so the cost of step `t` grows with `t`.
    pub fn forward_step(&mut self, token: &[f64]) -> Result<Vec<f64>> {
        let history = self
            .history
            .as_mut()
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
        if history.len() >= self.config.max_len {
            return Err(Error::Capacity {
                len: history.len() + 1,
                max_len: self.config.max_len,
            });
        }
        history.push(token.to_vec());
        let rows = history.len();
        let flat: Vec<f64> = history.iter().flatten().copied().collect();
        let inputs = Tensor::matrix(rows, self.config.input_dim, flat)?;
        let out = self.forward_sequence(&inputs)?;
        Ok(out.row_slice(rows - 1).to_vec())
    }
}
