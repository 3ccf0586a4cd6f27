//! One interface over every architecture, plus the named configurations of
//! the four parameter-size buckets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::baselines::{
    CellKind, RecurrentConfig, RecurrentModel, TransformerConfig, TransformerModel,
};
use crate::error::{Error, Result};
use crate::est::{EstConfig, EstModel};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Est,
    Gru,
    Lstm,
    Transformer,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Est, Family::Gru, Family::Lstm, Family::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Family::Est => "est",
            Family::Gru => "gru",
            Family::Lstm => "lstm",
            Family::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config(format!("unknown model family {s:?}")))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeBucket {
    #[serde(rename = "1k")]
    K1,
    #[serde(rename = "10k")]
    K10,
    #[serde(rename = "100k")]
    K100,
    #[serde(rename = "1M")]
    M1,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 4] = [
        SizeBucket::K1,
        SizeBucket::K10,
        SizeBucket::K100,
        SizeBucket::M1,
    ];

    pub fn nominal(self) -> usize {
        match self {
            SizeBucket::K1 => 1_000,
            SizeBucket::K10 => 10_000,
            SizeBucket::K100 => 100_000,
            SizeBucket::M1 => 1_000_000,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeBucket::K1 => "1k",
            SizeBucket::K10 => "10k",
            SizeBucket::K100 => "100k",
            SizeBucket::M1 => "1M",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        SizeBucket::ALL
            .into_iter()
            .find(|b| b.label() == s)
            .ok_or_else(|| Error::config(format!("unknown size bucket {s:?}")))
    }

    /// Whether `count` lies in `[0.5×, 2×]` of the nominal size.
    pub fn contains(self, count: usize) -> bool {
        let n = self.nominal();
        2 * count >= n && count <= 2 * n
    }
}

impl fmt::Display for SizeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Est(EstConfig),
    Gru(RecurrentConfig),
    Lstm(RecurrentConfig),
    Transformer(TransformerConfig),
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Est(_) => Family::Est,
            ModelConfig::Gru(_) => Family::Gru,
            ModelConfig::Lstm(_) => Family::Lstm,
            ModelConfig::Transformer(_) => Family::Transformer,
        }
    }

    pub fn with_io(mut self, input_dim: usize, output_dim: usize) -> Self {
        match &mut self {
            ModelConfig::Est(c) => (c.input_dim, c.output_dim) = (input_dim, output_dim),
            ModelConfig::Gru(c) | ModelConfig::Lstm(c) => {
                (c.input_dim, c.output_dim) = (input_dim, output_dim)
            }
            ModelConfig::Transformer(c) => (c.input_dim, c.output_dim) = (input_dim, output_dim),
        }
        self
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelConfig::Est(c) => c.seed,
            ModelConfig::Gru(c) | ModelConfig::Lstm(c) => c.seed,
            ModelConfig::Transformer(c) => c.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelConfig::Est(c) => c.seed = seed,
            ModelConfig::Gru(c) | ModelConfig::Lstm(c) => c.seed = seed,
            ModelConfig::Transformer(c) => c.seed = seed,
        }
        self
    }

    pub fn io(&self) -> (usize, usize) {
        match self {
            ModelConfig::Est(c) => (c.input_dim, c.output_dim),
            ModelConfig::Gru(c) | ModelConfig::Lstm(c) => (c.input_dim, c.output_dim),
            ModelConfig::Transformer(c) => (c.input_dim, c.output_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Est(c) => c.validate(),
            ModelConfig::Gru(c) | ModelConfig::Lstm(c) => c.validate(),
            ModelConfig::Transformer(c) => c.validate(),
        }
    }

    pub fn count_parameters(&self) -> usize {
        match self {
            ModelConfig::Est(c) => c.count_parameters(),
            ModelConfig::Gru(c) => c.count_parameters(CellKind::Gru),
            ModelConfig::Lstm(c) => c.count_parameters(CellKind::Lstm),
            ModelConfig::Transformer(c) => c.count_parameters(),
        }
    }
}

/// A configuration from the published size grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedConfig {
    pub name: String,
    pub bucket: SizeBucket,
    pub config: ModelConfig,
}

impl NamedConfig {
    pub fn family(&self) -> Family {
        self.config.family()
    }
}

const EST_GRID: [(usize, usize, usize, SizeBucket, usize); 16] = [
    (2, 13, 6, SizeBucket::K1, 1),
    (10, 15, 3, SizeBucket::K1, 2),
    (5, 5, 5, SizeBucket::K1, 3),
    (4, 29, 4, SizeBucket::K1, 4),
    (6, 48, 13, SizeBucket::K10, 1),
    (14, 49, 8, SizeBucket::K10, 2),
    (10, 46, 10, SizeBucket::K10, 3),
    (8, 110, 8, SizeBucket::K10, 4),
    (12, 101, 32, SizeBucket::K100, 1),
    (34, 100, 17, SizeBucket::K100, 2),
    (23, 85, 23, SizeBucket::K100, 3),
    (16, 314, 16, SizeBucket::K100, 4),
    (30, 241, 64, SizeBucket::M1, 1),
    (64, 252, 38, SizeBucket::M1, 2),
    (47, 253, 47, SizeBucket::M1, 3),
    (38, 529, 38, SizeBucket::M1, 4),
];

const GRU_GRID: [(usize, SizeBucket); 4] = [
    (12, SizeBucket::K1),
    (51, SizeBucket::K10),
    (175, SizeBucket::K100),
    (570, SizeBucket::M1),
];

const LSTM_GRID: [(usize, SizeBucket); 4] = [
    (10, SizeBucket::K1),
    (43, SizeBucket::K10),
    (151, SizeBucket::K100),
    (493, SizeBucket::M1),
];

const TRANSFORMER_GRID: [(usize, usize, usize, SizeBucket, usize); 16] = [
    (8, 2, 29, SizeBucket::K1, 1),
    (8, 4, 29, SizeBucket::K1, 2),
    (10, 2, 10, SizeBucket::K1, 3),
    (10, 5, 10, SizeBucket::K1, 4),
    (28, 4, 112, SizeBucket::K10, 1),
    (28, 7, 112, SizeBucket::K10, 2),
    (38, 2, 38, SizeBucket::K10, 3),
    (38, 19, 38, SizeBucket::K10, 4),
    (90, 5, 360, SizeBucket::K100, 1),
    (90, 18, 360, SizeBucket::K100, 2),
    (128, 8, 128, SizeBucket::K100, 3),
    (128, 16, 128, SizeBucket::K100, 4),
    (290, 29, 1130, SizeBucket::M1, 1),
    (290, 58, 1130, SizeBucket::M1, 2),
    (405, 9, 405, SizeBucket::M1, 3),
    (405, 45, 405, SizeBucket::M1, 4),
];

/// Every published configuration, with `input_dim = output_dim = 1`.
pub fn named_configs() -> Vec<NamedConfig> {
    let mut out = Vec::new();
    for (m, d_m, d_a, bucket, k) in EST_GRID {
        out.push(NamedConfig {
            name: format!("est-{k}-{bucket}"),
            bucket,
            config: ModelConfig::Est(EstConfig::new(m, d_m, d_a, 1)),
        });
    }
    for (h, bucket) in GRU_GRID {
        out.push(NamedConfig {
            name: format!("gru-{bucket}"),
            bucket,
            config: ModelConfig::Gru(RecurrentConfig::new(h, 1)),
        });
    }
    for (h, bucket) in LSTM_GRID {
        out.push(NamedConfig {
            name: format!("lstm-{bucket}"),
            bucket,
            config: ModelConfig::Lstm(RecurrentConfig::new(h, 1)),
        });
    }
    for (d, heads, ff, bucket, k) in TRANSFORMER_GRID {
        out.push(NamedConfig {
            name: format!("transformer-{k}-{bucket}"),
            bucket,
            config: ModelConfig::Transformer(TransformerConfig::new(d, heads, 1, ff)),
        });
    }
    out
}

pub fn named_config(name: &str) -> Result<NamedConfig> {
    named_configs()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::config(format!("unknown model config {name:?}")))
}

pub fn configs_for(family: Family, bucket: SizeBucket) -> Vec<NamedConfig> {
    named_configs()
        .into_iter()
        .filter(|c| c.family() == family && c.bucket == bucket)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Est(EstModel),
    Recurrent(RecurrentModel),
    Transformer(TransformerModel),
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        Ok(match config {
            ModelConfig::Est(c) => Model::Est(EstModel::new(c.clone())?),
            ModelConfig::Gru(c) => Model::Recurrent(RecurrentModel::new(CellKind::Gru, c.clone())?),
            ModelConfig::Lstm(c) => {
                Model::Recurrent(RecurrentModel::new(CellKind::Lstm, c.clone())?)
            }
            ModelConfig::Transformer(c) => Model::Transformer(TransformerModel::new(c.clone())?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Est(m) => ModelConfig::Est(m.config().clone()),
            Model::Recurrent(m) => match m.kind() {
                CellKind::Gru => ModelConfig::Gru(m.config().clone()),
                CellKind::Lstm => ModelConfig::Lstm(m.config().clone()),
            },
            Model::Transformer(m) => ModelConfig::Transformer(m.config().clone()),
        }
    }

    pub fn family(&self) -> Family {
        self.config().family()
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Est(m) => m.params(),
            Model::Recurrent(m) => m.params(),
            Model::Transformer(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Est(m) => m.params_mut(),
            Model::Recurrent(m) => m.params_mut(),
            Model::Transformer(m) => m.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().num_scalars()
    }

    pub fn forward_on(&self, tape: &mut Tape, p: &[Var], inputs: &Tensor) -> Result<Var> {
        match self {
            Model::Est(m) => m.forward_on(tape, p, inputs),
            Model::Recurrent(m) => m.forward_on(tape, p, inputs),
            Model::Transformer(m) => m.forward_on(tape, p, inputs),
        }
    }

    pub fn forward_sequence(&self, inputs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params().bind(&mut tape);
        let out = self.forward_on(&mut tape, &p, inputs)?;
        Ok(tape.value(out).clone())
    }

    pub fn reset_state(&mut self) {
        match self {
            Model::Est(m) => m.reset_state(),
            Model::Recurrent(m) => m.reset_state(),
            Model::Transformer(m) => m.reset_state(),
        }
    }

    pub fn forward_step(&mut self, token: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Est(m) => m.forward_step(token),
            Model::Recurrent(m) => m.forward_step(token),
            Model::Transformer(m) => m.forward_step(token),
        }
    }
}
