//! Comparator models trained and evaluated under the same contract as the
//! Echo State Transformer.

mod recurrent;
mod transformer;

pub use recurrent::{CellKind, RecurrentConfig, RecurrentModel, RecurrentState};
pub use transformer::{
    causal_mask, positional_encoding, TransformerConfig, TransformerModel, DEFAULT_MAX_LEN,
};
