//! Tree matching and tree embedding networks.
//!
//! Node and edge features are encoded, refined by `prop_layers` rounds of shared
//! propagation (messages along tree edges in both directions, plus attention over
//! the partner tree in matching mode, then a GRU update), and pooled per tree by a
//! gated sum.

mod config;
mod forward;
mod params;

pub use config::{Mode, ModelConfig, Similarity};
pub use forward::{
    cross_attention, embed_pairs, CrossAttention, Network, PairEmbeddings, PropagationState,
};
pub use params::{count_parameters, ModelParams, ParamLayout};

use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config error: {0}")]
    Config(String),
    #[error("parameter mismatch at {tensor}: {detail}")]
    Mismatch { tensor: String, detail: String },
    #[error("batch structure error: {0}")]
    BatchStructure(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
