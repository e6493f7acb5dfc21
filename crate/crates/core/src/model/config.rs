use serde::{Deserialize, Serialize};

use super::ModelError;

/// Whether propagation exchanges information between the two trees of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Matching,
    Embedding,
}

/// Cross-graph attention score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Dot,
    ScaledDot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub node_feature_dim: usize,
    pub edge_feature_dim: usize,
    pub node_state_dim: usize,
    pub edge_state_dim: usize,
    pub prop_layers: usize,
    pub graph_rep_dim: usize,
    pub mode: Mode,
    /// ReLU hidden layers per MLP, each as wide as that MLP's output.
    pub mlp_hidden_layers: usize,
    pub similarity: Similarity,
}

impl ModelConfig {
    /// Full-size network: 804/70 features, 1536 node state, 2048 graph representation.
    pub fn full_size() -> Self {
        Self {
            node_feature_dim: 804,
            edge_feature_dim: 70,
            node_state_dim: 1536,
            edge_state_dim: 768,
            prop_layers: 5,
            graph_rep_dim: 2048,
            mode: Mode::Matching,
            mlp_hidden_layers: 0,
            similarity: Similarity::ScaledDot,
        }
    }

    /// Small network for tests and single-core training.
    pub fn desk() -> Self {
        Self {
            node_feature_dim: 16,
            edge_feature_dim: 8,
            node_state_dim: 32,
            edge_state_dim: 16,
            prop_layers: 3,
            graph_rep_dim: 32,
            mode: Mode::Matching,
            mlp_hidden_layers: 1,
            similarity: Similarity::ScaledDot,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" | "full" => Some(Self::full_size()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("node_feature_dim", self.node_feature_dim),
            ("edge_feature_dim", self.edge_feature_dim),
            ("node_state_dim", self.node_state_dim),
            ("edge_state_dim", self.edge_state_dim),
            ("graph_rep_dim", self.graph_rep_dim),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.prop_layers == 0 {
            return Err(ModelError::Config("prop_layers must be at least 1".into()));
        }
        Ok(())
    }

    /// Width of the recurrent update's input.
    pub fn gru_input_dim(&self) -> usize {
        match self.mode {
            Mode::Matching => 2 * self.node_state_dim,
            Mode::Embedding => self.node_state_dim,
        }
    }

    /// Width of the message network's input: both endpoint states, the edge state
    /// and a two-way direction flag.
    pub fn message_input_dim(&self) -> usize {
        2 * self.node_state_dim + self.edge_state_dim + 2
    }
}
