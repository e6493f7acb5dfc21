use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};

use super::config::ModelConfig;
use super::ModelError;

/// Name and shape of every trainable tensor, in storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    entries: Vec<(String, Vec<usize>)>,
}

const GRU_GATES: [&str; 3] = ["z", "r", "h"];

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let layers = config.mlp_hidden_layers + 1;
        let mlp = |entries: &mut Vec<(String, Vec<usize>)>, prefix: &str, input, output| {
            for k in 0..layers {
                let fan_in = if k == 0 { input } else { output };
                entries.push((format!("{prefix}.w{k}"), vec![fan_in, output]));
                entries.push((format!("{prefix}.b{k}"), vec![output]));
            }
        };
        let ns = config.node_state_dim;
        let rep = config.graph_rep_dim;
        mlp(&mut entries, "encoder.node", config.node_feature_dim, ns);
        mlp(&mut entries, "encoder.edge", config.edge_feature_dim, config.edge_state_dim);
        mlp(&mut entries, "propagator.message", config.message_input_dim(), ns);
        for g in GRU_GATES {
            entries.push((format!("propagator.gru.w{g}"), vec![config.gru_input_dim(), ns]));
            entries.push((format!("propagator.gru.u{g}"), vec![ns, ns]));
            entries.push((format!("propagator.gru.b{g}"), vec![ns]));
        }
        mlp(&mut entries, "aggregator.gate", ns, rep);
        mlp(&mut entries, "aggregator.transform", ns, rep);
        mlp(&mut entries, "aggregator.output", rep, rep);
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec<usize>)] {
        &self.entries
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Trainable tensors of one network, stored in [`ParamLayout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout
            .entries
            .iter()
            .map(|(_, shape)| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let bound = 1.0 / (shape[0] as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::new(shape.clone(), data).expect("layout shape")
            })
            .collect();
        Ok(Self::assemble(layout, tensors))
    }

    /// Every tensor filled with `value`.
    pub fn filled(config: &ModelConfig, value: f64) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let tensors = layout
            .entries
            .iter()
            .map(|(_, s)| Tensor::filled(s, value))
            .collect();
        Ok(Self::assemble(layout, tensors))
    }

    /// Rebuilds parameters from named tensors, which must match the layout of
    /// `config` exactly and in order.
    pub fn from_named(
        config: &ModelConfig,
        named: Vec<(String, Tensor)>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if named.len() != layout.len() {
            let first_missing = layout
                .entries
                .iter()
                .find(|(n, _)| !named.iter().any(|(m, _)| m == n))
                .map(|(n, _)| n.clone())
                .or_else(|| {
                    named
                        .iter()
                        .find(|(m, _)| layout.position(m).is_none())
                        .map(|(m, _)| m.clone())
                })
                .unwrap_or_default();
            return Err(ModelError::Mismatch {
                tensor: first_missing,
                detail: format!("{} tensors, expected {}", named.len(), layout.len()),
            });
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, tensor), (expected, shape)) in named.into_iter().zip(&layout.entries) {
            if &name != expected {
                return Err(ModelError::Mismatch {
                    tensor: expected.clone(),
                    detail: format!("found {name} in its place"),
                });
            }
            if tensor.shape() != shape.as_slice() {
                return Err(ModelError::Mismatch {
                    tensor: name,
                    detail: format!("shape {:?}, expected {:?}", tensor.shape(), shape),
                });
            }
            tensors.push(tensor);
        }
        Ok(Self::assemble(layout, tensors))
    }

    fn assemble(layout: ParamLayout, tensors: Vec<Tensor>) -> Self {
        Self {
            names: layout.entries.into_iter().map(|(n, _)| n).collect(),
            tensors,
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// First tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.named()
            .find(|(_, t)| t.data().iter().any(|v| !v.is_finite()))
            .map(|(n, _)| n)
    }

    /// Records every tensor on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}

/// Exact number of scalar weights.
pub fn count_parameters(params: &ModelParams) -> usize {
    params.tensors.iter().map(Tensor::numel).sum()
}
