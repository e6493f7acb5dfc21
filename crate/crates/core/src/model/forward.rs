use crate::autodiff::{Tape, Tensor, Var};
use crate::data::GraphBatch;

use super::config::{Mode, ModelConfig, Similarity};
use super::params::{ModelParams, ParamLayout};
use super::ModelError;

/// Affine layers with ReLU between them and a linear output.
#[derive(Debug, Clone)]
struct Mlp {
    layers: Vec<(Var, Var)>,
}

impl Mlp {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, ModelError> {
        let mut h = x;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            h = tape.add_bias(z, b)?;
            if k + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy)]
struct GateVars {
    w: Var,
    u: Var,
    b: Var,
}

#[derive(Debug, Clone, Copy)]
struct Gru {
    update: GateVars,
    reset: GateVars,
    candidate: GateVars,
}

/// Parameters of one network as recorded on a tape.
///
/// The propagator weights appear once and every layer reuses the same handles.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    node_encoder: Mlp,
    edge_encoder: Mlp,
    message: Mlp,
    gru: Gru,
    gate: Mlp,
    transform: Mlp,
    output: Mlp,
}

/// Node states and fixed edge states after encoding.
#[derive(Debug, Clone, Copy)]
pub struct PropagationState {
    pub nodes: Var,
    /// `None` when the batch has no edges.
    pub edges: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct CrossAttention {
    /// Per node: its state minus the attention-weighted partner states.
    pub matching: Var,
    /// One weight per entry of the batch's cross index.
    pub attention: Var,
}

/// Graph embeddings of a batch: all graphs, then the A and B sides separately.
#[derive(Debug, Clone, Copy)]
pub struct PairEmbeddings {
    pub graphs: Var,
    pub a: Var,
    pub b: Var,
}

impl Network {
    /// Records `params` on `tape` and wires them up.
    pub fn record(
        tape: &mut Tape,
        config: &ModelConfig,
        params: &ModelParams,
        trainable: bool,
    ) -> Result<(Self, Vec<Var>), ModelError> {
        let vars = params.bind(tape, trainable);
        let net = Self::from_vars(config, &vars)?;
        Ok((net, vars))
    }

    /// Wires up parameter handles given in layout order.
    pub fn from_vars(config: &ModelConfig, vars: &[Var]) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if vars.len() != layout.len() {
            return Err(ModelError::Config(format!(
                "{} parameter handles for a layout of {}",
                vars.len(),
                layout.len()
            )));
        }
        let mut it = vars.iter().copied();
        let layers = config.mlp_hidden_layers + 1;
        let mlp = |it: &mut dyn Iterator<Item = Var>| Mlp {
            layers: (0..layers)
                .map(|_| (it.next().unwrap(), it.next().unwrap()))
                .collect(),
        };
        let node_encoder = mlp(&mut it);
        let edge_encoder = mlp(&mut it);
        let message = mlp(&mut it);
        let mut gate_vars = || GateVars {
            w: it.next().unwrap(),
            u: it.next().unwrap(),
            b: it.next().unwrap(),
        };
        let gru = Gru {
            update: gate_vars(),
            reset: gate_vars(),
            candidate: gate_vars(),
        };
        let gate = mlp(&mut it);
        let transform = mlp(&mut it);
        let output = mlp(&mut it);
        Ok(Self {
            config: config.clone(),
            node_encoder,
            edge_encoder,
            message,
            gru,
            gate,
            transform,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Initial node states and the edge states used by every layer.
    pub fn encode(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<PropagationState, ModelError> {
        if batch.node_dim() != self.config.node_feature_dim {
            return Err(ModelError::Config(format!(
                "batch node features have width {}, config expects {}",
                batch.node_dim(),
                self.config.node_feature_dim
            )));
        }
        let x = tape.constant(batch.node_features.clone());
        let nodes = self.node_encoder.apply(tape, x)?;
        let edges = match &batch.edge_features {
            Some(ef) => {
                if ef.row_width() != self.config.edge_feature_dim {
                    return Err(ModelError::Config(format!(
                        "batch edge features have width {}, config expects {}",
                        ef.row_width(),
                        self.config.edge_feature_dim
                    )));
                }
                let x = tape.constant(ef.clone());
                Some(self.edge_encoder.apply(tape, x)?)
            }
            None => None,
        };
        Ok(PropagationState { nodes, edges })
    }

    /// Sum of incoming messages per node. Every stored edge carries one message
    /// each way.
    pub fn propagate_within(
        &self,
        tape: &mut Tape,
        nodes: Var,
        edges: Option<Var>,
        batch: &GraphBatch,
    ) -> Result<Var, ModelError> {
        let n = batch.num_nodes();
        let (Some(edges), Some(direction)) = (edges, &batch.messages.direction) else {
            return Ok(tape.constant(Tensor::zeros(&[n, self.config.node_state_dim])));
        };
        let idx = &batch.messages;
        let source = tape.gather_rows(nodes, idx.source.clone())?;
        let target = tape.gather_rows(nodes, idx.target.clone())?;
        let edge = tape.gather_rows(edges, idx.edge.clone())?;
        let flag = tape.constant(direction.clone());
        let input = tape.concat(&[source, target, edge, flag], 1)?;
        let messages = self.message.apply(tape, input)?;
        Ok(tape.segment_sum(messages, idx.target.clone(), n)?)
    }

    /// Recurrent update of every node state.
    pub fn node_update(
        &self,
        tape: &mut Tape,
        nodes: Var,
        message_sums: Var,
        matching: Option<Var>,
    ) -> Result<Var, ModelError> {
        let input = match (self.config.mode, matching) {
            (Mode::Matching, Some(m)) => tape.concat(&[message_sums, m], 1)?,
            (Mode::Embedding, None) => message_sums,
            (mode, m) => {
                return Err(ModelError::Contract(format!(
                    "{mode:?} mode called with{} matching vectors",
                    if m.is_some() { "" } else { "out" }
                )))
            }
        };
        let gate = |tape: &mut Tape, g: GateVars, hidden: Var| -> Result<Var, ModelError> {
            let a = tape.matmul(input, g.w)?;
            let b = tape.matmul(hidden, g.u)?;
            let s = tape.add(a, b)?;
            Ok(tape.add_bias(s, g.b)?)
        };
        let z = gate(tape, self.gru.update, nodes)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, self.gru.reset, nodes)?;
        let r = tape.sigmoid(r);
        let reset_nodes = tape.mul(r, nodes)?;
        let c = gate(tape, self.gru.candidate, reset_nodes)?;
        let c = tape.tanh(c);
        // h + z * (c - h)
        let delta = tape.sub(c, nodes)?;
        let step = tape.mul(z, delta)?;
        Ok(tape.add(nodes, step)?)
    }

    /// Gated sum of node contributions per graph, then the output network.
    pub fn aggregate(&self, tape: &mut Tape, nodes: Var, batch: &GraphBatch) -> Result<Var, ModelError> {
        let gate = self.gate.apply(tape, nodes)?;
        let gate = tape.sigmoid(gate);
        let content = self.transform.apply(tape, nodes)?;
        let weighted = tape.mul(gate, content)?;
        let pooled = tape.segment_sum(weighted, batch.graph_id.clone(), batch.num_graphs())?;
        self.output.apply(tape, pooled)
    }

    /// Full pass: encode, shared propagation layers, aggregation.
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<PairEmbeddings, ModelError> {
        let state = self.encode(tape, batch)?;
        let mut h = state.nodes;
        for _ in 0..self.config.prop_layers {
            let messages = self.propagate_within(tape, h, state.edges, batch)?;
            let matching = match self.config.mode {
                Mode::Matching => {
                    Some(cross_attention(tape, h, batch, self.config.similarity)?.matching)
                }
                Mode::Embedding => None,
            };
            h = self.node_update(tape, h, messages, matching)?;
        }
        let graphs = self.aggregate(tape, h, batch)?;
        let side = |k: usize| -> std::sync::Arc<[usize]> {
            (0..batch.num_pairs()).map(|p| 2 * p + k).collect()
        };
        let a = tape.gather_rows(graphs, side(0))?;
        let b = tape.gather_rows(graphs, side(1))?;
        Ok(PairEmbeddings { graphs, a, b })
    }
}

/// Attention of every node over all nodes of its partner graph.
pub fn cross_attention(
    tape: &mut Tape,
    nodes: Var,
    batch: &GraphBatch,
    similarity: Similarity,
) -> Result<CrossAttention, ModelError> {
    if !batch.num_graphs().is_multiple_of(2) || batch.cross.target.is_empty() {
        return Err(ModelError::BatchStructure(
            "cross attention needs graphs paired A/B".into(),
        ));
    }
    let idx = &batch.cross;
    let hi = tape.gather_rows(nodes, idx.target.clone())?;
    let hj = tape.gather_rows(nodes, idx.candidate.clone())?;
    let prod = tape.mul(hi, hj)?;
    let mut scores = tape.row_sum(prod);
    if similarity == Similarity::ScaledDot {
        let d = tape.value(nodes).row_width() as f64;
        scores = tape.scale(scores, 1.0 / d.sqrt());
    }
    let n = batch.num_nodes();
    let attention = tape.segment_softmax(scores, idx.target.clone(), n)?;
    let weighted = tape.scale_rows(hj, attention)?;
    let attended = tape.segment_sum(weighted, idx.target.clone(), n)?;
    let matching = tape.sub(nodes, attended)?;
    Ok(CrossAttention { matching, attention })
}

/// Embeddings of both sides of every pair, without recording gradients.
pub fn embed_pairs(
    config: &ModelConfig,
    params: &ModelParams,
    batch: &GraphBatch,
) -> Result<(Tensor, Tensor), ModelError> {
    let mut tape = Tape::new();
    let (net, _) = Network::record(&mut tape, config, params, false)?;
    let out = net.forward(&mut tape, batch)?;
    Ok((tape.value(out.a).clone(), tape.value(out.b).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DepTree, Matrix};

    fn chain(n: usize, node_dim: usize, edge_dim: usize) -> DepTree {
        DepTree {
            node_features: Matrix::new(
                n,
                node_dim,
                (0..n * node_dim).map(|v| (v as f64 * 0.37).sin()).collect(),
            )
            .unwrap(),
            edges: (1..n).map(|d| (d - 1, d)).collect(),
            edge_features: Matrix::new(n - 1, edge_dim, vec![0.5; (n - 1) * edge_dim]).unwrap(),
            root: 0,
            text: None,
        }
    }

    /// Encoder-only network pieces for the full-size preset, so the large
    /// propagation weights are never allocated.
    #[test]
    fn full_size_encoder_shapes() {
        let config = ModelConfig::full_size();
        let layout = ParamLayout::new(&config);
        let mut tape = Tape::new();
        let mut mlp = |prefix: &str| Mlp {
            layers: layout
                .entries()
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .collect::<Vec<_>>()
                .chunks(2)
                .map(|wb| {
                    let w = tape.constant(Tensor::filled(&wb[0].1, 1e-3));
                    let b = tape.constant(Tensor::zeros(&wb[1].1));
                    (w, b)
                })
                .collect(),
        };
        let node = mlp("encoder.node.");
        let edge = mlp("encoder.edge.");
        let (a, b) = (chain(3, 804, 70), chain(2, 804, 70));
        let batch = GraphBatch::from_trees(&[(&a, &b)], vec![], vec![]).unwrap();
        let x = tape.constant(batch.node_features.clone());
        let h = node.apply(&mut tape, x).unwrap();
        let xe = tape.constant(batch.edge_features.clone().unwrap());
        let e = edge.apply(&mut tape, xe).unwrap();
        assert_eq!(tape.value(h).shape(), &[5, 1536]);
        assert_eq!(tape.value(e).shape(), &[3, 768]);

        let out = layout
            .entries()
            .iter()
            .find(|(n, _)| n.starts_with("aggregator.output.w"))
            .unwrap();
        assert_eq!(out.1.last(), Some(&2048));
    }
}
