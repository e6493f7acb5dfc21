//! Packing tree pairs into flat node/edge arrays.

use std::sync::Arc;

use crate::autodiff::Tensor;

use super::tree::{DepTree, Label, Matrix, TreePair};
use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

/// Several pairs packed for one vectorized forward pass.
///
/// Graph `2p` is side A of pair `p` and graph `2p + 1` its side B. Node indices of
/// each graph are contiguous and `graph_id` is nondecreasing.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub node_features: Tensor,
    /// `None` when no graph in the batch has an edge.
    pub edge_features: Option<Tensor>,
    /// Global head index of each edge.
    pub from_idx: Arc<[usize]>,
    /// Global dependent index of each edge.
    pub to_idx: Arc<[usize]>,
    pub graph_id: Arc<[usize]>,
    pub graph_offsets: Vec<usize>,
    pub pair_of_graph: Vec<(usize, Side)>,
    pub labels: Vec<Label>,
    pub pair_ids: Vec<String>,
    pub roots: Vec<usize>,
    pub texts: Vec<Option<String>>,
    pub messages: MessageIndex,
    pub cross: CrossIndex,
    edge_dim: Option<usize>,
}

/// Both directions of every stored edge: entries `0..E` run head → dependent,
/// entries `E..2E` dependent → head.
#[derive(Debug, Clone)]
pub struct MessageIndex {
    pub source: Arc<[usize]>,
    pub target: Arc<[usize]>,
    pub edge: Arc<[usize]>,
    /// `[2E × 2]` one-hot direction flags.
    pub direction: Option<Tensor>,
}

/// Cross-graph attention candidates: node `target[k]` attends to node `candidate[k]`
/// of its partner graph. Entries for one target node are contiguous.
#[derive(Debug, Clone)]
pub struct CrossIndex {
    pub target: Arc<[usize]>,
    pub candidate: Arc<[usize]>,
}

impl GraphBatch {
    /// Packs `(A, B)` tree pairs. `labels` is either empty or one per pair.
    pub fn from_trees(
        trees: &[(&DepTree, &DepTree)],
        labels: Vec<Label>,
        pair_ids: Vec<String>,
    ) -> Result<Self, DataError> {
        if trees.is_empty() {
            return Err(DataError::Dimension("cannot batch zero pairs".into()));
        }
        if !labels.is_empty() && labels.len() != trees.len() {
            return Err(DataError::Dimension(format!(
                "{} labels for {} pairs",
                labels.len(),
                trees.len()
            )));
        }
        let node_dim = trees[0].0.node_dim();
        let mut edge_dim: Option<usize> = None;
        let graphs: Vec<&DepTree> = trees.iter().flat_map(|(a, b)| [*a, *b]).collect();
        for (g, t) in graphs.iter().enumerate() {
            if t.node_dim() != node_dim {
                return Err(DataError::Dimension(format!(
                    "graph {g} has node dim {}, expected {node_dim}",
                    t.node_dim()
                )));
            }
            if t.num_nodes() == 0 {
                return Err(DataError::Dimension(format!("graph {g} has no nodes")));
            }
            if let Some(d) = t.edge_dim() {
                match edge_dim {
                    None => edge_dim = Some(d),
                    Some(e) if e != d => {
                        return Err(DataError::Dimension(format!(
                            "graph {g} has edge dim {d}, expected {e}"
                        )))
                    }
                    _ => {}
                }
            }
        }

        let mut node_data = Vec::new();
        let mut edge_data = Vec::new();
        let (mut from, mut to, mut gid) = (Vec::new(), Vec::new(), Vec::new());
        let mut offsets = vec![0];
        let mut roots = Vec::with_capacity(graphs.len());
        let mut texts = Vec::with_capacity(graphs.len());
        for (g, t) in graphs.iter().enumerate() {
            let base = *offsets.last().unwrap();
            node_data.extend_from_slice(t.node_features.data());
            edge_data.extend_from_slice(t.edge_features.data());
            for &(h, d) in &t.edges {
                if h >= t.num_nodes() || d >= t.num_nodes() {
                    return Err(DataError::Dimension(format!(
                        "graph {g} edge ({h}, {d}) out of range"
                    )));
                }
                from.push(base + h);
                to.push(base + d);
            }
            gid.extend(std::iter::repeat_n(g, t.num_nodes()));
            offsets.push(base + t.num_nodes());
            roots.push(t.root);
            texts.push(t.text.clone());
        }
        let n_total = *offsets.last().unwrap();
        let node_features = Tensor::new(vec![n_total, node_dim], node_data)
            .map_err(|e| DataError::Dimension(e.to_string()))?;
        let e_total = from.len();
        let edge_features = match edge_dim {
            Some(d) if e_total > 0 => Some(
                Tensor::new(vec![e_total, d], edge_data)
                    .map_err(|e| DataError::Dimension(e.to_string()))?,
            ),
            _ => None,
        };

        let messages = MessageIndex::build(&from, &to);
        let cross = CrossIndex::build(&offsets);
        let pair_of_graph = (0..graphs.len())
            .map(|g| (g / 2, if g % 2 == 0 { Side::A } else { Side::B }))
            .collect();
        Ok(Self {
            node_features,
            edge_features,
            from_idx: from.into(),
            to_idx: to.into(),
            graph_id: gid.into(),
            graph_offsets: offsets,
            pair_of_graph,
            labels,
            pair_ids,
            roots,
            texts,
            messages,
            cross,
            edge_dim,
        })
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_of_graph.len() / 2
    }

    pub fn num_graphs(&self) -> usize {
        self.pair_of_graph.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.from_idx.len()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.row_width()
    }

    pub fn edge_dim(&self) -> Option<usize> {
        self.edge_dim
    }

    /// Graph index of the given side of pair `p`.
    pub fn graph_of(&self, p: usize, side: Side) -> usize {
        match side {
            Side::A => 2 * p,
            Side::B => 2 * p + 1,
        }
    }

    /// Graph that `g` is compared against.
    pub fn partner(&self, g: usize) -> usize {
        g ^ 1
    }

    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.graph_offsets[g]..self.graph_offsets[g + 1]
    }

    /// Recovers every packed tree pair. Labels and ids are restored when present.
    pub fn unbatch(&self) -> Vec<(DepTree, DepTree)> {
        let node_dim = self.node_dim();
        let edge_dim = self.edge_dim.unwrap_or(0);
        let mut edge_cursor = 0;
        let mut trees = Vec::with_capacity(self.num_graphs());
        for g in 0..self.num_graphs() {
            let range = self.node_range(g);
            let base = range.start;
            let n = range.len();
            let node_data =
                self.node_features.data()[base * node_dim..(base + n) * node_dim].to_vec();
            let mut edges = Vec::new();
            let mut edge_data = Vec::new();
            while edge_cursor < self.num_edges() && range.contains(&self.from_idx[edge_cursor]) {
                edges.push((
                    self.from_idx[edge_cursor] - base,
                    self.to_idx[edge_cursor] - base,
                ));
                if let Some(ef) = &self.edge_features {
                    edge_data.extend_from_slice(ef.row(edge_cursor));
                }
                edge_cursor += 1;
            }
            let edge_cols = if edges.is_empty() { 0 } else { edge_dim };
            trees.push(DepTree {
                node_features: Matrix::new(n, node_dim, node_data).expect("packed rows"),
                edge_features: Matrix::new(edges.len(), edge_cols, edge_data)
                    .expect("packed edge rows"),
                edges,
                root: self.roots[g],
                text: self.texts[g].clone(),
            });
        }
        let mut it = trees.into_iter();
        let mut out = Vec::with_capacity(self.num_pairs());
        while let (Some(a), Some(b)) = (it.next(), it.next()) {
            out.push((a, b));
        }
        out
    }
}

impl MessageIndex {
    fn build(from: &[usize], to: &[usize]) -> Self {
        let e = from.len();
        let source: Vec<usize> = from.iter().chain(to).copied().collect();
        let target: Vec<usize> = to.iter().chain(from).copied().collect();
        let edge: Vec<usize> = (0..e).chain(0..e).collect();
        let direction = (e > 0).then(|| {
            let mut d = Vec::with_capacity(4 * e);
            for k in 0..2 * e {
                if k < e {
                    d.extend_from_slice(&[1.0, 0.0]);
                } else {
                    d.extend_from_slice(&[0.0, 1.0]);
                }
            }
            Tensor::new(vec![2 * e, 2], d).expect("direction flags")
        });
        Self {
            source: source.into(),
            target: target.into(),
            edge: edge.into(),
            direction,
        }
    }
}

impl CrossIndex {
    fn build(offsets: &[usize]) -> Self {
        let mut target = Vec::new();
        let mut candidate = Vec::new();
        let graphs = offsets.len() - 1;
        for g in 0..graphs {
            let partner = g ^ 1;
            for i in offsets[g]..offsets[g + 1] {
                for j in offsets[partner]..offsets[partner + 1] {
                    target.push(i);
                    candidate.push(j);
                }
            }
        }
        Self {
            target: target.into(),
            candidate: candidate.into(),
        }
    }
}

/// Packs labeled pairs.
pub fn batch_pairs(pairs: &[TreePair]) -> Result<GraphBatch, DataError> {
    let trees: Vec<(&DepTree, &DepTree)> = pairs.iter().map(|p| (&p.tree_a, &p.tree_b)).collect();
    GraphBatch::from_trees(
        &trees,
        pairs.iter().map(|p| p.label).collect(),
        pairs.iter().map(|p| p.pair_id.clone()).collect(),
    )
}

/// Inverse of [`batch_pairs`].
pub fn unbatch(batch: &GraphBatch) -> Vec<TreePair> {
    batch
        .unbatch()
        .into_iter()
        .enumerate()
        .map(|(p, (tree_a, tree_b))| TreePair {
            tree_a,
            tree_b,
            label: batch.labels[p],
            pair_id: batch.pair_ids[p].clone(),
        })
        .collect()
}
