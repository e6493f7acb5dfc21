use std::fmt;

use serde::{Deserialize, Serialize};

/// NLI label. Serialized as `-1`, `0`, `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Contradiction,
    Neutral,
    Entailment,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Contradiction, Label::Neutral, Label::Entailment];

    /// Class index in confusion-matrix order (contradiction, neutral, entailment).
    pub fn index(self) -> usize {
        match self {
            Label::Contradiction => 0,
            Label::Neutral => 1,
            Label::Entailment => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn value(self) -> i8 {
        self.index() as i8 - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Contradiction => "contradiction",
            Label::Neutral => "neutral",
            Label::Entailment => "entailment",
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            -1 => Ok(Label::Contradiction),
            0 => Ok(Label::Neutral),
            1 => Ok(Label::Entailment),
            other => Err(format!("label must be -1, 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        l.value()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Row-major feature matrix that, unlike [`crate::autodiff::Tensor`], may have zero rows
/// (a single-node tree has no edges).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, String> {
        if rows * cols != data.len() {
            return Err(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Rejects ragged input. An empty slice yields a 0×0 matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, String> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(format!(
                "row {bad} has {} values, expected {cols}",
                rows[bad].len()
            ));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Keeps the given rows, in order.
    pub fn select_rows(&self, keep: &[usize]) -> Self {
        let mut data = Vec::with_capacity(keep.len() * self.cols);
        for &i in keep {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: keep.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Slices of a node-feature row: contextual embedding, POS one-hot, morphology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub embedding: usize,
    pub pos: usize,
    pub morphology: usize,
}

impl FeatureLayout {
    pub const FULL: FeatureLayout = FeatureLayout {
        embedding: 768,
        pos: 17,
        morphology: 19,
    };

    /// Layout for a node-feature width. 804 is the full-size layout; smaller widths
    /// (≥ 4) reserve `max(1, d/8)` columns each for POS and morphology.
    pub fn for_dim(node_dim: usize) -> Option<Self> {
        if node_dim == 804 {
            return Some(Self::FULL);
        }
        if node_dim < 4 {
            return None;
        }
        let tag = (node_dim / 8).max(1);
        Some(Self {
            embedding: node_dim - 2 * tag,
            pos: tag,
            morphology: tag,
        })
    }

    pub fn width(&self) -> usize {
        self.embedding + self.pos + self.morphology
    }

    pub fn pos_range(&self) -> std::ops::Range<usize> {
        self.embedding..self.embedding + self.pos
    }

    pub fn morphology_range(&self) -> std::ops::Range<usize> {
        let start = self.embedding + self.pos;
        start..start + self.morphology
    }
}

/// A featurized dependency tree. Edges run head → dependent.
#[derive(Debug, Clone, PartialEq)]
pub struct DepTree {
    pub node_features: Matrix,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Matrix,
    pub root: usize,
    pub text: Option<String>,
}

impl DepTree {
    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    /// Edge feature width, or `None` for a tree without edges.
    pub fn edge_dim(&self) -> Option<usize> {
        (self.edge_features.rows() > 0).then(|| self.edge_features.cols())
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> DepTree {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n, "permutation length");
        let mut inverse = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inverse[new] = old;
        }
        DepTree {
            node_features: self.node_features.select_rows(&inverse),
            edges: self.edges.iter().map(|&(h, d)| (perm[h], perm[d])).collect(),
            edge_features: self.edge_features.clone(),
            root: perm[self.root],
            text: self.text.clone(),
        }
    }
}

/// A premise/hypothesis pair of trees.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePair {
    pub tree_a: DepTree,
    pub tree_b: DepTree,
    pub label: Label,
    pub pair_id: String,
}
