use std::fmt;

use super::tree::{DepTree, FeatureLayout};

/// How much of the tree contract to enforce.
///
/// * 0: any connected digraph with consistent feature shapes
/// * 1: additionally a tree (n−1 edges, acyclic, single head, one root)
/// * 2: additionally one-hot POS/edge slices and binary morphology
/// * 3: additionally finite features and at most one morphology bit
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Strictness(u8);

impl Strictness {
    pub const MAX: Strictness = Strictness(3);

    pub fn new(level: u8) -> Option<Self> {
        (level <= 3).then_some(Self(level))
    }

    pub fn level(self) -> u8 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    NodeCount,
    Bounds,
    EdgeFeatures,
    Connectivity,
    EdgeCount,
    Acyclicity,
    SingleHead,
    Root,
    OneHotPos,
    Morphology,
    OneHotEdge,
    FiniteFeatures,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::NodeCount => "node-count",
            Rule::Bounds => "bounds",
            Rule::EdgeFeatures => "edge-features",
            Rule::Connectivity => "connectivity",
            Rule::EdgeCount => "edge-count",
            Rule::Acyclicity => "acyclicity",
            Rule::SingleHead => "single-head",
            Rule::Root => "root",
            Rule::OneHotPos => "one-hot POS",
            Rule::Morphology => "morphology",
            Rule::OneHotEdge => "one-hot edge",
            Rule::FiniteFeatures => "finite-features",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Site {
    Tree,
    Node(usize),
    Edge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    pub site: Site,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.site {
            Site::Tree => write!(f, "{}", self.rule.name()),
            Site::Node(i) => write!(f, "{}: node {i}", self.rule.name()),
            Site::Edge(i) => write!(f, "{}: edge {i}", self.rule.name()),
        }
    }
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

/// Lists every contract violation of `tree` at `strictness`. Empty means valid.
pub fn validate_tree(tree: &DepTree, strictness: Strictness) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule, site| out.push(Violation { rule, site });
    let n = tree.num_nodes();

    if n == 0 {
        push(Rule::NodeCount, Site::Tree);
        return out;
    }
    if tree.root >= n {
        push(Rule::Bounds, Site::Tree);
    }
    let mut in_bounds = true;
    for (k, &(h, d)) in tree.edges.iter().enumerate() {
        if h >= n || d >= n {
            push(Rule::Bounds, Site::Edge(k));
            in_bounds = false;
        }
    }
    if tree.edge_features.rows() != tree.edges.len() {
        push(Rule::EdgeFeatures, Site::Tree);
    }
    if !in_bounds {
        return out;
    }

    // connectivity ignoring direction; union failures are cycles
    let mut sets = DisjointSet((0..n).collect());
    let mut cycle_edges = Vec::new();
    for (k, &(h, d)) in tree.edges.iter().enumerate() {
        if !sets.union(h, d) {
            cycle_edges.push(k);
        }
    }
    let r0 = sets.find(0);
    if (1..n).any(|i| sets.find(i) != r0) {
        push(Rule::Connectivity, Site::Tree);
    }

    if strictness.level() >= 1 {
        if tree.edges.len() + 1 != n {
            push(Rule::EdgeCount, Site::Tree);
        }
        for k in cycle_edges {
            push(Rule::Acyclicity, Site::Edge(k));
        }
        let mut heads = vec![0usize; n];
        for &(_, d) in &tree.edges {
            heads[d] += 1;
        }
        for (i, &c) in heads.iter().enumerate() {
            if c > 1 {
                push(Rule::SingleHead, Site::Node(i));
            } else if (c == 1) == (i == tree.root) {
                // the root has no head, every other node exactly one
                push(Rule::Root, Site::Node(i));
            }
        }
    }

    if strictness.level() >= 2 {
        let is_bit = |v: f64| v == 0.0 || v == 1.0;
        if let Some(layout) = FeatureLayout::for_dim(tree.node_dim()) {
            for i in 0..n {
                let row = tree.node_features.row(i);
                let pos = &row[layout.pos_range()];
                if !pos.iter().all(|&v| is_bit(v)) || pos.iter().sum::<f64>() != 1.0 {
                    push(Rule::OneHotPos, Site::Node(i));
                }
                let morph = &row[layout.morphology_range()];
                let total: f64 = morph.iter().sum();
                let multi_hot = strictness.level() >= 3 && total > 1.0;
                if !morph.iter().all(|&v| is_bit(v)) || total < 1.0 || multi_hot {
                    push(Rule::Morphology, Site::Node(i));
                }
            }
        }
        for k in 0..tree.edge_features.rows() {
            let row = tree.edge_features.row(k);
            if !row.iter().all(|&v| is_bit(v)) || row.iter().sum::<f64>() != 1.0 {
                push(Rule::OneHotEdge, Site::Edge(k));
            }
        }
    }

    if strictness.level() >= 3 {
        for i in 0..n {
            if tree.node_features.row(i).iter().any(|v| !v.is_finite()) {
                push(Rule::FiniteFeatures, Site::Node(i));
            }
        }
        for k in 0..tree.edge_features.rows() {
            if tree.edge_features.row(k).iter().any(|v| !v.is_finite()) {
                push(Rule::FiniteFeatures, Site::Edge(k));
            }
        }
    }
    out
}
