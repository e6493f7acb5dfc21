//! Seeded three-way tree-pair task.
//!
//! Each pair starts from an anchor tree. Entailment pairs keep a leaf-pruned copy of
//! the anchor with small embedding noise, contradiction pairs negate the anchor's
//! embedding slice, and neutral pairs use an unrelated tree.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::tree::{DepTree, FeatureLayout, Label, Matrix, TreePair};
use super::DataError;

const ENTAILMENT_NOISE: f64 = 0.05;
const LEAF_DROP_PROBABILITY: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_pairs: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub max_nodes: usize,
}

pub fn synth_task(spec: &SynthSpec) -> Result<Vec<TreePair>, DataError> {
    let layout = FeatureLayout::for_dim(spec.node_dim)
        .ok_or_else(|| DataError::Precondition(format!("node_dim {} < 4", spec.node_dim)))?;
    if spec.max_nodes < 3 {
        return Err(DataError::Precondition(format!(
            "max_nodes {} < 3",
            spec.max_nodes
        )));
    }
    if spec.edge_dim == 0 {
        return Err(DataError::Precondition("edge_dim must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cycle = [Label::Entailment, Label::Contradiction, Label::Neutral];
    let mut labels: Vec<Label> = (0..spec.n_pairs).map(|i| cycle[i % 3]).collect();
    labels.shuffle(&mut rng);

    let generator = Generator { spec, layout };
    let pairs = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let anchor = generator.random_tree(&mut rng);
            let other = match label {
                Label::Entailment => generator.paraphrase(&anchor, &mut rng),
                Label::Contradiction => generator.negation(&anchor),
                Label::Neutral => generator.random_tree(&mut rng),
            };
            TreePair {
                tree_a: anchor,
                tree_b: other,
                label,
                pair_id: format!("synth-{}-{i:06}", spec.seed),
            }
        })
        .collect();
    Ok(pairs)
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    layout: FeatureLayout,
}

impl Generator<'_> {
    fn random_tree(&self, rng: &mut ChaCha8Rng) -> DepTree {
        let n = rng.random_range(3..=self.spec.max_nodes);
        // node k > 0 hangs off an earlier node, then labels are shuffled
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let edges: Vec<(usize, usize)> = (1..n)
            .map(|k| (perm[rng.random_range(0..k)], perm[k]))
            .collect();

        let dim = self.spec.node_dim;
        let topic: Vec<f64> = (0..self.layout.embedding)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut node_data = vec![0.0; n * dim];
        for row in node_data.chunks_mut(dim) {
            for (v, t) in row[..self.layout.embedding].iter_mut().zip(&topic) {
                let jitter: f64 = rng.sample(StandardNormal);
                *v = t + jitter;
            }
            let pos = self.layout.pos_range().start + rng.random_range(0..self.layout.pos);
            row[pos] = 1.0;
            let morph = self.layout.morphology_range().start
                + rng.random_range(0..self.layout.morphology);
            row[morph] = 1.0;
        }
        let mut edge_data = vec![0.0; edges.len() * self.spec.edge_dim];
        for row in edge_data.chunks_mut(self.spec.edge_dim) {
            row[rng.random_range(0..self.spec.edge_dim)] = 1.0;
        }
        DepTree {
            node_features: Matrix::new(n, dim, node_data).expect("node rows"),
            edge_features: Matrix::new(edges.len(), self.spec.edge_dim, edge_data)
                .expect("edge rows"),
            edges,
            root: perm[0],
            text: None,
        }
    }

    /// Drops some leaves (keeping at least two nodes) and perturbs embeddings.
    fn paraphrase(&self, anchor: &DepTree, rng: &mut ChaCha8Rng) -> DepTree {
        let n = anchor.num_nodes();
        let mut has_dependent = vec![false; n];
        for &(h, _) in &anchor.edges {
            has_dependent[h] = true;
        }
        let mut keep = vec![true; n];
        let mut kept = n;
        for i in 0..n {
            if !has_dependent[i]
                && i != anchor.root
                && kept > 2
                && rng.random_bool(LEAF_DROP_PROBABILITY)
            {
                keep[i] = false;
                kept -= 1;
            }
        }
        let mut new_index = vec![usize::MAX; n];
        let kept_nodes: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        for (new, &old) in kept_nodes.iter().enumerate() {
            new_index[old] = new;
        }
        let kept_edges: Vec<usize> = (0..anchor.edges.len())
            .filter(|&k| keep[anchor.edges[k].1])
            .collect();

        let mut node_features = anchor.node_features.select_rows(&kept_nodes);
        let noise = Normal::new(0.0, ENTAILMENT_NOISE).expect("positive sigma");
        for i in 0..node_features.rows() {
            for v in &mut node_features.row_mut(i)[..self.layout.embedding] {
                *v += noise.sample(rng);
            }
        }
        DepTree {
            node_features,
            edges: kept_edges
                .iter()
                .map(|&k| {
                    let (h, d) = anchor.edges[k];
                    (new_index[h], new_index[d])
                })
                .collect(),
            edge_features: anchor.edge_features.select_rows(&kept_edges),
            root: new_index[anchor.root],
            text: None,
        }
    }

    fn negation(&self, anchor: &DepTree) -> DepTree {
        let mut t = anchor.clone();
        for i in 0..t.num_nodes() {
            for v in &mut t.node_features.row_mut(i)[..self.layout.embedding] {
                *v = -*v;
            }
        }
        t
    }
}
