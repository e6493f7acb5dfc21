use std::sync::Arc;

use crate::autodiff::{Tape, TensorError, Var};
use crate::data::Label;

use super::{LossConfig, ObjectiveError};

/// Score transform applied to cosines; each one is high for one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transform {
    /// `s`, high for entailment.
    Positive,
    /// `-s`, high for contradiction.
    Distance,
    /// `1 - |s|`, high for neutral.
    Middle,
}

impl Transform {
    pub const ALL: [Transform; 3] = [Transform::Positive, Transform::Distance, Transform::Middle];

    pub fn class(self) -> Label {
        match self {
            Transform::Positive => Label::Entailment,
            Transform::Distance => Label::Contradiction,
            Transform::Middle => Label::Neutral,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Positive => "pos",
            Transform::Distance => "dist",
            Transform::Middle => "mid",
        }
    }

    pub fn apply(self, s: f64) -> f64 {
        match self {
            Transform::Positive => s,
            Transform::Distance => -s,
            Transform::Middle => 1.0 - s.abs(),
        }
    }

    fn record(self, tape: &mut Tape, sims: Var) -> Var {
        match self {
            Transform::Positive => sims,
            Transform::Distance => tape.neg(sims),
            Transform::Middle => {
                let a = tape.abs(sims);
                let n = tape.neg(a);
                tape.add_scalar(n, 1.0)
            }
        }
    }
}

/// Positive and negative candidate sets per anchor row of a square score matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchRelations {
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
}

impl BatchRelations {
    /// Checks that every set is in range, excludes its anchor, and that each
    /// anchor's positive and negative sets are disjoint.
    pub fn new(positives: Vec<Vec<usize>>, negatives: Vec<Vec<usize>>) -> Result<Self, ObjectiveError> {
        let m = positives.len();
        if negatives.len() != m {
            return Err(ObjectiveError::Relations(format!(
                "{m} positive sets but {} negative sets",
                negatives.len()
            )));
        }
        for (i, (p, n)) in positives.iter().zip(&negatives).enumerate() {
            for &j in p.iter().chain(n) {
                if j >= m {
                    return Err(ObjectiveError::Relations(format!(
                        "anchor {i}: index {j} out of range {m}"
                    )));
                }
                if j == i {
                    return Err(ObjectiveError::Relations(format!(
                        "anchor {i} relates to itself"
                    )));
                }
            }
            if p.iter().any(|j| n.contains(j)) {
                return Err(ObjectiveError::Relations(format!(
                    "anchor {i}: positive and negative sets overlap"
                )));
            }
        }
        Ok(Self {
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    pub fn negatives(&self, i: usize) -> &[usize] {
        &self.negatives[i]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InfoNceOutcome {
    pub loss: Var,
    pub anchors: usize,
    /// Anchors without positives.
    pub skipped: usize,
}

/// Mean over anchors of `-log(Σ_P e^{s/τ} / Σ_{P∪N} e^{s/τ})` over an `[M×M]`
/// score matrix.
pub fn infonce(
    tape: &mut Tape,
    scores: Var,
    relations: &BatchRelations,
    temperature: f64,
) -> Result<InfoNceOutcome, ObjectiveError> {
    let m = relations.len();
    if tape.value(scores).shape() != [m, m] {
        return Err(ObjectiveError::Relations(format!(
            "score matrix {:?} for {m} anchors",
            tape.value(scores).shape()
        )));
    }
    let (mut all_idx, mut all_ids, mut pos_idx, mut pos_ids) = (vec![], vec![], vec![], vec![]);
    let mut anchors = 0;
    for i in 0..m {
        let p = relations.positives(i);
        if p.is_empty() {
            continue;
        }
        for &j in p {
            pos_idx.push(i * m + j);
            pos_ids.push(anchors);
            all_idx.push(i * m + j);
            all_ids.push(anchors);
        }
        for &j in relations.negatives(i) {
            all_idx.push(i * m + j);
            all_ids.push(anchors);
        }
        anchors += 1;
    }
    if anchors == 0 {
        return Err(ObjectiveError::EmptyLoss(
            "no anchor has a positive".into(),
        ));
    }
    let flat = tape.reshape(scores, vec![m * m])?;
    let mut lse = |idx: Vec<usize>, ids: Vec<usize>| -> Result<Var, TensorError> {
        let picked = tape.gather_rows(flat, Arc::from(idx))?;
        let scaled = tape.scale(picked, 1.0 / temperature);
        tape.segment_logsumexp(scaled, Arc::from(ids), anchors)
    };
    let all = lse(all_idx, all_ids)?;
    let pos = lse(pos_idx, pos_ids)?;
    let per_anchor = tape.sub(all, pos)?;
    Ok(InfoNceOutcome {
        loss: tape.mean(per_anchor),
        anchors,
        skipped: m - anchors,
    })
}

/// Cosines between all `2B` embeddings `[A_0..A_{B-1}, B_0..B_{B-1}]`.
fn joint_cosines(tape: &mut Tape, a: Var, b: Var) -> Result<Var, ObjectiveError> {
    let z = tape.concat(&[a, b], 0)?;
    let zn = tape.normalize_rows(z).map_err(|e| match e {
        TensorError::DegenerateRow { row, .. } => {
            ObjectiveError::DegenerateEmbedding(format!("embedding {row} has zero norm"))
        }
        other => other.into(),
    })?;
    let zt = tape.transpose(zn)?;
    Ok(tape.matmul(zn, zt)?)
}

/// Relations over the joint `2B` embeddings: both sides of an entailment pair
/// are each other's positive, everything else is a negative.
pub fn contrastive_relations(labels: &[Label]) -> BatchRelations {
    let b = labels.len();
    let m = 2 * b;
    let mut positives = vec![vec![]; m];
    let mut negatives = vec![vec![]; m];
    for i in 0..m {
        let partner = (i + b) % m;
        let entailed = labels[i % b] == Label::Entailment;
        if entailed {
            positives[i].push(partner);
        }
        negatives[i] = (0..m)
            .filter(|&j| j != i && !(entailed && j == partner))
            .collect();
    }
    BatchRelations::new(positives, negatives).expect("constructed relations are valid")
}

/// Relations for the term of `class`: each side of a pair of that class has its
/// partner as positive and the other side of every differently labeled pair as
/// negatives.
pub fn term_relations(labels: &[Label], class: Label) -> BatchRelations {
    let b = labels.len();
    let mut positives = vec![vec![]; 2 * b];
    let mut negatives = vec![vec![]; 2 * b];
    for k in (0..b).filter(|&k| labels[k] == class) {
        let others = (0..b).filter(|&l| labels[l] != class);
        positives[k].push(b + k);
        negatives[k] = others.clone().map(|l| b + l).collect();
        positives[b + k].push(k);
        negatives[b + k] = others.collect();
    }
    BatchRelations::new(positives, negatives).expect("constructed relations are valid")
}

/// Contrastive pretraining loss over the pairs' embeddings.
pub fn contrastive_loss(
    tape: &mut Tape,
    a: Var,
    b: Var,
    labels: &[Label],
    temperature: f64,
) -> Result<InfoNceOutcome, ObjectiveError> {
    let sims = joint_cosines(tape, a, b)?;
    infonce(tape, sims, &contrastive_relations(labels), temperature)
}

#[derive(Debug, Clone)]
pub struct MultiObjectiveOutcome {
    pub loss: Var,
    /// Unweighted value of each term, `None` when it was skipped.
    pub terms: [Option<f64>; 3],
    /// Terms with positive weight but no pair of their class in the batch.
    pub missing_class: Vec<Transform>,
}

/// Weighted sum of one InfoNCE term per transform.
pub fn multi_objective_loss(
    tape: &mut Tape,
    a: Var,
    b: Var,
    labels: &[Label],
    config: &LossConfig,
) -> Result<MultiObjectiveOutcome, ObjectiveError> {
    let sims = joint_cosines(tape, a, b)?;
    let mut total: Option<Var> = None;
    let mut terms = [None; 3];
    let mut missing_class = Vec::new();
    for (t, transform) in Transform::ALL.into_iter().enumerate() {
        let w = config.weight(transform);
        if w == 0.0 {
            continue;
        }
        if !labels.contains(&transform.class()) {
            missing_class.push(transform);
            continue;
        }
        let scores = transform.record(tape, sims);
        let relations = term_relations(labels, transform.class());
        let out = infonce(tape, scores, &relations, config.temperature)?;
        terms[t] = Some(tape.value(out.loss).item());
        let weighted = tape.scale(out.loss, w);
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    let loss = total.ok_or_else(|| {
        ObjectiveError::EmptyLoss("every term was skipped for this batch".into())
    })?;
    Ok(MultiObjectiveOutcome {
        loss,
        terms,
        missing_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation without segment operations.
    fn reference_infonce(s: &Tensor, rel: &BatchRelations, tau: f64) -> f64 {
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..rel.len() {
            if rel.positives(i).is_empty() {
                continue;
            }
            let pos: f64 = rel.positives(i).iter().map(|&j| (s.at(i, j) / tau).exp()).sum();
            let neg: f64 = rel.negatives(i).iter().map(|&j| (s.at(i, j) / tau).exp()).sum();
            total += -(pos / (pos + neg)).ln();
            anchors += 1;
        }
        total / anchors as f64
    }

    fn reference_cosines(a: &Tensor, b: &Tensor) -> Tensor {
        let rows: Vec<&[f64]> = (0..a.rows())
            .map(|i| a.row(i))
            .chain((0..b.rows()).map(|i| b.row(i)))
            .collect();
        let m = rows.len();
        let mut data = Vec::with_capacity(m * m);
        for u in &rows {
            for v in &rows {
                let dot: f64 = u.iter().zip(*v).map(|(x, y)| x * y).sum();
                let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                data.push(dot / (nu * nv));
            }
        }
        Tensor::new(vec![m, m], data).unwrap()
    }

    fn reference_multi(a: &Tensor, b: &Tensor, labels: &[Label], cfg: &LossConfig) -> f64 {
        let c = reference_cosines(a, b);
        let mut total = 0.0;
        for t in Transform::ALL {
            let w = cfg.weight(t);
            if w == 0.0 || !labels.contains(&t.class()) {
                continue;
            }
            let m = c.rows();
            let scores =
                Tensor::new(vec![m, m], c.data().iter().map(|&s| t.apply(s)).collect()).unwrap();
            total += w * reference_infonce(&scores, &term_relations(labels, t.class()), cfg.temperature);
        }
        total
    }

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn value_of(tape: &Tape, v: Var) -> f64 {
        tape.value(v).item()
    }

    #[test]
    fn equal_scores_give_log_of_candidates() {
        let rel = BatchRelations::new(
            vec![vec![1], vec![], vec![], vec![], vec![]],
            vec![vec![2, 3, 4], vec![], vec![], vec![], vec![]],
        )
        .unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::filled(&[5, 5], 0.4));
        let out = infonce(&mut tape, s, &rel, 0.05).unwrap();
        assert!((value_of(&tape, out.loss) - 4f64.ln()).abs() < 1e-12);
        assert_eq!((out.anchors, out.skipped), (1, 4));
    }

    #[test]
    fn dominant_positive_saturates() {
        let rel = BatchRelations::new(
            vec![vec![1], vec![], vec![]],
            vec![vec![2], vec![], vec![]],
        )
        .unwrap();
        let mut scores = Tensor::zeros(&[3, 3]);
        scores.data_mut()[1] = 50.0 * 0.05;
        let mut tape = Tape::new();
        let s = tape.constant(scores);
        let out = infonce(&mut tape, s, &rel, 0.05).unwrap();
        assert!(value_of(&tape, out.loss) < 1e-20);
    }

    #[test]
    fn all_anchors_skipped_is_an_error() {
        let rel = BatchRelations::new(vec![vec![]; 2], vec![vec![1], vec![0]]).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            infonce(&mut tape, s, &rel, 0.05),
            Err(ObjectiveError::EmptyLoss(_))
        ));
    }

    #[test]
    fn relation_invariants() {
        assert!(BatchRelations::new(vec![vec![0]], vec![vec![]]).is_err());
        assert!(BatchRelations::new(vec![vec![1], vec![]], vec![vec![1], vec![]]).is_err());
        assert!(BatchRelations::new(vec![vec![3], vec![]], vec![vec![], vec![]]).is_err());
    }

    #[test]
    fn random_batch_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = 8;
        let scores = random_matrix(&mut rng, m, m);
        let mut positives = vec![vec![]; m];
        let mut negatives = vec![vec![]; m];
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                match rng.random_range(0..3) {
                    0 => positives[i].push(j),
                    1 => negatives[i].push(j),
                    _ => {}
                }
            }
        }
        positives[0].clear();
        let rel = BatchRelations::new(positives, negatives).unwrap();
        let mut tape = Tape::new();
        let s = tape.constant(scores.clone());
        let out = infonce(&mut tape, s, &rel, 0.05).unwrap();
        let expected = reference_infonce(&scores, &rel, 0.05);
        assert!((value_of(&tape, out.loss) - expected).abs() < 1e-12);
        assert!(out.skipped >= 1);
    }

    #[test]
    fn infonce_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores = random_matrix(&mut rng, 4, 4);
        let rel = BatchRelations::new(
            vec![vec![1], vec![0, 2], vec![], vec![0]],
            vec![vec![2, 3], vec![3], vec![0], vec![1, 2]],
        )
        .unwrap();
        let report = grad_check(&[scores], 1e-6, |tape, v| {
            Ok::<_, ObjectiveError>(infonce(tape, v[0], &rel, 0.5)?.loss)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn monotone_in_positive_and_negative_scores(
            seed in any::<u64>(),
            bump in 0.01f64..0.5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores = random_matrix(&mut rng, 4, 4);
            let rel = BatchRelations::new(
                vec![vec![1], vec![], vec![], vec![]],
                vec![vec![2, 3], vec![], vec![], vec![]],
            ).unwrap();
            let eval = |s: &Tensor| {
                let mut tape = Tape::new();
                let v = tape.constant(s.clone());
                let out = infonce(&mut tape, v, &rel, 0.05).unwrap();
                tape.value(out.loss).item()
            };
            let base = eval(&scores);
            prop_assert!(base > 0.0);
            let mut up = scores.clone();
            up.data_mut()[1] += bump;
            prop_assert!(eval(&up) < base);
            let mut neg_up = scores.clone();
            neg_up.data_mut()[2] += bump;
            prop_assert!(eval(&neg_up) > base);
        }
    }

    const MIXED: [Label; 6] = [
        Label::Entailment,
        Label::Contradiction,
        Label::Neutral,
        Label::Entailment,
        Label::Neutral,
        Label::Contradiction,
    ];

    fn multi_value(a: &Tensor, b: &Tensor, labels: &[Label], cfg: &LossConfig) -> (f64, MultiObjectiveOutcome) {
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let out = multi_objective_loss(&mut tape, va, vb, labels, cfg).unwrap();
        (tape.value(out.loss).item(), out)
    }

    #[test]
    fn mixed_batch_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 6, 5);
        let b = random_matrix(&mut rng, 6, 5);
        for cfg in [LossConfig::snli3(), LossConfig::semeval2()] {
            let (got, out) = multi_value(&a, &b, &MIXED, &cfg);
            let expected = reference_multi(&a, &b, &MIXED, &cfg);
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
            assert!(out.missing_class.is_empty());
        }
    }

    #[test]
    fn batch_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 6, 5);
        let b = random_matrix(&mut rng, 6, 5);
        let order = [3, 0, 5, 1, 4, 2];
        let permute = |t: &Tensor| {
            Tensor::from_rows(&order.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap()
        };
        let labels: Vec<Label> = order.iter().map(|&i| MIXED[i]).collect();
        let cfg = LossConfig::snli3();
        let (x, _) = multi_value(&a, &b, &MIXED, &cfg);
        let (y, _) = multi_value(&permute(&a), &permute(&b), &labels, &cfg);
        assert!((x - y).abs() < 1e-12);

        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let x = contrastive_loss(&mut tape, va, vb, &MIXED, 0.05).unwrap().loss;
        let (pa, pb) = (tape.constant(permute(&a)), tape.constant(permute(&b)));
        let y = contrastive_loss(&mut tape, pa, pb, &labels, 0.05).unwrap().loss;
        assert!((tape.value(x).item() - tape.value(y).item()).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_term_is_inert() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 6, 5);
        let b = random_matrix(&mut rng, 6, 5);
        let cfg = LossConfig::semeval2();
        let (_, out) = multi_value(&a, &b, &MIXED, &cfg);
        assert!(out.terms[2].is_none());
        assert!(out.terms[0].is_some() && out.terms[1].is_some());

        // gradient equals that of the two active terms alone
        let grads = |cfg: &LossConfig| {
            let mut tape = Tape::new();
            let (va, vb) = (tape.param(a.clone()), tape.param(b.clone()));
            let out = multi_objective_loss(&mut tape, va, vb, &MIXED, cfg).unwrap();
            tape.backward(out.loss).unwrap();
            tape.grad(va).unwrap().clone()
        };
        let no_mid = grads(&cfg);
        let tiny_mid = grads(&LossConfig {
            w_mid: 1e-300,
            ..cfg.clone()
        });
        assert!(no_mid.max_abs_diff(&tiny_mid) < 1e-12);
    }

    #[test]
    fn only_entailment_reduces_to_positive_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 4, 5);
        let b = random_matrix(&mut rng, 4, 5);
        let labels = [Label::Entailment; 4];
        let cfg = LossConfig::snli3();
        let (got, out) = multi_value(&a, &b, &labels, &cfg);
        assert_eq!(out.missing_class, vec![Transform::Distance, Transform::Middle]);
        assert!((got - cfg.w_pos * out.terms[0].unwrap()).abs() < 1e-15);
    }

    #[test]
    fn multi_objective_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 6, 4);
        let b = random_matrix(&mut rng, 6, 4);
        let cfg = LossConfig {
            temperature: 0.5,
            ..LossConfig::snli3()
        };
        let report = grad_check(&[a, b], 1e-6, |tape, v| {
            Ok::<_, ObjectiveError>(multi_objective_loss(tape, v[0], v[1], &MIXED, &cfg)?.loss)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn contrastive_relations_shape() {
        let rel = contrastive_relations(&[Label::Entailment, Label::Neutral]);
        assert_eq!(rel.positives(0), &[2]);
        assert_eq!(rel.negatives(0), &[1, 3]);
        assert!(rel.positives(1).is_empty());
        assert_eq!(rel.positives(2), &[0]);
    }

    #[test]
    fn zero_embedding_is_degenerate() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::filled(&[2, 3], 1.0));
        assert!(matches!(
            contrastive_loss(&mut tape, a, b, &[Label::Entailment; 2], 0.05),
            Err(ObjectiveError::DegenerateEmbedding(_))
        ));
    }
}
