use std::sync::Arc;

use crate::autodiff::{Tape, TensorError, Var};
use crate::data::Label;

use super::{LossConfig, ObjectiveError};

/// Contradiction below `low`, entailment above `high`, neutral in between
/// (both bounds inclusive).
pub fn threshold_classify(s: f64, low: f64, high: f64) -> Label {
    if s < low {
        Label::Contradiction
    } else if s > high {
        Label::Entailment
    } else {
        Label::Neutral
    }
}

fn centers(low: f64, high: f64) -> [f64; 3] {
    [2.0 * low, 0.0, 2.0 * high]
}

/// Logits `-β|s - c_k|` in class order (contradiction, neutral, entailment) with
/// centers `(2·low, 0, 2·high)`, so the nearest center reproduces the thresholds.
pub fn soft_logits(s: f64, low: f64, high: f64, sharpness: f64) -> [f64; 3] {
    centers(low, high).map(|c| -sharpness * (s - c).abs())
}

/// Highest logit; ties go to neutral.
pub fn argmax_class(logits: &[f64; 3]) -> Label {
    let best = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if logits[1] == best {
        Label::Neutral
    } else if logits[2] == best {
        Label::Entailment
    } else {
        Label::Contradiction
    }
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64; 3], label: Label) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label.index()]
}

/// Row-wise cosine between `a[B×d]` and `b[B×d]`, as a `[B]` vector.
pub fn pair_cosines(tape: &mut Tape, a: Var, b: Var) -> Result<Var, ObjectiveError> {
    let degenerate = |side: &'static str| {
        move |e: TensorError| match e {
            TensorError::DegenerateRow { row, .. } => {
                ObjectiveError::DegenerateEmbedding(format!("{side} embedding {row} has zero norm"))
            }
            other => other.into(),
        }
    };
    let an = tape.normalize_rows(a).map_err(degenerate("A"))?;
    let bn = tape.normalize_rows(b).map_err(degenerate("B"))?;
    let prod = tape.mul(an, bn)?;
    Ok(tape.row_sum(prod))
}

#[derive(Debug, Clone)]
pub struct ClassificationOutcome {
    pub loss: Var,
    pub similarities: Vec<f64>,
    pub predictions: Vec<Label>,
}

/// Mean cross-entropy of the soft logits of each pair's own cosine.
pub fn soft_logits_loss(
    tape: &mut Tape,
    a: Var,
    b: Var,
    labels: &[Label],
    config: &LossConfig,
) -> Result<ClassificationOutcome, ObjectiveError> {
    let sims = pair_cosines(tape, a, b)?;
    let n = labels.len();
    if tape.value(sims).numel() != n {
        return Err(ObjectiveError::Relations(format!(
            "{} pairs but {n} labels",
            tape.value(sims).numel()
        )));
    }
    // logits laid out class-major: entry k*n + i is class k of pair i
    let mut columns = Vec::with_capacity(3);
    for c in centers(config.theta_low, config.theta_high) {
        let shifted = tape.add_scalar(sims, -c);
        let dist = tape.abs(shifted);
        columns.push(tape.scale(dist, -config.sharpness));
    }
    let logits = tape.concat(&columns, 0)?;
    let ids: Arc<[usize]> = (0..3).flat_map(|_| 0..n).collect();
    let lse = tape.segment_logsumexp(logits, ids, n)?;
    let target: Arc<[usize]> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| l.index() * n + i)
        .collect();
    let picked = tape.gather_rows(logits, target)?;
    let per_pair = tape.sub(lse, picked)?;
    let loss = tape.mean(per_pair);
    let similarities: Vec<f64> = tape
        .value(sims)
        .data()
        .iter()
        .map(|s| s.clamp(-1.0, 1.0))
        .collect();
    let predictions = similarities
        .iter()
        .map(|&s| threshold_classify(s, config.theta_low, config.theta_high))
        .collect();
    Ok(ClassificationOutcome {
        loss,
        similarities,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use proptest::prelude::*;

    const LOW: f64 = -0.33;
    const HIGH: f64 = 0.33;

    #[test]
    fn threshold_cases() {
        assert_eq!(threshold_classify(-0.5, LOW, HIGH), Label::Contradiction);
        assert_eq!(threshold_classify(0.33, LOW, HIGH), Label::Neutral);
        assert_eq!(threshold_classify(-0.33, LOW, HIGH), Label::Neutral);
        assert_eq!(threshold_classify(0.34, LOW, HIGH), Label::Entailment);
    }

    #[test]
    fn soft_logit_cases() {
        assert_eq!(argmax_class(&soft_logits(0.0, LOW, HIGH, 10.0)), Label::Neutral);
        assert_eq!(argmax_class(&soft_logits(0.9, LOW, HIGH, 10.0)), Label::Entailment);
        assert_eq!(argmax_class(&soft_logits(-0.9, LOW, HIGH, 10.0)), Label::Contradiction);
    }

    #[test]
    fn soft_argmax_agrees_with_thresholds_on_sweep() {
        for k in 0..=20_000 {
            let s = -1.0 + k as f64 * 1e-4;
            assert_eq!(
                argmax_class(&soft_logits(s, LOW, HIGH, 10.0)),
                threshold_classify(s, LOW, HIGH),
                "s = {s}"
            );
        }
    }

    #[test]
    fn soft_argmax_agrees_next_to_thresholds() {
        for t in [LOW, HIGH] {
            let mut up = t;
            let mut down = t;
            for _ in 0..64 {
                for s in [up, down] {
                    assert_eq!(
                        argmax_class(&soft_logits(s, LOW, HIGH, 10.0)),
                        threshold_classify(s, LOW, HIGH),
                        "s = {s:e}"
                    );
                }
                up = up.next_up();
                down = down.next_down();
            }
        }
    }

    proptest! {
        #[test]
        fn soft_argmax_agrees_everywhere(s in -1.0f64..=1.0) {
            prop_assert_eq!(
                argmax_class(&soft_logits(s, LOW, HIGH, 10.0)),
                threshold_classify(s, LOW, HIGH)
            );
        }

        #[test]
        fn thresholds_partition(s in -1.0f64..=1.0) {
            let label = threshold_classify(s, LOW, HIGH);
            let regions = [s < LOW, (LOW..=HIGH).contains(&s), s > HIGH];
            prop_assert_eq!(regions.iter().filter(|&&r| r).count(), 1);
            prop_assert!(regions[label.index()]);
        }
    }

    #[test]
    fn cross_entropy_cases() {
        assert!((cross_entropy(&[0.7; 3], Label::Neutral) - 3f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[0.0, 50.0, 0.0], Label::Neutral) < 1e-20);
    }

    #[test]
    fn tape_loss_matches_scalar_form() {
        let a = Tensor::from_rows(&[vec![1.0, 0.2, -0.3], vec![0.1, 0.9, 0.4], vec![-1.0, 0.5, 0.2]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.8, 0.1, -0.1], vec![-0.5, 0.3, 0.9], vec![1.0, -0.6, 0.0]]).unwrap();
        let labels = [Label::Entailment, Label::Neutral, Label::Contradiction];
        let cfg = LossConfig::snli3();
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let out = soft_logits_loss(&mut tape, va, vb, &labels, &cfg).unwrap();
        let mut expected = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let s = super::super::cosine(a.row(i), b.row(i)).unwrap();
            assert!((out.similarities[i] - s).abs() < 1e-15);
            expected += cross_entropy(&soft_logits(s, LOW, HIGH, 10.0), l) / 3.0;
        }
        assert!((tape.value(out.loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_is_flat_beyond_outer_centers() {
        let cfg = LossConfig::snli3();
        for l in Label::ALL {
            let at = |s: f64| cross_entropy(&soft_logits(s, LOW, HIGH, 10.0), l);
            assert!((at(0.8) - at(0.95)).abs() < 1e-12);
            assert!((at(-0.8) - at(-0.95)).abs() < 1e-12);
        }
        assert_eq!(cfg.sharpness, 10.0);
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = Tensor::vector(vec![0.3, -1.2, 0.8]).unwrap();
        let report = grad_check(&[logits], 1e-6, |tape, v| {
            let ids: Arc<[usize]> = Arc::from(vec![0, 0, 0]);
            let lse = tape.segment_logsumexp(v[0], ids, 1)?;
            let picked = tape.gather_rows(v[0], Arc::from(vec![2]))?;
            tape.sub(lse, picked)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");

        // both cosines lie strictly between the outer centers
        let a = Tensor::from_rows(&[vec![1.0, 0.2], vec![0.1, 0.9]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.3, 0.8], vec![-0.5, 0.3]]).unwrap();
        let cfg = LossConfig::snli3();
        let report = grad_check(&[a, b], 1e-6, |tape, v| {
            Ok::<_, ObjectiveError>(
                soft_logits_loss(tape, v[0], v[1], &[Label::Neutral, Label::Entailment], &cfg)?.loss,
            )
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
