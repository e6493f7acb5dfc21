//! Accuracy, confusion matrices, per-class scores and the embedding-norm diagnostic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("need at least 2 embeddings, got {0}")]
    TooFewEmbeddings(usize),
}

/// Counts indexed `[true][predicted]` in class order (contradiction, neutral, entailment).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn add(&mut self, truth: Label, predicted: Label) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn column_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }
}

pub fn confusion(truth: &[Label], predicted: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: Label,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when any of the three scores had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

/// Precision, recall and F1 per class, in class order.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> [ClassScore; 3] {
    Label::ALL.map(|class| {
        let k = class.index();
        let hit = cm.counts[k][k] as f64;
        let predicted = cm.column_sum(k);
        let support = cm.row_sum(k);
        let mut degenerate = false;
        let mut ratio = |den: u64| {
            if den == 0 {
                degenerate = true;
                0.0
            } else {
                hit / den as f64
            }
        };
        let precision = ratio(predicted);
        let recall = ratio(support);
        let f1 = if precision + recall == 0.0 {
            degenerate = true;
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScore {
            class,
            precision,
            recall,
            f1,
            support,
            degenerate,
        }
    })
}

/// Population standard deviation of the rows' L2 norms.
pub fn embedding_norm_std<R: AsRef<[f64]>>(embeddings: &[R]) -> Result<f64, MetricsError> {
    if embeddings.len() < 2 {
        return Err(MetricsError::TooFewEmbeddings(embeddings.len()));
    }
    let norms: Vec<f64> = embeddings
        .iter()
        .map(|e| e.as_ref().iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Evaluation document written by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub examples: u64,
    pub accuracy: f64,
    /// Row and column order of `confusion`.
    pub classes: [Label; 3],
    pub confusion: [[u64; 3]; 3],
    pub per_class: Vec<ClassScore>,
    pub thresholds: [f64; 2],
    pub mean_similarity: Option<f64>,
    pub embedding_norm_std: Option<f64>,
}

impl EvaluationReport {
    pub fn new(
        cm: &ConfusionMatrix,
        thresholds: [f64; 2],
        similarities: &[f64],
        embedding_norm_std: Option<f64>,
    ) -> Self {
        let mean_similarity = (!similarities.is_empty())
            .then(|| similarities.iter().sum::<f64>() / similarities.len() as f64);
        Self {
            examples: cm.total(),
            accuracy: cm.accuracy(),
            classes: Label::ALL,
            confusion: cm.counts,
            per_class: per_class_metrics(cm).to_vec(),
            thresholds,
            mean_similarity,
            embedding_norm_std,
        }
    }
}
