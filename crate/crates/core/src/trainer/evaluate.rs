use crate::data::{batch_pairs, Label, TreePair};
use crate::metrics::{confusion, embedding_norm_std, ConfusionMatrix, EvaluationReport};
use crate::model::{embed_pairs, ModelConfig, ModelParams};
use crate::objectives::{cosine, threshold_classify};

use super::TrainError;

/// Per-pair similarities and thresholded predictions for a held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub similarities: Vec<f64>,
    pub predictions: Vec<Label>,
    pub labels: Vec<Label>,
    pub confusion: ConfusionMatrix,
    pub embedding_norm_std: Option<f64>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }

    pub fn report(&self, thresholds: (f64, f64)) -> EvaluationReport {
        EvaluationReport::new(
            &self.confusion,
            [thresholds.0, thresholds.1],
            &self.similarities,
            self.embedding_norm_std,
        )
    }
}

/// Embeds `pairs` in batches of `batch_size` and classifies each cosine.
pub fn evaluate(
    config: &ModelConfig,
    params: &ModelParams,
    pairs: &[TreePair],
    thresholds: (f64, f64),
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let mut similarities = Vec::with_capacity(pairs.len());
    let mut embeddings: Vec<Vec<f64>> = Vec::with_capacity(2 * pairs.len());
    for chunk in pairs.chunks(batch_size) {
        let batch = batch_pairs(chunk)?;
        let (a, b) = embed_pairs(config, params, &batch)?;
        for k in 0..a.rows() {
            similarities.push(cosine(a.row(k), b.row(k))?);
            embeddings.push(a.row(k).to_vec());
            embeddings.push(b.row(k).to_vec());
        }
    }
    let predictions: Vec<Label> = similarities
        .iter()
        .map(|&s| threshold_classify(s, thresholds.0, thresholds.1))
        .collect();
    let labels: Vec<Label> = pairs.iter().map(|p| p.label).collect();
    let confusion = confusion(&labels, &predictions)?;
    Ok(Evaluation {
        similarities,
        predictions,
        labels,
        confusion,
        embedding_norm_std: embedding_norm_std(&embeddings).ok(),
    })
}
