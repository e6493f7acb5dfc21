//! Similarity transforms, contrastive losses and threshold classification.

mod classify;
mod contrastive;

pub use classify::{
    argmax_class, cross_entropy, pair_cosines, soft_logits, soft_logits_loss, threshold_classify,
    ClassificationOutcome,
};
pub use contrastive::{
    contrastive_loss, contrastive_relations, infonce, multi_objective_loss, term_relations,
    BatchRelations, InfoNceOutcome, MultiObjectiveOutcome, Transform,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("empty loss: {0}")]
    EmptyLoss(String),
    #[error("invalid relations: {0}")]
    Relations(String),
    #[error("loss config error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl From<ObjectiveError> for TensorError {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::Tensor(t) => t,
            other => TensorError::Invalid(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub temperature: f64,
    pub w_pos: f64,
    pub w_dist: f64,
    pub w_mid: f64,
    pub theta_low: f64,
    pub theta_high: f64,
    /// Slope of the soft class logits.
    pub sharpness: f64,
}

impl LossConfig {
    /// Three-way inference weighting.
    pub fn snli3() -> Self {
        Self {
            temperature: 0.05,
            w_pos: 0.55,
            w_dist: 0.30,
            w_mid: 0.15,
            theta_low: -0.33,
            theta_high: 0.33,
            sharpness: 10.0,
        }
    }

    /// Two-way similarity weighting; the middle term is off.
    pub fn semeval2() -> Self {
        Self {
            w_pos: 0.65,
            w_dist: 0.35,
            w_mid: 0.0,
            ..Self::snli3()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "snli3" => Some(Self::snli3()),
            "semeval2" => Some(Self::semeval2()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.temperature > 0.0) {
            return Err(ObjectiveError::Config("temperature must be positive".into()));
        }
        for (name, w) in [("w_pos", self.w_pos), ("w_dist", self.w_dist), ("w_mid", self.w_mid)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(ObjectiveError::Config(format!("{name} must be non-negative")));
            }
        }
        if !(self.theta_low < self.theta_high) {
            return Err(ObjectiveError::Config("theta_low must be below theta_high".into()));
        }
        if !(self.sharpness > 0.0) {
            return Err(ObjectiveError::Config("sharpness must be positive".into()));
        }
        Ok(())
    }

    pub fn weight(&self, t: Transform) -> f64 {
        match t {
            Transform::Positive => self.w_pos,
            Transform::Distance => self.w_dist,
            Transform::Middle => self.w_mid,
        }
    }
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, ObjectiveError> {
    if u.len() != v.len() {
        return Err(ObjectiveError::DegenerateEmbedding(format!(
            "lengths {} and {} differ",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(ObjectiveError::DegenerateEmbedding(
            "zero or non-finite norm".into(),
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `(s, -s, 1 - |s|)`: high for entailment, contradiction and neutral respectively.
pub fn similarity_transforms(s: f64) -> (f64, f64, f64) {
    (s, -s, 1.0 - s.abs())
}
