//! Three-phase training: contrastive pretraining, the three-term objective and
//! threshold fine-tuning, with Adam, seeded batching and resumable checkpoints.

mod adam;
mod checkpoint;
mod evaluate;
mod run;
mod schedule;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use evaluate::{evaluate, Evaluation};
pub use run::{
    epoch_checkpoint, last_checkpoint, metrics_log, phase_dir, run_phase, start_for_phase,
    EpochReport, PhaseConfig, PhaseOutcome, PhaseRun, Start,
};
pub use schedule::{epoch_batches, is_validation, randomized_pairing, split_by_hash, stream_rng};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::objectives::ObjectiveError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("non-finite gradient for {param}")]
    NonFiniteGradient { param: String },
    #[error(
        "non-finite {what} in phase {phase} epoch {epoch} batch {batch}; last good checkpoint: {}",
        .last_good.as_ref().map_or("none".to_string(), |p| p.display().to_string())
    )]
    NonFinite {
        what: String,
        phase: u8,
        epoch: usize,
        batch: usize,
        last_good: Option<PathBuf>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Numeric failures, as opposed to bad input or protocol misuse.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Self::NonFinite { .. }
                | Self::NonFiniteGradient { .. }
                | Self::Tensor(TensorError::NonFinite { .. })
        )
    }
}
