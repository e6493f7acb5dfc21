use std::fmt;

use tmnlab::autodiff::TensorError;
use tmnlab::data::DataError;
use tmnlab::model::ModelError;
use tmnlab::objectives::ObjectiveError;
use tmnlab::trainer::TrainError;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { kind: Kind::Usage, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: Kind::Data, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { kind: Kind::Numeric, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn tensor_kind(e: &TensorError) -> Kind {
    match e {
        TensorError::NonFinite { .. } | TensorError::DegenerateSegment { .. } => Kind::Numeric,
        _ => Kind::Usage,
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let kind = match e {
            DataError::Precondition(_) => Kind::Usage,
            _ => Kind::Data,
        };
        Self { kind, message: format!("data: {e}") }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            ModelError::Tensor(t) => tensor_kind(t),
            _ => Kind::Usage,
        };
        Self { kind, message: format!("model: {e}") }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let kind = match &e {
            TrainError::Config(_) | TrainError::Protocol(_) => Kind::Usage,
            TrainError::Io { .. }
            | TrainError::Checkpoint(_)
            | TrainError::DegenerateBatch(_)
            | TrainError::Metrics(_) => Kind::Data,
            TrainError::NonFinite { .. }
            | TrainError::NonFiniteGradient { .. }
            | TrainError::Objective(ObjectiveError::DegenerateEmbedding(_)) => Kind::Numeric,
            TrainError::Data(DataError::Precondition(_)) => Kind::Usage,
            TrainError::Data(_) => Kind::Data,
            TrainError::Model(m) => match m {
                ModelError::Tensor(t) => tensor_kind(t),
                _ => Kind::Usage,
            },
            TrainError::Tensor(t) | TrainError::Objective(ObjectiveError::Tensor(t)) => tensor_kind(t),
            TrainError::Objective(_) => Kind::Usage,
        };
        let module = match &e {
            TrainError::Model(_) => "model",
            TrainError::Data(_) => "data",
            TrainError::Objective(_) => "objectives",
            TrainError::Tensor(_) => "autodiff",
            TrainError::Metrics(_) => "metrics",
            _ => "trainer",
        };
        Self { kind, message: format!("{module}: {e}") }
    }
}
