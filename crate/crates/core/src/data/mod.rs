//! Dependency-tree pairs: representation, validation, file format, batching and a
//! synthetic task generator.

mod batch;
mod io;
mod synth;
mod tree;
mod validate;

pub use batch::{batch_pairs, unbatch, CrossIndex, GraphBatch, MessageIndex, Side};
pub use io::{load_pairs, pair_to_line, parse_line, read_pairs, write_pairs, SCHEMA};
pub use synth::{synth_task, SynthSpec};
pub use tree::{DepTree, FeatureLayout, Label, Matrix, TreePair};
pub use validate::{validate_tree, Rule, Site, Strictness, Violation};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported schema {found:?} (expected {SCHEMA:?})")]
    Schema { line: usize, found: String },
    #[error("line {line}: pair {pair_id} {side} fails {}", list(.violations))]
    Validation {
        pair_id: String,
        line: usize,
        side: &'static str,
        violations: Vec<Violation>,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("read error: {0}")]
    Read(#[from] std::io::Error),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid request: {0}")]
    Precondition(String),
}

fn list(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}
