//! Tree matching and tree embedding networks over dependency parse trees.
//!
//! The crate is split along the pipeline: [`autodiff`] supplies the tape,
//! [`data`] ingests and batches featurized trees, [`model`] runs the encoder,
//! shared propagation and gated aggregation, [`objectives`] and [`trainer`]
//! implement the three training phases, and [`metrics`] scores predictions.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod model;
pub mod metrics;
pub mod objectives;
pub mod trainer;
