use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failures raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range (bound {bound})")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: segment {segment} is degenerate and cannot be normalized")]
    DegenerateSegment { op: &'static str, segment: usize },
    #[error("{op}: row {row} has zero norm")]
    DegenerateRow { op: &'static str, row: usize },
    #[error("backward: loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{location}: non-finite value {value}")]
    NonFinite { location: String, value: f64 },
    #[error("invalid tensor: {0}")]
    Invalid(String),
}

/// Dense row-major float-64 array.
///
/// Scalars use shape `[1]`. Every extent is positive and `shape.iter().product()`
/// always equals `data.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::Invalid(format!(
                "shape {shape:?} must have positive extents"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; n]).expect("zeros: positive extents")
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; n]).expect("filled: positive extents")
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let n = rows.len();
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(TensorError::Invalid(format!(
                "row {bad} has {} entries, expected {d}",
                rows[bad].len()
            )));
        }
        Self::new(vec![n, d], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading extent.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of values per leading index (1 for vectors).
    pub fn row_width(&self) -> usize {
        self.data.len() / self.shape[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.row_width() + j]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, TensorError> {
        Self::new(shape, self.data.clone())
    }

    /// Explicit NaN/Inf check.
    pub fn check_finite(&self, what: &str) -> Result<(), TensorError> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(TensorError::NonFinite {
                location: format!("{what}[{i}]"),
                value: self.data[i],
            }),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub(crate) fn as_matrix_dims(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(TensorError::Shape {
                op,
                left: self.shape.clone(),
                right: vec![],
            }),
        }
    }
}

/// Plain matrix product used by the tape and by tests.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    out
}
