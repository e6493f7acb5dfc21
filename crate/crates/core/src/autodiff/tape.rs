//! Wengert-list tape for reverse-mode differentiation.
//!
//! Every operation appends one node holding its forward value and the handles of
//! its inputs. `backward` walks the list once in reverse, so each recorded op is
//! visited exactly once. Leaf gradients accumulate across `backward` calls until
//! `zero_grad`.

use std::fmt;
use std::sync::Arc;

use super::tensor::{matmul_raw, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used for fault injection and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    Neg,
    Abs,
    Sigmoid,
    Tanh,
    Relu,
    AddBias,
    ScaleRows,
    RowSum,
    Sum,
    Concat,
    GatherRows,
    SegmentSum,
    SegmentSoftmax,
    SegmentLogSumExp,
    NormalizeRows,
    Reshape,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use OpKind::*;
        let all = [
            MatMul, Transpose, Add, Sub, Mul, Scale, AddScalar, Neg, Abs, Sigmoid, Tanh, Relu,
            AddBias, ScaleRows, RowSum, Sum, Concat, GatherRows, SegmentSum, SegmentSoftmax,
            SegmentLogSumExp, NormalizeRows, Reshape,
        ];
        all.into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown op kind '{s}'"))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Abs(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    RowSum(Var),
    Sum(Var),
    Concat(Vec<Var>, usize),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    SegmentLogSumExp(Var, Arc<[usize]>),
    NormalizeRows(Var, Vec<f64>),
    Reshape(Var),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        use OpKind as K;
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => K::MatMul,
            Op::Transpose(..) => K::Transpose,
            Op::Add(..) => K::Add,
            Op::Sub(..) => K::Sub,
            Op::Mul(..) => K::Mul,
            Op::Scale(..) => K::Scale,
            Op::AddScalar(..) => K::AddScalar,
            Op::Neg(..) => K::Neg,
            Op::Abs(..) => K::Abs,
            Op::Sigmoid(..) => K::Sigmoid,
            Op::Tanh(..) => K::Tanh,
            Op::Relu(..) => K::Relu,
            Op::AddBias(..) => K::AddBias,
            Op::ScaleRows(..) => K::ScaleRows,
            Op::RowSum(..) => K::RowSum,
            Op::Sum(..) => K::Sum,
            Op::Concat(..) => K::Concat,
            Op::GatherRows(..) => K::GatherRows,
            Op::SegmentSum(..) => K::SegmentSum,
            Op::SegmentSoftmax(..) => K::SegmentSoftmax,
            Op::SegmentLogSumExp(..) => K::SegmentLogSumExp,
            Op::NormalizeRows(..) => K::NormalizeRows,
            Op::Reshape(..) => K::Reshape,
        })
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Recorded computation. Confined to one thread for a forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    faults: Vec<(OpKind, f64)>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn check_ids(op: &'static str, ids: &[usize], bound: usize) -> Result<(), TensorError> {
    match ids.iter().find(|&&i| i >= bound) {
        Some(&index) => Err(TensorError::Index { op, index, bound }),
        None => Ok(()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: multiply the backward contribution of every `kind` op by `factor`.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind, factor: f64) {
        self.faults.push((kind, factor));
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
            requires_grad: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; `backward` accumulates into its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
            requires_grad: true,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.as_matrix_dims("matmul")?;
        let (k2, n) = tb.as_matrix_dims("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let ta = self.value(a);
        let (m, n) = ta.as_matrix_dims("transpose")?;
        let d = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let t = Tensor::new(vec![n, m], out)?;
        Ok(self.push(t, Op::Transpose(a), &[a]))
    }

    // ---- elementwise ----

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        record: Op,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(t, record, &[a, b]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, record: Op) -> Var {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), out).expect("unary keeps shape");
        self.push(t, record, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        // NaN passes through so it is caught downstream rather than masked
        self.unary(a, |x| if x <= 0.0 { 0.0 } else { x }, Op::Relu(a))
    }

    /// `x[n×d] + b[d]`, the one row-broadcast the engine offers.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (_, d) = tx.as_matrix_dims("add_bias")?;
        if tb.shape() != [d] {
            return Err(shape_err("add_bias", tx, tb));
        }
        let bias = tb.data();
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::AddBias(x, b), &[x, b]))
    }

    /// Scales row `i` of `x` by `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tw.numel() != tx.rows() {
            return Err(shape_err("scale_rows", tx, tw));
        }
        let d = tx.row_width();
        let mut out = tx.data().to_vec();
        for (row, &wi) in out.chunks_mut(d).zip(tw.data()) {
            for o in row {
                *o *= wi;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::ScaleRows(x, w), &[x, w]))
    }

    /// Sums each row: `[n×d] -> [n]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let d = tx.row_width();
        let out: Vec<f64> = tx.data().chunks(d).map(|r| r.iter().sum()).collect();
        let t = Tensor::vector(out).expect("row_sum: nonempty");
        self.push(t, Op::RowSum(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Concatenates 2-D tensors along `axis` (0 = rows, 1 = columns).
    /// Vectors may be concatenated along axis 0.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let t0 = self.value(*first);
        let value = match axis {
            0 => {
                let tail = &t0.shape()[1..];
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let tp = self.value(p);
                    if &tp.shape()[1..] != tail {
                        return Err(shape_err("concat", t0, tp));
                    }
                    rows += tp.rows();
                    data.extend_from_slice(tp.data());
                }
                let mut shape = vec![rows];
                shape.extend_from_slice(tail);
                Tensor::new(shape, data)?
            }
            1 => {
                let (m, _) = t0.as_matrix_dims("concat")?;
                let mut widths = Vec::with_capacity(parts.len());
                for &p in parts {
                    let tp = self.value(p);
                    let (mp, np) = tp.as_matrix_dims("concat")?;
                    if mp != m {
                        return Err(shape_err("concat", t0, tp));
                    }
                    widths.push(np);
                }
                let total: usize = widths.iter().sum();
                let mut data = Vec::with_capacity(m * total);
                for i in 0..m {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(i));
                    }
                }
                Tensor::new(vec![m, total], data)?
            }
            _ => {
                return Err(TensorError::Invalid(format!(
                    "concat axis {axis} unsupported"
                )))
            }
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), parts))
    }

    // ---- indexing and segments ----

    /// Output row `r` is input row `index[r]`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var, TensorError> {
        let tx = self.value(x);
        check_ids("gather_rows", &index, tx.rows())?;
        if index.is_empty() {
            return Err(TensorError::Invalid("gather_rows with empty index".into()));
        }
        let mut data = Vec::with_capacity(index.len() * tx.row_width());
        for &i in index.iter() {
            data.extend_from_slice(tx.row(i));
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = index.len();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::GatherRows(x, index), &[x]))
    }

    /// Row `s` of the output sums the input rows whose id is `s`; empty segments are zero.
    pub fn segment_sum(
        &mut self,
        x: Var,
        ids: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, TensorError> {
        let tx = self.value(x);
        if ids.len() != tx.rows() {
            return Err(TensorError::Shape {
                op: "segment_sum",
                left: tx.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        check_ids("segment_sum", &ids, num_segments)?;
        let d = tx.row_width();
        let mut out = vec![0.0; num_segments * d];
        for (r, &s) in ids.iter().enumerate() {
            for (o, &v) in out[s * d..(s + 1) * d].iter_mut().zip(tx.row(r)) {
                *o += v;
            }
        }
        let mut shape = tx.shape().to_vec();
        shape[0] = num_segments;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::SegmentSum(x, ids), &[x]))
    }

    fn segment_max(
        op: &'static str,
        data: &[f64],
        ids: &[usize],
        num_segments: usize,
    ) -> Result<Vec<f64>, TensorError> {
        let mut max = vec![f64::NEG_INFINITY; num_segments];
        for (&v, &s) in data.iter().zip(ids) {
            if v > max[s] || v.is_nan() {
                max[s] = v;
            }
        }
        for (&s, _) in ids.iter().zip(data) {
            if !max[s].is_finite() {
                return Err(TensorError::DegenerateSegment { op, segment: s });
            }
        }
        Ok(max)
    }

    fn check_segment_input(
        &self,
        op: &'static str,
        x: Var,
        ids: &[usize],
        num_segments: usize,
    ) -> Result<(), TensorError> {
        let tx = self.value(x);
        if tx.numel() != ids.len() {
            return Err(TensorError::Shape {
                op,
                left: tx.shape().to_vec(),
                right: vec![ids.len()],
            });
        }
        check_ids(op, ids, num_segments)
    }

    /// Max-subtracted softmax over the entries of each segment.
    pub fn segment_softmax(
        &mut self,
        scores: Var,
        ids: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, TensorError> {
        self.check_segment_input("segment_softmax", scores, &ids, num_segments)?;
        let ts = self.value(scores);
        let max = Self::segment_max("segment_softmax", ts.data(), &ids, num_segments)?;
        let mut out: Vec<f64> = ts
            .data()
            .iter()
            .zip(ids.iter())
            .map(|(&v, &s)| (v - max[s]).exp())
            .collect();
        let mut denom = vec![0.0; num_segments];
        for (&e, &s) in out.iter().zip(ids.iter()) {
            denom[s] += e;
        }
        for (o, &s) in out.iter_mut().zip(ids.iter()) {
            *o /= denom[s];
        }
        let t = Tensor::new(ts.shape().to_vec(), out)?;
        Ok(self.push(t, Op::SegmentSoftmax(scores, ids, num_segments), &[scores]))
    }

    /// Per-segment `log Σ exp`, `[n] -> [num_segments]`. Every segment must be non-empty.
    pub fn segment_logsumexp(
        &mut self,
        scores: Var,
        ids: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, TensorError> {
        self.check_segment_input("segment_logsumexp", scores, &ids, num_segments)?;
        let ts = self.value(scores);
        let max = Self::segment_max("segment_logsumexp", ts.data(), &ids, num_segments)?;
        let mut sums = vec![0.0; num_segments];
        let mut seen = vec![false; num_segments];
        for (&v, &s) in ts.data().iter().zip(ids.iter()) {
            sums[s] += (v - max[s]).exp();
            seen[s] = true;
        }
        if let Some(segment) = seen.iter().position(|&b| !b) {
            return Err(TensorError::DegenerateSegment {
                op: "segment_logsumexp",
                segment,
            });
        }
        let out: Vec<f64> = sums.iter().zip(&max).map(|(&s, &m)| m + s.ln()).collect();
        let t = Tensor::vector(out)?;
        Ok(self.push(
            t,
            Op::SegmentLogSumExp(scores, ids),
            &[scores],
        ))
    }

    /// Divides every row by its L2 norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let tx = self.value(x);
        let d = tx.row_width();
        let mut norms = Vec::with_capacity(tx.rows());
        let mut out = tx.data().to_vec();
        for (r, row) in out.chunks_mut(d).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(TensorError::DegenerateRow {
                    op: "normalize_rows",
                    row: r,
                });
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        Ok(self.push(t, Op::NormalizeRows(x, norms), &[x]))
    }

    // ---- reverse pass ----

    /// Propagates d(loss)/d(·) to every trainable leaf reachable from `loss`,
    /// adding onto any gradient already stored there.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            if self.nodes[idx].requires_grad {
                let shape = self.nodes[idx].value.shape().to_vec();
                let slot = &mut self.nodes[idx].grad;
                match slot {
                    Some(t) => {
                        for (a, b) in t.data_mut().iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => *slot = Some(Tensor::new(shape, g)?),
                }
                continue;
            }
            let factor = self.nodes[idx]
                .op
                .kind()
                .map(|k| {
                    self.faults
                        .iter()
                        .filter(|(fk, _)| *fk == k)
                        .map(|(_, f)| *f)
                        .product::<f64>()
                })
                .unwrap_or(1.0);
            for (input, mut contrib) in self.local_backward(idx, &g) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                if factor != 1.0 {
                    contrib.iter_mut().for_each(|c| *c *= factor);
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_backward(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut out = Vec::with_capacity(2);
                if needs(*a) {
                    // dA = dC · Bᵀ
                    let bd = tb.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let bp = &bd[p * n..(p + 1) * n];
                            da[i * k + p] = gi.iter().zip(bp).map(|(x, y)| x * y).sum();
                        }
                    }
                    out.push((*a, da));
                }
                if needs(*b) {
                    // dB = Aᵀ · dC
                    let ad = ta.data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(gi) {
                                *d += aip * gv;
                            }
                        }
                    }
                    out.push((*b, db));
                }
                out
            }
            Op::Transpose(a) => {
                let (m, n) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = g[j * m + i];
                    }
                }
                vec![(*a, da)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                vec![
                    (*a, g.iter().zip(vb).map(|(g, y)| g * y).collect()),
                    (*b, g.iter().zip(va).map(|(g, x)| g * x).collect()),
                ]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|x| x * s).collect())],
            Op::AddScalar(a) | Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::Neg(a) => vec![(*a, g.iter().map(|x| -x).collect())],
            Op::Abs(a) => {
                let x = val(*a);
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => vec![(
                *a,
                g.iter().zip(y).map(|(g, &s)| g * s * (1.0 - s)).collect(),
            )],
            Op::Tanh(a) => vec![(
                *a,
                g.iter().zip(y).map(|(g, &t)| g * (1.0 - t * t)).collect(),
            )],
            Op::Relu(a) => {
                let x = val(*a);
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::AddBias(x, b) => {
                let d = self.nodes[b.0].value.numel();
                let mut db = vec![0.0; d];
                for row in g.chunks(d) {
                    for (o, v) in db.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                vec![(*x, g.to_vec()), (*b, db)]
            }
            Op::ScaleRows(x, w) => {
                let tx = &self.nodes[x.0].value;
                let d = tx.row_width();
                let wv = val(*w);
                let mut dx = g.to_vec();
                let mut dw = vec![0.0; wv.len()];
                for (i, (row, xr)) in dx.chunks_mut(d).zip(tx.data().chunks(d)).enumerate() {
                    dw[i] = row.iter().zip(xr).map(|(g, x)| g * x).sum();
                    for v in row {
                        *v *= wv[i];
                    }
                }
                vec![(*x, dx), (*w, dw)]
            }
            Op::RowSum(x) => {
                let d = self.nodes[x.0].value.row_width();
                let dx = g.iter().flat_map(|&gi| std::iter::repeat_n(gi, d)).collect();
                vec![(*x, dx)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.nodes[x.0].value.numel()])],
            Op::Concat(parts, axis) => {
                let mut out = Vec::with_capacity(parts.len());
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.numel();
                        out.push((p, g[offset..offset + n].to_vec()));
                        offset += n;
                    }
                } else {
                    let m = node.value.shape()[0];
                    let total = node.value.shape()[1];
                    let mut col = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].value.shape()[1];
                        let mut dp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            dp.extend_from_slice(&g[i * total + col..i * total + col + w]);
                        }
                        out.push((p, dp));
                        col += w;
                    }
                }
                out
            }
            Op::GatherRows(x, index) => {
                let tx = &self.nodes[x.0].value;
                let d = tx.row_width();
                let mut dx = vec![0.0; tx.numel()];
                for (r, &i) in index.iter().enumerate() {
                    for (o, v) in dx[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *o += v;
                    }
                }
                vec![(*x, dx)]
            }
            Op::SegmentSum(x, ids) => {
                let d = self.nodes[x.0].value.row_width();
                let mut dx = Vec::with_capacity(ids.len() * d);
                for &s in ids.iter() {
                    dx.extend_from_slice(&g[s * d..(s + 1) * d]);
                }
                vec![(*x, dx)]
            }
            Op::SegmentSoftmax(x, ids, num) => {
                let mut dot = vec![0.0; *num];
                for ((&gi, &yi), &s) in g.iter().zip(y).zip(ids.iter()) {
                    dot[s] += gi * yi;
                }
                let dx = g
                    .iter()
                    .zip(y)
                    .zip(ids.iter())
                    .map(|((&gi, &yi), &s)| yi * (gi - dot[s]))
                    .collect();
                vec![(*x, dx)]
            }
            Op::SegmentLogSumExp(x, ids) => {
                let xv = val(*x);
                let dx = xv
                    .iter()
                    .zip(ids.iter())
                    .map(|(&v, &s)| g[s] * (v - y[s]).exp())
                    .collect();
                vec![(*x, dx)]
            }
            Op::NormalizeRows(x, norms) => {
                let d = node.value.row_width();
                let mut dx = vec![0.0; y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[r * d + j] = (gr[j] - yr[j] * proj) / n;
                    }
                }
                vec![(*x, dx)]
            }
        }
    }
}
