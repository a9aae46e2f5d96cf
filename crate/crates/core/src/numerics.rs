//! Deterministic numeric kernels shared by every other module: dense
//! vectors and matrices, TopK selection, the Adam optimizer and the cosine
//! learning-rate schedule.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense vector of finite 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry {} at index {i}",
                values[i]
            )));
        }
        Ok(DenseVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        DenseVector(vec![0.0; dim])
    }

    /// Wraps values already known to be finite (kernel outputs).
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        DenseVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        DenseVector::new(values)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(rows * cols, data.len(), "matrix data length"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators; fixed association order keeps results reproducible
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const BLOCK: usize = 64;

/// Computes `a · bᵀ` for row-major `a` (m×k) and `b` (n×k), returning m×n.
///
/// Plain blocked loop kernel; each output entry is a single [`dot`] so the
/// result is bitwise identical to the per-row `matvec` path.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::dim(a.cols, b.cols, "inner dimension of a·bᵀ"));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i0 in (0..a.rows).step_by(BLOCK) {
        let i1 = (i0 + BLOCK).min(a.rows);
        for j0 in (0..b.rows).step_by(BLOCK) {
            let j1 = (j0 + BLOCK).min(b.rows);
            for i in i0..i1 {
                let ar = a.row(i);
                let orow = &mut out.data[i * b.rows..(i + 1) * b.rows];
                for j in j0..j1 {
                    orow[j] = dot(ar, b.row(j));
                }
            }
        }
    }
    Ok(out)
}

/// Descending order on values with the lower index winning ties.
#[inline]
pub(crate) fn rank_order(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or_else(|| b.1.total_cmp(&a.1))
        .then(a.0.cmp(&b.0))
}

/// Selects the `k` largest entries of `values`.
///
/// Returns exactly `min(k, len)` `(index, value)` pairs sorted by index.
/// Ties are broken in favour of the lower index.
pub fn topk_select(values: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if values.is_empty() {
        return Err(Error::invalid("topk_select on empty input"));
    }
    if k == 0 {
        return Err(Error::invalid("topk_select requires k >= 1"));
    }
    let k = k.min(values.len());
    let mut out: Vec<(usize, f64)> = if k == values.len() {
        values.iter().copied().enumerate().collect()
    } else if k <= 16 {
        // small-k path: insertion into a sorted buffer
        let mut buf: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for (i, &v) in values.iter().enumerate() {
            if buf.len() == k && rank_order((i, v), buf[k - 1]) != Ordering::Less {
                continue;
            }
            let pos = buf
                .binary_search_by(|probe| rank_order(*probe, (i, v)))
                .unwrap_or_else(|p| p);
            buf.insert(pos, (i, v));
            buf.truncate(k);
        }
        buf
    } else {
        let mut all: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
        all.select_nth_unstable_by(k - 1, |a, b| rank_order(*a, *b));
        all.truncate(k);
        all
    };
    out.sort_unstable_by_key(|&(i, _)| i);
    Ok(out)
}

/// Per-tensor Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
            beta1: Self::DEFAULT_BETA1,
            beta2: Self::DEFAULT_BETA2,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim(params.len(), grads.len(), "adam gradient length"));
    }
    if state.first_moment.len() != params.len() || state.second_moment.len() != params.len() {
        return Err(Error::dim(
            params.len(),
            state.first_moment.len(),
            "adam moment length",
        ));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be > 0, got {lr}")));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Cosine annealing from `initial_lr` to `min_lr` over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub initial_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(initial_lr: f64, min_lr: f64, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::invalid("cosine schedule needs total_steps >= 1"));
        }
        if !(initial_lr.is_finite() && min_lr.is_finite()) || min_lr > initial_lr || min_lr < 0.0 {
            return Err(Error::invalid(format!(
                "cosine schedule needs 0 <= min_lr <= initial_lr, got {min_lr} / {initial_lr}"
            )));
        }
        Ok(CosineSchedule {
            initial_lr,
            min_lr,
            total_steps,
        })
    }
}

pub fn cosine_lr(schedule: &CosineSchedule, step: u64) -> Result<f64> {
    if step > schedule.total_steps {
        return Err(Error::invalid(format!(
            "step {step} outside schedule of {} steps",
            schedule.total_steps
        )));
    }
    let progress = step as f64 / schedule.total_steps as f64;
    let lr = schedule.min_lr
        + 0.5 * (schedule.initial_lr - schedule.min_lr) * (1.0 + (PI * progress).cos());
    // clamp away the cos(π) rounding residue
    Ok(lr.clamp(schedule.min_lr, schedule.initial_lr))
}
