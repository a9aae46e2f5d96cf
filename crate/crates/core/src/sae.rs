//! The k-sparse autoencoder.
//!
//! ```text
//! h  = TopK(W_enc (x - b_dec) + b_enc)
//! x̂  = W_dec h + b_dec
//! ```
//!
//! TopK selects by raw value (no ReLU), so activations may be negative.
//! Gradients treat the selected support as fixed (straight-through on the
//! active set); unselected features receive exactly zero gradient.
//!
//! Storage: `w_enc` is n×d row-major (row j is feature j's encoder vector)
//! and `w_dec` is also kept as n×d, row j holding *column* j of the d×n
//! decoder matrix, so decoding touches only `nnz(h)` contiguous rows.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, matmul_bt, topk_select, DenseVector, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    k: usize,
    w_enc: Matrix,
    b_enc: Vec<f64>,
    w_dec: Matrix,
    b_dec: Vec<f64>,
}

impl SaeParams {
    /// Builds parameters from explicit weights.
    ///
    /// `w_dec_columns` is n×d: row j is decoder column j.
    pub fn new(
        w_enc: Matrix,
        b_enc: Vec<f64>,
        w_dec_columns: Matrix,
        b_dec: Vec<f64>,
        k: usize,
    ) -> Result<Self> {
        let n = w_enc.rows();
        let d = w_enc.cols();
        if n == 0 || d == 0 {
            return Err(Error::invalid("latent and input dimensions must be positive"));
        }
        if b_enc.len() != n {
            return Err(Error::dim(n, b_enc.len(), "b_enc length"));
        }
        if w_dec_columns.rows() != n || w_dec_columns.cols() != d {
            return Err(Error::dim(n * d, w_dec_columns.rows() * w_dec_columns.cols(), "w_dec shape"));
        }
        if b_dec.len() != d {
            return Err(Error::dim(d, b_dec.len(), "b_dec length"));
        }
        if k == 0 || k > n {
            return Err(Error::invalid(format!("k must be in 1..={n}, got {k}")));
        }
        let params = SaeParams {
            k,
            w_enc,
            b_enc,
            w_dec: w_dec_columns,
            b_dec,
        };
        if !params.is_finite() {
            return Err(Error::invalid("non-finite parameter entry"));
        }
        Ok(params)
    }

    /// Standard initialization: unit-norm Gaussian decoder columns, encoder
    /// tied to the decoder transpose, zero encoder bias and `b_dec` set to the
    /// mean of `sample`.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        latent_dim: usize,
        k: usize,
        sample: &[&[f64]],
        rng: &mut R,
    ) -> Result<Self> {
        let mut w_dec = Matrix::zeros(latent_dim, input_dim);
        for j in 0..latent_dim {
            let col = w_dec.row_mut(j);
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = dot(col, col).sqrt();
            if norm > 0.0 {
                col.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let mut b_dec = vec![0.0; input_dim];
        if !sample.is_empty() {
            for x in sample {
                if x.len() != input_dim {
                    return Err(Error::dim(input_dim, x.len(), "initialization sample"));
                }
                axpy(1.0, x, &mut b_dec);
            }
            let inv = 1.0 / sample.len() as f64;
            b_dec.iter_mut().for_each(|v| *v *= inv);
        }
        SaeParams::new(w_dec.clone(), vec![0.0; latent_dim], w_dec, b_dec, k)
    }

    pub fn input_dim(&self) -> usize {
        self.w_enc.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.w_enc.rows()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn w_enc(&self) -> &Matrix {
        &self.w_enc
    }

    pub fn b_enc(&self) -> &[f64] {
        &self.b_enc
    }

    /// Decoder columns as an n×d matrix (row j = column j of W_dec).
    pub fn w_dec_columns(&self) -> &Matrix {
        &self.w_dec
    }

    pub fn decoder_column(&self, feature: usize) -> &[f64] {
        self.w_dec.row(feature)
    }

    pub fn b_dec(&self) -> &[f64] {
        &self.b_dec
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_enc.as_mut_slice(),
            &mut self.b_enc,
            self.w_dec.as_mut_slice(),
            &mut self.b_dec,
        ]
    }

    pub(crate) fn tensor_lens(&self) -> [usize; 4] {
        [
            self.w_enc.as_slice().len(),
            self.b_enc.len(),
            self.w_dec.as_slice().len(),
            self.b_dec.len(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.w_enc.as_slice().iter().all(|v| v.is_finite())
            && self.b_enc.iter().all(|v| v.is_finite())
            && self.w_dec.as_slice().iter().all(|v| v.is_finite())
            && self.b_dec.iter().all(|v| v.is_finite())
    }

    fn check_input(&self, x: &[f64], what: &str) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), x.len(), what));
        }
        Ok(())
    }

    /// Full pre-activation vector `W_enc (x - b_dec) + b_enc`.
    pub fn preactivations(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x, "encoder input")?;
        let centered: Vec<f64> = x.iter().zip(&self.b_dec).map(|(a, b)| a - b).collect();
        let mut z = self.w_enc.matvec(&centered);
        for (zi, bi) in z.iter_mut().zip(&self.b_enc) {
            *zi += bi;
        }
        Ok(z)
    }

    pub fn encode(&self, x: &[f64]) -> Result<SparseLatent> {
        let z = self.preactivations(x)?;
        Ok(SparseLatent {
            entries: topk_select(&z, self.k)?,
            latent_dim: self.latent_dim(),
        })
    }

    /// Encodes every row of `xs` (N×d) through one blocked matmul.
    /// Bitwise identical to calling [`SaeParams::encode`] per row.
    pub fn encode_batch(&self, xs: &Matrix) -> Result<Vec<SparseLatent>> {
        if xs.cols() != self.input_dim() {
            return Err(Error::dim(self.input_dim(), xs.cols(), "encoder batch width"));
        }
        let mut centered = xs.clone();
        for r in 0..centered.rows() {
            for (v, b) in centered.row_mut(r).iter_mut().zip(&self.b_dec) {
                *v -= b;
            }
        }
        let mut z = matmul_bt(&centered, &self.w_enc)?;
        (0..z.rows())
            .map(|r| {
                let row = z.row_mut(r);
                for (zi, bi) in row.iter_mut().zip(&self.b_enc) {
                    *zi += bi;
                }
                Ok(SparseLatent {
                    entries: topk_select(row, self.k)?,
                    latent_dim: self.latent_dim(),
                })
            })
            .collect()
    }

    /// `b_dec + Σ activation · W_dec[:, index]`, costing `nnz(h)·d`.
    pub fn decode(&self, h: &SparseLatent) -> Result<DenseVector> {
        self.check_latent(h)?;
        let mut out = self.b_dec.clone();
        for &(j, a) in &h.entries {
            axpy(a, self.w_dec.row(j), &mut out);
        }
        DenseVector::new(out)
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<(SparseLatent, DenseVector)> {
        let h = self.encode(x)?;
        let xhat = self.decode(&h)?;
        Ok((h, xhat))
    }

    fn check_latent(&self, h: &SparseLatent) -> Result<()> {
        if h.latent_dim != self.latent_dim() {
            return Err(Error::dim(self.latent_dim(), h.latent_dim, "latent dimension"));
        }
        if let Some(&(j, _)) = h.entries.iter().find(|(j, _)| *j >= self.latent_dim()) {
            return Err(Error::invalid(format!(
                "feature index {j} out of range for latent dimension {}",
                self.latent_dim()
            )));
        }
        Ok(())
    }

    /// Gradients of a loss with upstream gradient `grad_xhat` w.r.t. every
    /// parameter and the input, treating the support of `h` as fixed.
    pub fn backward(
        &self,
        x: &[f64],
        h: &SparseLatent,
        grad_xhat: &[f64],
    ) -> Result<(SaeGradients, DenseVector)> {
        let mut grads = SaeGradients::zeros_like(self);
        let gx = self.backward_into(x, h, grad_xhat, &mut grads)?;
        Ok((grads, gx))
    }

    /// Like [`SaeParams::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        x: &[f64],
        h: &SparseLatent,
        grad_xhat: &[f64],
        grads: &mut SaeGradients,
    ) -> Result<DenseVector> {
        self.check_input(x, "backward input")?;
        self.check_input(grad_xhat, "upstream gradient")?;
        self.check_latent(h)?;
        if h.entries.len() > self.latent_dim() {
            return Err(Error::invalid("stale latent: more entries than features"));
        }
        grads.check_shape(self)?;

        let d = self.input_dim();
        let centered: Vec<f64> = x.iter().zip(&self.b_dec).map(|(a, b)| a - b).collect();
        let mut grad_x = vec![0.0; d];
        for (gb, g) in grads.b_dec.iter_mut().zip(grad_xhat) {
            *gb += g;
        }
        for &(j, a) in &h.entries {
            let col = self.w_dec.row(j);
            axpy(a, grad_xhat, grads.w_dec.row_mut(j));
            let gh = dot(col, grad_xhat);
            grads.b_enc[j] += gh;
            axpy(gh, &centered, grads.w_enc.row_mut(j));
            axpy(gh, self.w_enc.row(j), &mut grad_x);
        }
        // x - b_dec feeds the encoder, so b_dec picks up the negated input gradient
        for (gb, gx) in grads.b_dec.iter_mut().zip(&grad_x) {
            *gb -= gx;
        }
        Ok(DenseVector::from_finite(grad_x))
    }
}

/// Gradient buffers shaped like [`SaeParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients {
    pub w_enc: Matrix,
    pub b_enc: Vec<f64>,
    /// n×d, row j = gradient of decoder column j.
    pub w_dec: Matrix,
    pub b_dec: Vec<f64>,
}

impl SaeGradients {
    pub fn zeros_like(params: &SaeParams) -> Self {
        let (n, d) = (params.latent_dim(), params.input_dim());
        SaeGradients {
            w_enc: Matrix::zeros(n, d),
            b_enc: vec![0.0; n],
            w_dec: Matrix::zeros(n, d),
            b_dec: vec![0.0; d],
        }
    }

    fn check_shape(&self, params: &SaeParams) -> Result<()> {
        if self.w_enc.rows() != params.latent_dim()
            || self.w_enc.cols() != params.input_dim()
            || self.b_enc.len() != params.latent_dim()
            || self.w_dec.rows() != params.latent_dim()
            || self.b_dec.len() != params.input_dim()
        {
            return Err(Error::invalid("gradient buffer shape does not match parameters"));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &SaeGradients) {
        axpy(1.0, other.w_enc.as_slice(), self.w_enc.as_mut_slice());
        axpy(1.0, &other.b_enc, &mut self.b_enc);
        axpy(1.0, other.w_dec.as_slice(), self.w_dec.as_mut_slice());
        axpy(1.0, &other.b_dec, &mut self.b_dec);
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.tensors_mut() {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w_enc.as_slice(), &self.b_enc, self.w_dec.as_slice(), &self.b_dec]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_enc.as_mut_slice(),
            &mut self.b_enc,
            self.w_dec.as_mut_slice(),
            &mut self.b_dec,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Sparse code: `(feature_index, activation)` pairs with strictly
/// increasing indices. Coordinates not listed are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseLatent {
    entries: Vec<(usize, f64)>,
    latent_dim: usize,
}

impl SparseLatent {
    pub fn new(entries: Vec<(usize, f64)>, latent_dim: usize) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::invalid("latent indices must be strictly increasing"));
            }
        }
        if let Some(&(j, _)) = entries.last() {
            if j >= latent_dim {
                return Err(Error::invalid(format!(
                    "feature index {j} out of range for latent dimension {latent_dim}"
                )));
            }
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid("non-finite activation"));
        }
        Ok(SparseLatent { entries, latent_dim })
    }

    pub fn empty(latent_dim: usize) -> Self {
        SparseLatent {
            entries: Vec::new(),
            latent_dim,
        }
    }

    /// Keeps the non-zero coordinates of a dense vector.
    pub fn from_dense(values: &[f64]) -> Result<Self> {
        let entries = values
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .collect();
        SparseLatent::new(entries, values.len())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, feature: usize) -> Option<f64> {
        self.entries
            .binary_search_by_key(&feature, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.latent_dim];
        for &(j, v) in &self.entries {
            out[j] = v;
        }
        out
    }

    /// Sparse dot product by merge join over the two supports.
    pub fn dot(&self, other: &SparseLatent) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.entries.len() && j < other.entries.len() {
            let (a, b) = (self.entries[i], other.entries[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a.1 * b.1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// Feature with the largest activation (lower index on ties).
    pub fn argmax(&self) -> Option<usize> {
        self.entries
            .iter()
            .copied()
            .min_by(|a, b| crate::numerics::rank_order(*a, *b))
            .map(|e| e.0)
    }

    pub(crate) fn entries_mut(&mut self) -> &mut Vec<(usize, f64)> {
        &mut self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_params(d: usize, n: usize, k: usize, seed: u64) -> SaeParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r, c| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let w_enc = m(n, d);
        let w_dec = m(n, d);
        let b = m(2, n.max(d));
        SaeParams::new(
            w_enc,
            b.row(0)[..n].to_vec(),
            w_dec,
            b.row(1)[..d].to_vec(),
            k,
        )
        .unwrap()
    }

    fn small_params(k: usize) -> SaeParams {
        let w_enc = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        SaeParams::new(w_enc.clone(), vec![0.0; 3], w_enc, vec![0.0; 2], k).unwrap()
    }

    #[test]
    fn encode_examples() {
        let p = small_params(1);
        let h = p.encode(&[2.0, 1.0]).unwrap();
        assert_eq!(h.entries(), &[(2, 3.0)]);
        let p3 = small_params(3);
        let h = p3.encode(&[0.0, 0.0]).unwrap();
        assert_eq!(h.entries(), &[(0, 0.0), (1, 0.0), (2, 0.0)]);
        assert!(p.encode(&[1.0]).is_err());
    }

    #[test]
    fn encode_matches_dense_oracle() {
        let p = random_params(4, 8, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            // oracle: full z, sort descending by (value, -index)
            let mut z = Vec::new();
            for j in 0..8 {
                let mut s = p.b_enc()[j];
                for i in 0..4 {
                    s += p.w_enc().get(j, i) * (x[i] - p.b_dec()[i]);
                }
                z.push((j, s));
            }
            z.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut want: Vec<usize> = z[..2].iter().map(|e| e.0).collect();
            want.sort();
            let got: Vec<usize> = p.encode(&x).unwrap().entries().iter().map(|e| e.0).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn encode_batch_is_bitwise_per_row() {
        let p = random_params(5, 12, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = Matrix::from_vec(7, 5, (0..35).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let batch = p.encode_batch(&xs).unwrap();
        for (r, h) in batch.iter().enumerate() {
            assert_eq!(h, &p.encode(xs.row(r)).unwrap());
        }
    }

    #[test]
    fn decode_examples() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let p = SaeParams::new(w.clone(), vec![0.0; 2], w.clone(), vec![1.0, 2.0], 1).unwrap();
        assert_eq!(&*p.decode(&SparseLatent::empty(2)).unwrap(), &[1.0, 2.0]);

        let p0 = SaeParams::new(w.clone(), vec![0.0; 2], w, vec![0.0; 2], 1).unwrap();
        let h = SparseLatent::new(vec![(0, 2.0)], 2).unwrap();
        assert_eq!(&*p0.decode(&h).unwrap(), &[2.0, 0.0]);

        let bad = SparseLatent::new(vec![(0, 1.0)], 3).unwrap();
        assert!(p0.decode(&bad).is_err());
    }

    #[test]
    fn decode_matches_dense_oracle() {
        let p = random_params(6, 10, 3, 5);
        let h = SparseLatent::new(vec![(1, 0.5), (4, -1.25), (9, 2.0)], 10).unwrap();
        let full = h.to_dense();
        let got = p.decode(&h).unwrap();
        for i in 0..6 {
            let mut s = p.b_dec()[i];
            for j in 0..10 {
                s += p.decoder_column(j)[i] * full[j];
            }
            assert!((got[i] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_fixed_point_and_zero_model() {
        // b_dec = x and zero weights: z = 0 at x, x̂ = x
        let x = vec![0.3, -0.7, 1.1];
        let zeros = Matrix::zeros(4, 3);
        let p = SaeParams::new(zeros.clone(), vec![0.0; 4], zeros.clone(), x.clone(), 2).unwrap();
        assert_eq!(&*p.reconstruct(&x).unwrap().1, x.as_slice());

        let z = SaeParams::new(zeros.clone(), vec![0.0; 4], zeros, vec![0.0; 3], 2).unwrap();
        assert_eq!(&*z.reconstruct(&[5.0, 6.0, 7.0]).unwrap().1, &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_zero_upstream() {
        let p = random_params(3, 5, 2, 1);
        let x = [0.1, 0.2, 0.3];
        let h = p.encode(&x).unwrap();
        let (g, gx) = p.backward(&x, &h, &[0.0; 3]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(gx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_scalar_chain_rule() {
        // d = n = k = 1: x̂ = wd * (we * (x - bd) + be) + bd
        let (we, be, wd, bd, x, g) = (0.7, 0.2, -1.3, 0.4, 1.5, 2.0);
        let p = SaeParams::new(
            Matrix::from_vec(1, 1, vec![we]).unwrap(),
            vec![be],
            Matrix::from_vec(1, 1, vec![wd]).unwrap(),
            vec![bd],
            1,
        )
        .unwrap();
        let h = p.encode(&[x]).unwrap();
        let (gr, gx) = p.backward(&[x], &h, &[g]).unwrap();
        let hval = we * (x - bd) + be;
        assert!((gr.w_dec.get(0, 0) - g * hval).abs() < 1e-15);
        assert!((gr.b_enc[0] - g * wd).abs() < 1e-15);
        assert!((gr.w_enc.get(0, 0) - g * wd * (x - bd)).abs() < 1e-15);
        assert!((gr.b_dec[0] - g * (1.0 - wd * we)).abs() < 1e-15);
        assert!((gx[0] - g * wd * we).abs() < 1e-15);
    }

    #[test]
    fn backward_rejects_stale_latent() {
        let p = random_params(3, 5, 2, 1);
        let h = SparseLatent::new(vec![(6, 1.0)], 7).unwrap();
        assert!(p.backward(&[0.0; 3], &h, &[1.0; 3]).is_err());
    }

    #[test]
    fn unselected_rows_get_zero_gradient_and_do_not_affect_output() {
        let mut p = random_params(4, 9, 2, 7);
        let x = [0.5, -0.2, 0.9, 0.1];
        let h = p.encode(&x).unwrap();
        let (g, _) = p.backward(&x, &h, &[1.0, -1.0, 0.5, 2.0]).unwrap();
        let active: Vec<usize> = h.entries().iter().map(|e| e.0).collect();
        let xhat = p.decode(&h).unwrap();
        for j in 0..9 {
            if active.contains(&j) {
                continue;
            }
            assert!(g.w_enc.row(j).iter().all(|v| *v == 0.0));
            assert!(g.w_dec.row(j).iter().all(|v| *v == 0.0));
            assert_eq!(g.b_enc[j], 0.0);
            // pushing an inactive feature further down cannot change the output
            let centered: Vec<f64> = x.iter().zip(p.b_dec()).map(|(a, b)| a - b).collect();
            axpy(-0.1, &centered, p.w_enc.row_mut(j));
        }
        assert_eq!(*p.decode(&p.encode(&x).unwrap()).unwrap(), *xhat);
    }

    #[test]
    fn sparse_latent_validation() {
        assert!(SparseLatent::new(vec![(2, 1.0), (1, 1.0)], 4).is_err());
        assert!(SparseLatent::new(vec![(1, 1.0), (1, 2.0)], 4).is_err());
        assert!(SparseLatent::new(vec![(4, 1.0)], 4).is_err());
        assert!(SparseLatent::new(vec![(0, f64::NAN)], 4).is_err());
        let a = SparseLatent::new(vec![(0, 1.0), (3, 2.0)], 4).unwrap();
        let b = SparseLatent::new(vec![(1, 5.0), (3, 0.5)], 4).unwrap();
        assert_eq!(a.dot(&b), 1.0);
        assert_eq!(a.argmax(), Some(3));
    }

    #[test]
    fn init_is_tied_and_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s1 = [1.0, 2.0, 3.0];
        let s2 = [3.0, 2.0, 1.0];
        let p = SaeParams::init(3, 6, 2, &[&s1, &s2], &mut rng).unwrap();
        assert_eq!(p.w_enc(), p.w_dec_columns());
        assert_eq!(p.b_dec(), &[2.0, 2.0, 2.0]);
        for j in 0..6 {
            let c = p.decoder_column(j);
            assert!((dot(c, c) - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn exact_sparsity(d in 1usize..8, n in 1usize..16, kk in 1usize..6, seed in any::<u64>()) {
            let k = kk.min(n);
            let p = random_params(d, n, k, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            prop_assert_eq!(p.encode(&x).unwrap().nnz(), k.min(n));
        }

        #[test]
        fn decode_is_affine(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let p = random_params(5, 8, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
            let mut h1 = vec![0.0; 8];
            let mut h2 = vec![0.0; 8];
            for _ in 0..3 {
                h1[rng.random_range(0..8)] = rng.random_range(-1.0..1.0);
                h2[rng.random_range(0..8)] = rng.random_range(-1.0..1.0);
            }
            let mix: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = p.decode(&SparseLatent::from_dense(&mix).unwrap()).unwrap();
            let d1 = p.decode(&SparseLatent::from_dense(&h1).unwrap()).unwrap();
            let d2 = p.decode(&SparseLatent::from_dense(&h2).unwrap()).unwrap();
            for i in 0..5 {
                let rhs = alpha * d1[i] + beta * d2[i] - (alpha + beta - 1.0) * p.b_dec()[i];
                prop_assert!((lhs[i] - rhs).abs() < 1e-10);
            }
        }
    }
}
