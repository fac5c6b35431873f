//! Dense linear-algebra kernels and probability utilities.
//!
//! All math runs in f64. Reductions use a fixed 8-lane striped order: results
//! are deterministic for a given input on any platform, and the stripes keep
//! the hot loops free of a single serial dependency chain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const LANES: usize = 8;

/// Combine 8 stripe accumulators in a fixed tree order.
#[inline]
fn fold_lanes(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Dot product with a fixed summation order. Callers must have checked that
/// the slices have equal length.
#[inline]
pub(crate) fn dot_unchecked(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = [0.0f64; LANES];
    let mut cu = u.chunks_exact(LANES);
    let mut cv = v.chunks_exact(LANES);
    for (a, b) in (&mut cu).zip(&mut cv) {
        for l in 0..LANES {
            acc[l] += a[l] * b[l];
        }
    }
    for (l, (a, b)) in cu.remainder().iter().zip(cv.remainder()).enumerate() {
        acc[l] += a * b;
    }
    fold_lanes(acc)
}

/// Striped sum with the same fixed order as [`dot_unchecked`].
pub(crate) fn sum_fixed(values: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut chunks = values.chunks_exact(LANES);
    for c in &mut chunks {
        for l in 0..LANES {
            acc[l] += c[l];
        }
    }
    for (l, v) in chunks.remainder().iter().enumerate() {
        acc[l] += v;
    }
    fold_lanes(acc)
}

/// Dot product of two vectors of equal dimension.
pub fn dot(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dimension("dot", u.len(), v.len()));
    }
    if u.is_empty() {
        return Err(Error::EmptyInput("dot of zero-dimensional vectors"));
    }
    Ok(dot_unchecked(u, v))
}

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension("matrix storage", rows * cols, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::format("matrix contains non-finite values"));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// `self · x` for a column vector `x` of length `cols`.
    pub fn mat_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dimension("mat_vec", self.cols, x.len()));
        }
        Ok((0..self.rows)
            .map(|i| dot_unchecked(self.row(i), x))
            .collect())
    }

    /// `selfᵀ · x` for a column vector `x` of length `rows`. Accumulates
    /// scaled rows so the access pattern stays row-major.
    pub fn tr_mat_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::dimension("tr_mat_vec", self.rows, x.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(self.row(i)) {
                *o += xi * r;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self += alpha · u vᵀ` where `u` has length `rows` and `v` length `cols`.
    pub fn add_scaled_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != self.rows {
            return Err(Error::dimension("outer product rows", self.rows, u.len()));
        }
        if v.len() != self.cols {
            return Err(Error::dimension("outer product cols", self.cols, v.len()));
        }
        for (i, &ui) in u.iter().enumerate() {
            let s = alpha * ui;
            if s == 0.0 {
                continue;
            }
            for (r, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *r += s * vj;
            }
        }
        Ok(())
    }

    /// Elementwise `self += other`, used when accumulating gradients.
    pub fn add_assign(&mut self, other: &DenseMatrix) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot_unchecked(&self.data, &self.data).sqrt()
    }
}

/// Numerically stable softmax via max subtraction. Output sums to 1 and stays
/// finite for scores up to magnitude 1e4 and beyond.
pub fn softmax_stable(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("softmax of empty score list"));
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::format("softmax input contains non-finite score"));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total = sum_fixed(&exps);
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Log-softmax with the same shift; used where downstream code takes logs.
pub fn log_softmax_stable(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("log-softmax of empty score list"));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let log_total = sum_fixed(&exps).ln();
    Ok(scores.iter().map(|&s| s - max - log_total).collect())
}

/// The crate-wide seeded generator. ChaCha8 is fully specified by its seed,
/// so every run of the toolkit reproduces across platforms.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent sub-seed from a base seed and a stream index
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fill a slice with standard normal samples.
pub fn fill_gaussian(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}

/// A `rows × cols` matrix with orthonormal columns, from the QR of a seeded
/// Gaussian matrix (modified Gram-Schmidt with one re-orthogonalization
/// pass). Requires `rows ≥ cols`.
pub fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> Result<DenseMatrix> {
    if rows < cols {
        return Err(Error::dimension("random_orthonormal rows", cols, rows));
    }
    if cols == 0 {
        return Err(Error::EmptyInput("random_orthonormal with zero columns"));
    }
    let mut rng = seeded_rng(seed);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for _ in 0..cols {
        let mut attempts = 0;
        loop {
            let mut v = vec![0.0; rows];
            fill_gaussian(&mut rng, &mut v);
            // Two MGS passes push residual overlap below 1e-10 even for
            // ill-conditioned draws.
            for _ in 0..2 {
                for q in &columns {
                    let c = dot_unchecked(q, &v);
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= c * qi;
                    }
                }
            }
            let norm = dot_unchecked(&v, &v).sqrt();
            if norm > 1e-8 {
                for vi in &mut v {
                    *vi /= norm;
                }
                columns.push(v);
                break;
            }
            attempts += 1;
            if attempts > 16 {
                return Err(Error::Config(
                    "random_orthonormal failed to find independent directions".into(),
                ));
            }
        }
    }
    let mut m = DenseMatrix::zeros(rows, cols);
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            m.set(i, j, v);
        }
    }
    Ok(m)
}
