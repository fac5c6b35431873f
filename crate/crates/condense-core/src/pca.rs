//! PCA compression baseline: project onto the top principal directions of
//! the centered document matrix.
//!
//! The fit computes a singular value decomposition of the centered data
//! itself rather than an eigendecomposition of its covariance, which
//! squares the condition number. Tall matrices go through a QR step first:
//! the right singular vectors of R equal those of the full matrix, and R
//! is only dimension x dimension.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::store::EmbeddingStore;

/// Mean vector plus an orthonormal row basis of principal directions,
/// ordered by descending singular value.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: DenseMatrix,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    /// components · (x − mean)
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dimension("pca input", self.input_dim(), x.len()));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.components.mat_vec(&centered)
    }

    /// mean + componentsᵀ · code; exact on data lying in the retained
    /// subspace, best l2 approximation otherwise.
    pub fn reconstruct(&self, code: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.components.tr_mat_vec(code)?;
        for (v, m) in x.iter_mut().zip(&self.mean) {
            *v += m;
        }
        Ok(x)
    }
}

/// Fit PCA on document embeddings only. `target_dim` may not exceed the
/// embedding dimension, nor the row count when that is smaller (a thin
/// SVD of n rows yields n right singular vectors).
pub fn pca_fit(doc_store: &EmbeddingStore, target_dim: usize) -> Result<PcaModel> {
    let n = doc_store.len();
    let k = doc_store.dimension();
    if n < 2 {
        return Err(Error::EmptyInput("pca fit needs at least 2 rows"));
    }
    if target_dim == 0 || target_dim > k {
        return Err(Error::dimension("pca target_dim", k, target_dim));
    }

    let mut mean = vec![0.0; k];
    for i in 0..n {
        for (acc, v) in mean.iter_mut().zip(doc_store.row(i)) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }

    let centered = DMatrix::from_fn(n, k, |i, j| doc_store.matrix().get(i, j) - mean[j]);
    let svd_input = if n > k {
        centered.qr().r()
    } else {
        centered
    };
    let svd = SVD::new(svd_input, false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let available = v_t.nrows();
    if target_dim > available {
        return Err(Error::dimension("pca target_dim", available, target_dim));
    }

    let mut order: Vec<usize> = (0..available).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut components = DenseMatrix::zeros(target_dim, k);
    for (out_row, &src) in order.iter().take(target_dim).enumerate() {
        let row = components.row_mut(out_row);
        for j in 0..k {
            row[j] = v_t[(src, j)];
        }
        let lead = row
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.abs().total_cmp(&b.abs()).then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .unwrap();
        if row[lead] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }
    Ok(PcaModel { mean, components })
}
