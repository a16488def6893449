//! PCA-whitening of teacher embeddings.
//!
//! A transform is fitted once on (L2-normalized) training embeddings and then
//! frozen: `u = W (x - b)` with `W = diag(Λ)^(-1/2) Uᵀ` restricted to the top
//! `n_c` eigenpairs of the training covariance.

use crate::error::{Error, Result};
use crate::tensor::{self, Matrix};

/// Default relative threshold for counting significant eigenvalues.
pub const DEFAULT_EPS_REL: f64 = 1e-6;

const RANK_DEFICIENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    mean: Vec<f64>,
    projection: Matrix,
    spectrum: Vec<f64>,
    significant: usize,
    warning: bool,
}

impl WhiteningTransform {
    /// Reassembles a transform from stored parts, checking that the shapes agree.
    pub fn from_parts(
        mean: Vec<f64>,
        projection: Matrix,
        spectrum: Vec<f64>,
        significant: usize,
        warning: bool,
    ) -> Result<Self> {
        let n_t = mean.len();
        if projection.cols() != n_t || spectrum.len() != n_t {
            return Err(Error::DimMismatch {
                expected: n_t,
                got: projection.cols(),
            });
        }
        if projection.rows() > n_t || significant > n_t {
            return Err(Error::BadConfig(format!(
                "n_c={} s_sig={significant} exceed n_t={n_t}",
                projection.rows()
            )));
        }
        Ok(Self {
            mean,
            projection,
            spectrum,
            significant,
            warning,
        })
    }

    /// `W = I`, `b = 0`.
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            projection: Matrix::identity(n),
            spectrum: vec![1.0; n],
            significant: n,
            warning: false,
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Number of eigenvalues at or above `eps_rel * λ₁`.
    pub fn significant_count(&self) -> usize {
        self.significant
    }

    /// Set when `n_c` exceeds the significant rank of the fitting data.
    pub fn warning(&self) -> bool {
        self.warning
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.projection.rows()
    }
}

/// Counts `λᵢ ≥ eps_rel · λ₁`; tiny negative eigenvalues count as zero.
pub fn significant_components(spectrum: &[f64], eps_rel: f64) -> Result<usize> {
    let first = *spectrum.first().ok_or(Error::EmptySpectrum)?;
    let top = first.max(0.0);
    if top <= 0.0 {
        return Ok(0);
    }
    let cut = eps_rel * top;
    Ok(spectrum.iter().filter(|&&l| l.max(0.0) >= cut).count())
}

pub fn fit_pca_whitening(train: &Matrix, n_c: usize, eps_rel: f64) -> Result<WhiteningTransform> {
    let n_t = train.cols();
    if n_c == 0 || n_c > n_t {
        return Err(Error::BadConfig(format!("n_c={n_c} must be in 1..={n_t}")));
    }
    if !(eps_rel > 0.0 && eps_rel < 1.0) {
        return Err(Error::BadConfig(format!("eps_rel={eps_rel} must be in (0, 1)")));
    }
    if train.rows() < n_c + 1 {
        return Err(Error::TooFewSamples {
            needed: n_c + 1,
            got: train.rows(),
        });
    }

    let mean = tensor::column_mean(train)?;
    let cov = tensor::covariance(train)?;
    let eig = tensor::sym_eig_desc(&cov)?;
    let top = eig.eigenvalues[0];
    if top <= RANK_DEFICIENT {
        return Err(Error::RankDeficient(top));
    }
    let significant = significant_components(&eig.eigenvalues, eps_rel)?;

    // Directions past the significant rank get a floored eigenvalue so the
    // projection stays finite.
    let floor = top * f64::EPSILON;
    let mut projection = Matrix::zeros(n_c, n_t);
    for k in 0..n_c {
        let scale = 1.0 / eig.eigenvalues[k].max(floor).sqrt();
        let row = projection.row_mut(k);
        for (j, w) in row.iter_mut().enumerate() {
            *w = eig.eigenvectors.get(j, k) * scale;
        }
    }

    Ok(WhiteningTransform {
        mean,
        projection,
        spectrum: eig.eigenvalues,
        significant,
        warning: n_c > significant,
    })
}

/// Rows `W (xᵢ − b)`.
pub fn apply_whitening(t: &WhiteningTransform, x: &Matrix) -> Result<Matrix> {
    if x.cols() != t.input_dim() {
        return Err(Error::DimMismatch {
            expected: t.input_dim(),
            got: x.cols(),
        });
    }
    let n_c = t.output_dim();
    let mut out = Matrix::zeros(x.rows(), n_c);
    let mut centered = vec![0.0; t.input_dim()];
    for i in 0..x.rows() {
        for ((c, v), b) in centered.iter_mut().zip(x.row(i)).zip(&t.mean) {
            *c = v - b;
        }
        let orow = out.row_mut(i);
        for (k, o) in orow.iter_mut().enumerate() {
            *o = tensor::dot(t.projection.row(k), &centered);
        }
    }
    Ok(out)
}

/// L2-normalize, whiten, L2-normalize again.
pub fn whiten_pipeline(t: &WhiteningTransform, x: &Matrix) -> Result<Matrix> {
    let normalized = tensor::l2_normalize_rows(x)?;
    tensor::l2_normalize_rows(&apply_whitening(t, &normalized)?)
}

/// Fits on the normalized rows of `train`, as the pipeline expects.
pub fn fit_normalized(train: &Matrix, n_c: usize, eps_rel: f64) -> Result<WhiteningTransform> {
    fit_pca_whitening(&tensor::l2_normalize_rows(train)?, n_c, eps_rel)
}
