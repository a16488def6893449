//! Dense row-major matrices and the handful of linear-algebra routines the
//! rest of the crate is built on: row normalization, column statistics,
//! products and a cyclic Jacobi eigensolver for symmetric matrices.

use crate::error::{Error, Result};

/// Rows whose Euclidean norm is at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-9;
const JACOBI_REL_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major `f64` matrix. Rows are items, columns are features.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn scaled(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let n = norm(row);
        if n <= ZERO_NORM || !n.is_finite() {
            return Err(Error::ZeroRow(i));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

pub fn column_mean(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut mean = vec![0.0; m.cols];
    for row in m.iter_rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let n = m.rows as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    Ok(mean)
}

/// Population covariance (divides by the number of rows) of mean-centered data.
pub fn covariance(m: &Matrix) -> Result<Matrix> {
    if m.rows < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: m.rows,
        });
    }
    let mean = column_mean(m)?;
    let d = m.cols;
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in m.iter_rows() {
        for ((c, v), mu) in centered.iter_mut().zip(row).zip(&mean) {
            *c = v - mu;
        }
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            let out = &mut cov.data[a * d..a * d + d];
            for b in a..d {
                out[b] += ca * centered[b];
            }
        }
    }
    let n = m.rows as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov.get(a, b) / n;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    Ok(cov)
}

/// Matrix product `a * b`.
pub fn gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} * {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `a * bᵀ`, i.e. all pairwise row dot products.
pub fn gemm_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} * ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(Matrix::from_fn(a.rows, b.rows, |i, j| dot(a.row(i), b.row(j))))
}

/// Eigen-system of a symmetric matrix, eigenvalues sorted descending.
/// Column `k` of `eigenvectors` pairs with `eigenvalues[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    /// `U diag(Λ) Uᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let u = &self.eigenvectors;
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| u.get(i, k) * self.eigenvalues[k] * u.get(j, k))
                .sum()
        })
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps until the largest off-diagonal magnitude drops below
/// `1e-12 * ‖m‖_F` or 100 sweeps have run. Each eigenvector is sign-fixed so
/// its largest-magnitude component is non-negative.
pub fn sym_eig_desc(m: &Matrix) -> Result<EigenDecomposition> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((m.get(i, j) - m.get(j, i)).abs());
        }
    }
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }

    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let mut v = Matrix::identity(n);
    let threshold = JACOBI_REL_TOL * a.frobenius_norm();

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a.get(p, q).abs());
            }
        }
        if off <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a.set(k, p, new_kp);
                    a.set(p, k, new_kp);
                    a.set(k, q, new_kq);
                    a.set(q, k, new_kq);
                }
                a.set(p, p, a.get(p, p) - t * apq);
                a.set(q, q, a.get(q, q) + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)).then(i.cmp(&j)));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| a.get(k, k)).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut lead = 0.0_f64;
        for k in 0..n {
            let x = v.get(k, src);
            if x.abs() > lead.abs() {
                lead = x;
            }
        }
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            eigenvectors.set(k, dst, sign * v.get(k, src));
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}
