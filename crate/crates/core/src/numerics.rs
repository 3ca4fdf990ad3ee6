//! Dense linear-algebra kernels: thin SVD, Moore-Penrose pseudoinverse and PCA.
//!
//! The SVD is one-sided Jacobi on the triangular factor of a Householder QR.
//! nalgebra's own Golub-Kahan SVD is not used: on rank-deficient inputs its
//! result depends strongly on the deflation threshold (relative errors from
//! 1e-9 up to 1e-4 were observed), while Jacobi is accurate to a few ulps.

use nalgebra::DMatrix;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin singular value decomposition `M = U diag(s) V^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Matrix,
    /// Non-increasing, nonnegative.
    pub singular_values: Vector,
    /// `cols x k` with orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        &self.u * Matrix::from_diagonal(&self.singular_values) * self.v.transpose()
    }

    /// Number of singular values strictly above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }

    /// Rank tolerance used when the caller gives none: `max(rows, cols) * s_1 * eps`.
    pub fn default_tolerance(&self) -> f64 {
        let dim = self.u.nrows().max(self.v.nrows()) as f64;
        let s1 = self.singular_values.iter().copied().fold(0.0, f64::max);
        dim * s1 * f64::EPSILON
    }
}

fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidArgument(format!("{what}: empty matrix")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what}: non-finite entry")));
    }
    Ok(())
}

pub fn thin_svd(m: &Matrix) -> Result<SvdResult> {
    check_finite(m, "thin_svd")?;
    if m.nrows() < m.ncols() {
        let t = tall_svd(&m.transpose())?;
        return Ok(SvdResult { u: t.v, singular_values: t.singular_values, v: t.u });
    }
    tall_svd(m)
}

fn tall_svd(m: &Matrix) -> Result<SvdResult> {
    let (rows, n) = m.shape();
    let (q, mut w) = if rows > n {
        let qr = m.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, m.clone())
    };
    let mut v = Matrix::identity(n, n);
    // Columns below this squared norm are numerically zero; rotating them only churns rounding noise.
    let negligible = (w.norm() * f64::EPSILON).powi(2);
    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for r in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(r).norm_squared();
                let gamma = w.column(p).dot(&w.column(r));
                if alpha.min(beta) <= negligible || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, r, c, s);
                rotate(&mut v, p, r, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "Jacobi SVD of {rows}x{n} matrix did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }
    let norms: Vec<f64> = w.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let singular_values = Vector::from_iterator(n, order.iter().map(|&j| norms[j]));
    let tiny = norms.iter().copied().fold(0.0, f64::max) * f64::EPSILON * n as f64;
    let wr = w.nrows();
    let mut u_small = Matrix::zeros(wr, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        v_sorted.set_column(k, &v.column(j));
        if norms[j] > tiny && norms[j] > 0.0 {
            u_small.set_column(k, &(w.column(j) / norms[j]));
        } else {
            missing.push(k);
        }
    }
    complete_orthonormal(&mut u_small, &missing);
    let u = match q {
        Some(q) => q * u_small,
        None => u_small,
    };
    Ok(SvdResult { u, singular_values, v: v_sorted })
}

fn rotate(m: &mut Matrix, p: usize, r: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, r)];
        m[(i, p)] = c * a - s * b;
        m[(i, r)] = s * a + c * b;
    }
}

/// Fills the listed columns with unit vectors orthogonal to all other columns.
fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    let mut filled: Vec<usize> = (0..u.ncols()).filter(|k| !missing.contains(k)).collect();
    let mut e = 0;
    for &k in missing {
        while e < u.nrows() {
            let mut cand = Vector::zeros(u.nrows());
            cand[e] = 1.0;
            e += 1;
            // Two passes of Gram-Schmidt keep the completion orthogonal to working precision.
            for _ in 0..2 {
                for &j in &filled {
                    let proj = u.column(j).dot(&cand);
                    cand -= u.column(j) * proj;
                }
            }
            let norm = cand.norm();
            if norm > 0.5 {
                u.set_column(k, &(cand / norm));
                filled.push(k);
                break;
            }
        }
    }
}

/// Moore-Penrose pseudoinverse; singular values `<= tol` are treated as zero.
/// `None` selects [`SvdResult::default_tolerance`].
pub fn pseudoinverse(m: &Matrix, tol: Option<f64>) -> Result<Matrix> {
    if let Some(t) = tol {
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("pseudoinverse tolerance {t} < 0")));
        }
    }
    let svd = thin_svd(m)?;
    let tol = tol.unwrap_or_else(|| svd.default_tolerance());
    let inv: Vector = svd
        .singular_values
        .map(|s| if s > tol { 1.0 / s } else { 0.0 });
    Ok(&svd.v * Matrix::from_diagonal(&inv) * svd.u.transpose())
}

/// Principal component analysis of the rows of a data matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pca {
    /// `n x k`, one principal direction per column, `k = min(m, n)`.
    #[serde(with = "crate::serde_mat::matrix")]
    pub components: Matrix,
    #[serde(with = "crate::serde_mat::vector")]
    pub singular_values: Vector,
    #[serde(with = "crate::serde_mat::vector")]
    pub explained_variance_fractions: Vector,
    /// Column means (zero when centering is disabled).
    #[serde(with = "crate::serde_mat::vector")]
    pub mean: Vector,
    pub centered: bool,
}

impl Pca {
    /// Centered score of `row` along component `c`.
    pub fn score(&self, row: &Vector, c: usize) -> f64 {
        (row - &self.mean).dot(&self.components.column(c))
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }
}

pub fn pca(data: &Matrix, center: bool) -> Result<Pca> {
    if data.nrows() < 2 {
        return Err(Error::InsufficientData(format!(
            "PCA needs at least 2 rows, got {}",
            data.nrows()
        )));
    }
    check_finite(data, "pca")?;
    let n = data.ncols();
    let mean = if center {
        Vector::from_iterator(n, data.column_iter().map(|c| c.mean()))
    } else {
        Vector::zeros(n)
    };
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = thin_svd(&centered)?;
    let mut components = svd.v;
    // Sign convention: the largest-magnitude entry of each direction is positive.
    for mut col in components.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    let energy: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let explained = if energy > 0.0 {
        svd.singular_values.map(|s| s * s / energy)
    } else {
        Vector::zeros(svd.singular_values.len())
    };
    Ok(Pca {
        components,
        singular_values: svd.singular_values,
        explained_variance_fractions: explained,
        mean,
        centered: center,
    })
}
