//! SVD-based pseudo-inverse and least squares with relative truncation.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectrum summary of a truncated decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvdSummary {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub sigma_max: f64,
    /// Smallest singular value, truncated or not.
    pub sigma_min: f64,
}

impl SvdSummary {
    /// `sigma_max / sigma_min` over the full spectrum (infinite when singular).
    pub fn condition(&self) -> f64 {
        if self.sigma_min > 0.0 {
            self.sigma_max / self.sigma_min
        } else {
            f64::INFINITY
        }
    }
}

/// Thin SVD restricted to the singular values above `rel_tol * sigma_max`.
pub(crate) struct TruncatedSvd {
    pub u: Mat<Complex64>,
    pub s: Vec<f64>,
    pub v: Mat<Complex64>,
    pub summary: SvdSummary,
}

pub(crate) fn par() -> Par {
    faer::get_global_parallelism()
}

pub(crate) fn truncated_svd(m: MatRef<'_, Complex64>, rel_tol: f64) -> Result<TruncatedSvd> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let empty = |sigma_max: f64| TruncatedSvd {
        u: Mat::zeros(rows, 0),
        s: Vec::new(),
        v: Mat::zeros(cols, 0),
        summary: SvdSummary { rows, cols, rank: 0, sigma_max, sigma_min: 0.0 },
    };
    if rows == 0 || cols == 0 {
        return Ok(empty(0.0));
    }
    let svd = m.thin_svd().map_err(|e| Error::Numerical {
        stage: "svd",
        detail: format!("{rows} x {cols} SVD did not converge: {e:?}"),
    })?;
    let s: Vec<f64> = svd.S().column_vector().iter().map(|v| v.re).collect();
    let sigma_max = s[0];
    let sigma_min = *s.last().unwrap();
    if !sigma_max.is_finite() {
        return Err(Error::Numerical { stage: "svd", detail: "non-finite singular value".into() });
    }
    if sigma_max == 0.0 {
        return Ok(empty(0.0));
    }
    let rank = s.iter().take_while(|&&v| v > rel_tol * sigma_max).count();
    Ok(TruncatedSvd {
        u: svd.U().subcols(0, rank).to_owned(),
        s: s[..rank].to_vec(),
        v: svd.V().subcols(0, rank).to_owned(),
        summary: SvdSummary { rows, cols, rank, sigma_max, sigma_min },
    })
}

impl TruncatedSvd {
    /// `V S^-1 U^H b` for every column of `b`.
    pub fn apply_pinv(&self, b: MatRef<'_, Complex64>) -> Mat<Complex64> {
        let mut w = Mat::<Complex64>::zeros(self.s.len(), b.ncols());
        matmul(w.as_mut(), Accum::Replace, self.u.adjoint(), b, Complex64::new(1.0, 0.0), par());
        for (i, s) in self.s.iter().enumerate() {
            let inv = 1.0 / s;
            for j in 0..w.ncols() {
                w[(i, j)] *= inv;
            }
        }
        let mut out = Mat::<Complex64>::zeros(self.v.nrows(), b.ncols());
        matmul(out.as_mut(), Accum::Replace, self.v.as_ref(), w.as_ref(), Complex64::new(1.0, 0.0), par());
        out
    }
}

/// Moore-Penrose pseudo-inverse, dropping singular values below `rel_tol * sigma_max`.
pub fn pseudo_inverse(m: MatRef<'_, Complex64>, rel_tol: f64) -> Result<Mat<Complex64>> {
    check_tol(rel_tol)?;
    let t = truncated_svd(m, rel_tol)?;
    let mut scaled = t.u.adjoint().to_owned();
    for (i, s) in t.s.iter().enumerate() {
        for j in 0..scaled.ncols() {
            scaled[(i, j)] /= *s;
        }
    }
    let mut out = Mat::zeros(m.ncols(), m.nrows());
    matmul(out.as_mut(), Accum::Replace, t.v.as_ref(), scaled.as_ref(), Complex64::new(1.0, 0.0), par());
    Ok(out)
}

fn check_tol(rel_tol: f64) -> Result<()> {
    if rel_tol > 0.0 && rel_tol < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("rel_tol must lie in (0, 1), got {rel_tol}")))
    }
}

/// Column norms of `m x - b`.
pub(crate) fn residual_norms(
    m: MatRef<'_, Complex64>,
    x: MatRef<'_, Complex64>,
    b: MatRef<'_, Complex64>,
) -> Vec<f64> {
    let mut r = b.to_owned();
    matmul(r.as_mut(), Accum::Add, m, x, Complex64::new(-1.0, 0.0), par());
    (0..r.ncols()).map(|j| r.col(j).norm_l2()).collect()
}

/// Truncated-SVD least squares for several right-hand sides at once.
pub fn least_squares_multi(
    m: MatRef<'_, Complex64>,
    b: MatRef<'_, Complex64>,
    rel_tol: f64,
) -> Result<(Mat<Complex64>, Vec<f64>, SvdSummary)> {
    check_tol(rel_tol)?;
    if m.nrows() != b.nrows() {
        return Err(Error::Domain(format!(
            "matrix has {} rows but the right-hand side has {}",
            m.nrows(),
            b.nrows()
        )));
    }
    let t = truncated_svd(m, rel_tol)?;
    let x = t.apply_pinv(b);
    let res = residual_norms(m, x.as_ref(), b);
    Ok((x, res, t.summary))
}

/// Minimizes `|m x - rhs|` by truncated SVD; returns `x` and the residual norm.
pub fn least_squares(
    m: MatRef<'_, Complex64>,
    rhs: &[Complex64],
    rel_tol: f64,
) -> Result<(Vec<Complex64>, f64)> {
    let b = faer::ColRef::from_slice(rhs).as_mat();
    let (x, res, _) = least_squares_multi(m, b, rel_tol)?;
    Ok((x.col(0).iter().copied().collect(), res[0]))
}
