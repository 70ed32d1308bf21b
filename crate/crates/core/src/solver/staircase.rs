//! Least squares for block-bidiagonal systems by column-pivoted QR, one column block at a time.
//!
//! Row block `j` couples column blocks `j` and `j + 1` (only `j` for the last block). Each stage
//! factors the rows that touch column block `j`, keeps the leading `rank` rows for
//! back-substitution and carries the remaining rows, which only involve block `j + 1`, into the
//! next stage. Columns beyond the numerical rank are set to zero (a basic solution).

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::householder;
use faer::linalg::matmul::matmul;
use faer::linalg::qr::col_pivoting::factor as cpqr;
use faer::linalg::qr::no_pivoting::factor::recommended_block_size;
use faer::linalg::triangular_solve::solve_upper_triangular_in_place_with_conj;
use faer::reborrow::{Reborrow, ReborrowMut};
use faer::{Accum, Conj, Mat, MatMut};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dense::par;
use crate::error::{Error, Result};

/// Outcome of one pivoted-QR stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageInfo {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    /// `|R_00| / |R_rr|` over the retained diagonal.
    pub diag_ratio: f64,
}

struct Stage {
    perm: Vec<usize>,
    r: Mat<Complex64>,
    s: Mat<Complex64>,
    g: Mat<Complex64>,
}

/// Column-pivoted QR of the first `nf` columns of `g`, applying `Q^H` to the remaining columns.
/// Returns the pivot order (`perm[i]` is the original column at position `i`) and the rank.
pub(crate) fn pivoted_qr_in_place(
    mut g: MatMut<'_, Complex64>,
    nf: usize,
    rel_tol: f64,
) -> (Vec<usize>, usize, f64) {
    let rows = g.nrows();
    let size = rows.min(nf);
    if size == 0 {
        return ((0..nf).collect(), 0, 1.0);
    }
    let bs = recommended_block_size::<Complex64>(rows, nf).min(size).max(1);
    let mut h = Mat::<Complex64>::zeros(bs, size);
    let mut perm = vec![0usize; nf];
    let mut perm_inv = vec![0usize; nf];
    let rest = g.ncols() - nf;
    let req = StackReq::any_of(&[
        cpqr::qr_in_place_scratch::<usize, Complex64>(rows, nf, bs, par(), Default::default()),
        householder::apply_block_householder_sequence_transpose_on_the_left_in_place_scratch::<Complex64>(
            rows, bs, rest.max(1),
        ),
    ]);
    let mut buf = MemBuffer::new(req);
    let (mut left, right) = g.rb_mut().split_at_col_mut(nf);
    cpqr::qr_in_place(
        left.rb_mut(),
        h.as_mut(),
        &mut perm,
        &mut perm_inv,
        par(),
        MemStack::new(&mut buf),
        Default::default(),
    );
    if rest > 0 {
        householder::apply_block_householder_sequence_transpose_on_the_left_in_place_with_conj(
            left.rb().subcols(0, size),
            h.as_ref(),
            Conj::Yes,
            right,
            par(),
            MemStack::new(&mut buf),
        );
    }
    let d0 = left[(0, 0)].norm();
    let mut rank = 0;
    if d0 > 0.0 {
        while rank < size && left[(rank, rank)].norm() > rel_tol * d0 {
            rank += 1;
        }
    }
    let ratio = if rank > 0 { d0 / left[(rank - 1, rank - 1)].norm() } else { 1.0 };
    (perm, rank, ratio)
}

/// Block-staircase least squares. `widths[j]` is the width of column block `j`, `heights[j]` the
/// row count of row block `j`; `fill(j, a, b)` writes row block `j` into `a` (its columns span
/// blocks `j` and `j + 1`) and its right-hand sides into `b`.
///
/// Returns the solution (one column per right-hand side), the residual norms and per-stage info.
pub(crate) fn solve<F>(
    widths: &[usize],
    heights: &[usize],
    nrhs: usize,
    rel_tol: f64,
    mut fill: F,
) -> Result<(Mat<Complex64>, Vec<f64>, Vec<StageInfo>)>
where
    F: FnMut(usize, MatMut<'_, Complex64>, MatMut<'_, Complex64>) -> Result<()>,
{
    let nb = widths.len();
    assert!(heights.len() <= nb);
    let mut stages: Vec<Stage> = Vec::with_capacity(nb);
    let mut info = Vec::with_capacity(nb);
    let mut carry = Mat::<Complex64>::zeros(0, widths.first().copied().unwrap_or(0) + nrhs);
    for j in 0..nb {
        let w = widths[j];
        let w_next = if j + 1 < nb { widths[j + 1] } else { 0 };
        let new_rows = heights.get(j).copied().unwrap_or(0);
        let c_rows = carry.nrows();
        let rows = c_rows + new_rows;
        let mut g = Mat::<Complex64>::zeros(rows, w + w_next + nrhs);
        g.as_mut().submatrix_mut(0, 0, c_rows, w).copy_from(carry.as_ref().subcols(0, w));
        g.as_mut()
            .submatrix_mut(0, w + w_next, c_rows, nrhs)
            .copy_from(carry.as_ref().subcols(w, nrhs));
        drop(carry);
        if new_rows > 0 {
            let (a, b) = g.as_mut().subrows_mut(c_rows, new_rows).split_at_col_mut(w + w_next);
            fill(j, a, b)?;
        }
        let (perm, rank, diag_ratio) = pivoted_qr_in_place(g.as_mut(), w, rel_tol);
        if !diag_ratio.is_finite() {
            return Err(Error::Numerical { stage: "block QR", detail: format!("stage {j} produced non-finite R") });
        }
        info.push(StageInfo { rows, cols: w, rank, diag_ratio });
        let top = g.as_ref().subrows(0, rank);
        let mut r = Mat::<Complex64>::zeros(rank, rank);
        for jj in 0..rank {
            for ii in 0..=jj {
                r[(ii, jj)] = top[(ii, jj)];
            }
        }
        stages.push(Stage {
            perm,
            r,
            s: top.subcols(w, w_next).to_owned(),
            g: top.subcols(w + w_next, nrhs).to_owned(),
        });
        let rest = g.as_ref().subrows(rank, rows - rank);
        carry = Mat::zeros(rows - rank, w_next + nrhs);
        carry.as_mut().subcols_mut(0, w_next).copy_from(rest.subcols(w, w_next));
        carry.as_mut().subcols_mut(w_next, nrhs).copy_from(rest.subcols(w + w_next, nrhs));
    }
    let residuals: Vec<f64> = (0..nrhs).map(|c| carry.col(c).norm_l2()).collect();

    let total: usize = widths.iter().sum();
    let mut x = Mat::<Complex64>::zeros(total, nrhs);
    let mut offsets = Vec::with_capacity(nb + 1);
    offsets.push(0);
    for w in widths {
        offsets.push(offsets.last().unwrap() + w);
    }
    for j in (0..nb).rev() {
        let st = &stages[j];
        let mut y = st.g.clone();
        if j + 1 < nb && st.s.ncols() > 0 {
            let next = x.as_ref().subrows(offsets[j + 1], widths[j + 1]);
            matmul(y.as_mut(), Accum::Add, st.s.as_ref(), next, Complex64::new(-1.0, 0.0), par());
        }
        solve_upper_triangular_in_place_with_conj(st.r.as_ref(), Conj::No, y.as_mut(), par());
        for (i, &p) in st.perm.iter().take(y.nrows()).enumerate() {
            for c in 0..nrhs {
                x[(offsets[j] + p, c)] = y[(i, c)];
            }
        }
    }
    Ok((x, residuals, info))
}
