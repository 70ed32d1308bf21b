//! Schur-complement elimination of proxy and Bragg unknowns, least squares, back-substitution.

pub mod dense;
pub mod staircase;

use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use faer::linalg::matmul::matmul;
use faer::reborrow::ReborrowMut;
use faer::{Accum, Mat, MatMut};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dense::{least_squares, least_squares_multi, pseudo_inverse, SvdSummary};
pub use staircase::StageInfo;

use crate::assembly::{BlockSystem, ColGroup, Layout, Model, RowBlock};
use crate::error::{Error, Result};
use crate::geometry::{Discretization, LayerStack};
use crate::kernels::{BraggAmplitudes, Direction, Incidence};
use crate::postprocess::flux_error;
use dense::{par, truncated_svd};

/// Least-squares algorithm for the reduced system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LsqMethod {
    /// Truncated SVD for small systems, block QR otherwise.
    Auto,
    /// Truncated SVD of the whole reduced matrix (minimum-norm solution).
    Svd,
    /// Column-pivoted QR, one layer of columns at a time (basic solution).
    BlockQr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub method: LsqMethod,
    /// `Auto` uses the SVD up to this many reduced columns.
    pub svd_max_cols: usize,
    /// Also solve the unreduced system densely and compare.
    pub full_system_check: bool,
    /// Recompute the residual of the unreduced system after back-substitution.
    pub full_residual: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { method: LsqMethod::Auto, svd_max_cols: 3000, full_system_check: false, full_residual: true }
    }
}

/// Elimination record of one layer: the eliminated unknowns are `-t * c_layer`.
#[derive(Debug, Clone)]
pub struct LayerReduction {
    pub layer: usize,
    pub rows: Vec<RowBlock>,
    pub cols: Vec<ColGroup>,
    /// Column range of the layer's MFS coefficients.
    pub layer_cols: Range<usize>,
    /// `Q'^+ P'`, rows ordered like `cols`.
    pub t: Mat<Complex64>,
    pub q_summary: SvdSummary,
}

/// Result of [`schur_reduce`].
#[derive(Debug, Clone)]
pub struct SchurReduced {
    /// Interface rows over the MFS columns.
    pub matrix: Mat<Complex64>,
    pub rhs: Vec<Complex64>,
    pub back_map: Vec<LayerReduction>,
}

impl SchurReduced {
    /// Full unknown vector (layout order) from reduced-system coefficients.
    pub fn back_substitute(&self, layout: &Layout, c: &[Complex64]) -> Vec<Complex64> {
        let cm = faer::ColRef::from_slice(c).as_mat();
        let x = back_substitute(layout, &self.back_map, cm);
        x.col(0).iter().copied().collect()
    }
}

/// Blocks addressed by layout position, either computed or stored.
trait BlockSource: Sync {
    /// Writes block `(row, col)` into `out`; returns `false` (leaving `out` alone) for a zero block.
    fn fill(&self, out: MatMut<'_, Complex64>, row: RowBlock, col: ColGroup) -> Result<bool>;
}

impl BlockSource for Model {
    fn fill(&self, out: MatMut<'_, Complex64>, row: RowBlock, col: ColGroup) -> Result<bool> {
        match self.coupling(row, col) {
            Some(sign) => {
                let n = out.nrows();
                self.fill_block(out, row, col, 0..n, sign)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

impl BlockSource for BlockSystem {
    fn fill(&self, mut out: MatMut<'_, Complex64>, row: RowBlock, col: ColGroup) -> Result<bool> {
        match self.block(row, col) {
            Some(b) => {
                out.copy_from(b);
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

fn range_len(layout: &Layout, row: RowBlock) -> usize {
    layout.row_range(row).map_or(0, |r| r.len())
}

fn col_len(layout: &Layout, col: ColGroup) -> usize {
    layout.col_range(col).map_or(0, |r| r.len())
}

fn check_finite(m: &Mat<Complex64>, stage: &'static str) -> Result<()> {
    for j in 0..m.ncols() {
        for v in m.col(j).iter() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::Numerical { stage, detail: format!("non-finite entry in column {j}") });
            }
        }
    }
    Ok(())
}

fn reduce_layer(src: &dyn BlockSource, model: &Model, layer: usize, rel_tol: f64) -> Result<LayerReduction> {
    let layout = &model.layout;
    let (rows, cols) = model.eliminated(layer);
    let groups = model.layer_groups(layer);
    let layer_cols = model.layer_cols(layer);
    let re: usize = rows.iter().map(|r| range_len(layout, *r)).sum();
    let ce: usize = cols.iter().map(|c| col_len(layout, *c)).sum();
    let mut p = Mat::<Complex64>::zeros(re, layer_cols.len());
    let mut q = Mat::<Complex64>::zeros(re, ce);
    let mut ro = 0;
    for row in &rows {
        let nr = range_len(layout, *row);
        for g in &groups {
            let r = layout.col_range(*g).unwrap();
            src.fill(p.as_mut().submatrix_mut(ro, r.start - layer_cols.start, nr, r.len()), *row, *g)?;
        }
        let mut co = 0;
        for c in &cols {
            let nc = col_len(layout, *c);
            src.fill(q.as_mut().submatrix_mut(ro, co, nr, nc), *row, *c)?;
            co += nc;
        }
        ro += nr;
    }
    check_finite(&p, "schur assembly")?;
    check_finite(&q, "schur assembly")?;
    let svd = truncated_svd(q.as_ref(), rel_tol)?;
    drop(q);
    let t = svd.apply_pinv(p.as_ref());
    check_finite(&t, "schur pseudo-inverse")?;
    Ok(LayerReduction { layer, rows, cols, layer_cols, t, q_summary: svd.summary })
}

/// Column widths of the reduced system (one block per layer) and row heights (one per interface).
fn reduced_shape(model: &Model) -> (Vec<usize>, Vec<usize>) {
    let widths = (1..=model.n_layers()).map(|l| model.layer_cols(l).len()).collect();
    let heights = (1..=model.stack.interfaces.len())
        .map(|i| range_len(&model.layout, RowBlock::Interface(i)))
        .collect();
    (widths, heights)
}

/// Writes reduced row block `i` (interface `i`, 1-based) over the columns of layers `i` and `i + 1`.
fn fill_reduced_rows(
    src: &dyn BlockSource,
    model: &Model,
    back_map: &[LayerReduction],
    i: usize,
    mut out: MatMut<'_, Complex64>,
) -> Result<()> {
    let layout = &model.layout;
    let row = RowBlock::Interface(i);
    let nr = out.nrows();
    let mut off = 0;
    for layer in [i, i + 1] {
        if layer > model.n_layers() {
            break;
        }
        let lc = model.layer_cols(layer);
        if model.coupling(row, ColGroup::Proxy(layer)).is_none() {
            off += lc.len();
            continue;
        }
        for g in model.layer_groups(layer) {
            let r = layout.col_range(g).unwrap();
            src.fill(out.rb_mut().submatrix_mut(0, off + r.start - lc.start, nr, r.len()), row, g)?;
        }
        let l = col_len(layout, ColGroup::Proxy(layer));
        if l > 0 {
            let mut b = Mat::<Complex64>::zeros(nr, l);
            src.fill(b.as_mut(), row, ColGroup::Proxy(layer))?;
            let t = &back_map[layer - 1].t;
            matmul(
                out.rb_mut().submatrix_mut(0, off, nr, lc.len()),
                Accum::Add,
                b.as_ref(),
                t.as_ref().subrows(0, l),
                Complex64::new(-1.0, 0.0),
                par(),
            );
        }
        off += lc.len();
    }
    Ok(())
}

fn rhs_rows(model: &Model, i: usize, incs: &[Incidence], mut out: MatMut<'_, Complex64>) {
    for (c, inc) in incs.iter().enumerate() {
        for (r, v) in model.rhs_block_for(RowBlock::Interface(i), inc).into_iter().enumerate() {
            out[(r, c)] = v;
        }
    }
}

fn dense_reduced(src: &dyn BlockSource, model: &Model, back_map: &[LayerReduction]) -> Result<Mat<Complex64>> {
    let (widths, heights) = reduced_shape(model);
    let mut m = Mat::<Complex64>::zeros(heights.iter().sum(), widths.iter().sum());
    let (mut ro, mut co) = (0, 0);
    for (j, &h) in heights.iter().enumerate() {
        let w = widths[j] + widths.get(j + 1).copied().unwrap_or(0);
        fill_reduced_rows(src, model, back_map, j + 1, m.as_mut().submatrix_mut(ro, co, h, w))?;
        ro += h;
        co += widths[j];
    }
    Ok(m)
}

/// Unknown vectors (layout order) from reduced coefficients, one column per right-hand side.
fn back_substitute(layout: &Layout, back_map: &[LayerReduction], c: faer::MatRef<'_, Complex64>) -> Mat<Complex64> {
    let mut x = Mat::<Complex64>::zeros(layout.ncols(), c.ncols());
    x.as_mut().subrows_mut(0, c.nrows()).copy_from(c);
    for lr in back_map {
        let mut e = Mat::<Complex64>::zeros(lr.t.nrows(), c.ncols());
        matmul(
            e.as_mut(),
            Accum::Replace,
            lr.t.as_ref(),
            c.subrows(lr.layer_cols.start, lr.layer_cols.len()),
            Complex64::new(-1.0, 0.0),
            par(),
        );
        let mut at = 0;
        for g in &lr.cols {
            let r = layout.col_range(*g).unwrap();
            x.as_mut().subrows_mut(r.start, r.len()).copy_from(e.as_ref().subrows(at, r.len()));
            at += r.len();
        }
    }
    x
}

/// Eliminates every layer's proxy strengths (and the Bragg amplitudes at the lids) from a
/// materialized system, leaving the interface rows over the MFS coefficients.
pub fn schur_reduce(sys: &BlockSystem, rel_tol: f64) -> Result<SchurReduced> {
    let model = &sys.model;
    let back_map = (1..=model.n_layers())
        .map(|l| reduce_layer(sys, model, l, rel_tol))
        .collect::<Result<Vec<_>>>()?;
    let matrix = dense_reduced(sys, model, &back_map)?;
    let n: usize = (1..=model.stack.interfaces.len())
        .map(|i| range_len(&model.layout, RowBlock::Interface(i)))
        .sum();
    Ok(SchurReduced { matrix, rhs: sys.rhs[..n].to_vec(), back_map })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    /// Eliminated block `Q'` (walls, plus lid rows and Bragg columns where present).
    pub q: SvdSummary,
}

/// Comparison against the unreduced system solved directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullSystemCheck {
    pub residual: f64,
    /// `max |a_full - a| / max |a|` over both Bragg families.
    pub bragg_rel_diff: f64,
    pub condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: LsqMethod,
    pub layers: Vec<LayerDiagnostics>,
    pub reduced_rows: usize,
    pub reduced_cols: usize,
    /// Truncated-SVD summary of the reduced matrix (SVD method only).
    pub reduced_svd: Option<SvdSummary>,
    /// Per-layer pivoted-QR stages (block QR method only).
    pub stages: Vec<StageInfo>,
    pub warnings: Vec<String>,
    pub full_system: Option<FullSystemCheck>,
    /// Wall-clock seconds per phase.
    pub timings: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `|A' c - f|` of the reduced system.
    pub reduced: f64,
    /// `|M x - rhs|` of the unreduced system after back-substitution.
    pub full: Option<f64>,
    /// The same residual split by block row (walls give the quasi-periodicity defect).
    pub blocks: Vec<(RowBlock, f64)>,
    pub rhs_norm: f64,
}

/// Solved problem. Bragg amplitudes are indexed on the model's transverse wavenumber grid.
#[derive(Debug, Clone)]
pub struct Solution {
    pub model: Arc<Model>,
    pub inc: Incidence,
    /// All unknowns in layout order.
    pub unknowns: Vec<Complex64>,
    pub a_up: BraggAmplitudes,
    pub a_down: Option<BraggAmplitudes>,
    pub residuals: Residuals,
    pub flux_error: f64,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// Coefficients of one unknown group.
    pub fn group(&self, g: ColGroup) -> Option<&[Complex64]> {
        self.model.layout.col_range(g).map(|r| &self.unknowns[r])
    }

    /// MFS coefficient groups in layout order.
    pub fn c_groups(&self) -> Vec<(ColGroup, &[Complex64])> {
        self.groups(|g| matches!(g, ColGroup::Mfs { .. }))
    }

    /// Proxy strength groups in layer order.
    pub fn d_groups(&self) -> Vec<(ColGroup, &[Complex64])> {
        self.groups(|g| matches!(g, ColGroup::Proxy(_)))
    }

    fn groups(&self, keep: impl Fn(&ColGroup) -> bool) -> Vec<(ColGroup, &[Complex64])> {
        self.model
            .layout
            .cols
            .iter()
            .filter(|(g, _)| keep(g))
            .map(|(g, r)| (*g, &self.unknowns[r.clone()]))
            .collect()
    }
}

fn rhs_norm(model: &Model, inc: &Incidence) -> f64 {
    model.rhs_block_for(RowBlock::Interface(1), inc).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// End-to-end solve: assemble, reduce, least squares, back-substitute, flux error.
pub fn solve(stack: &LayerStack, disc: &Discretization, inc: &Incidence) -> Result<Solution> {
    solve_with(stack, disc, inc, &SolveOptions::default())
}

pub fn solve_with(
    stack: &LayerStack,
    disc: &Discretization,
    inc: &Incidence,
    opts: &SolveOptions,
) -> Result<Solution> {
    let model = Arc::new(Model::new(stack, disc, inc)?);
    let mut sols = solve_model(&model, std::slice::from_ref(inc), opts)?;
    Ok(sols.pop().unwrap())
}

/// Solves every incidence in `incs` against one model. All of them must share the model's Bloch
/// phases; only the forcing differs.
pub fn solve_model(model: &Arc<Model>, incs: &[Incidence], opts: &SolveOptions) -> Result<Vec<Solution>> {
    let rel_tol = model.disc.rel_tol;
    let mut timings = Vec::new();
    let mut warnings = Vec::new();
    for inc in incs {
        if (inc.alpha_x - model.inc.alpha_x).norm() > 1e-10 || (inc.alpha_y - model.inc.alpha_y).norm() > 1e-10 {
            return Err(Error::Domain(format!(
                "incidence (theta {}, phi {}) has different Bloch phases from the model",
                inc.theta_inc, inc.phi_inc
            )));
        }
    }

    let t0 = Instant::now();
    let back_map = (1..=model.n_layers())
        .map(|l| reduce_layer(model.as_ref(), model, l, rel_tol))
        .collect::<Result<Vec<_>>>()?;
    timings.push(("schur".to_string(), t0.elapsed().as_secs_f64()));
    let mut layers = Vec::new();
    for lr in &back_map {
        let s = lr.q_summary;
        if s.cols > s.rows {
            warnings.push(format!(
                "layer {}: eliminated block is {} x {} (wider than tall); its pseudo-inverse is not a left inverse",
                lr.layer, s.rows, s.cols
            ));
        }
        if s.rank < s.cols.min(s.rows) {
            warnings.push(format!(
                "layer {}: eliminated block truncated to rank {} of {}",
                lr.layer,
                s.rank,
                s.cols.min(s.rows)
            ));
        }
        layers.push(LayerDiagnostics { layer: lr.layer, q: s });
    }

    let (widths, heights) = reduced_shape(model);
    let n_c: usize = widths.iter().sum();
    let n_r: usize = heights.iter().sum();
    let method = match opts.method {
        LsqMethod::Auto if n_c <= opts.svd_max_cols => LsqMethod::Svd,
        LsqMethod::Auto => LsqMethod::BlockQr,
        m => m,
    };
    let t1 = Instant::now();
    let (c, reduced_res, reduced_svd, stages) = match method {
        LsqMethod::Svd => {
            let m = dense_reduced(model.as_ref(), model, &back_map)?;
            check_finite(&m, "reduced assembly")?;
            let mut b = Mat::<Complex64>::zeros(n_r, incs.len());
            rhs_rows(model, 1, incs, b.as_mut().subrows_mut(0, heights[0]));
            let (c, res, summary) = least_squares_multi(m.as_ref(), b.as_ref(), rel_tol)?;
            (c, res, Some(summary), Vec::new())
        }
        _ => {
            let (c, res, stages) = staircase::solve(&widths, &heights, incs.len(), rel_tol, |j, a, b| {
                fill_reduced_rows(model.as_ref(), model, &back_map, j + 1, a)?;
                if j == 0 {
                    rhs_rows(model, 1, incs, b);
                }
                Ok(())
            })?;
            (c, res, None, stages)
        }
    };
    timings.push(("least_squares".to_string(), t1.elapsed().as_secs_f64()));
    check_finite(&c, "least squares")?;
    let x = back_substitute(&model.layout, &back_map, c.as_ref());
    check_finite(&x, "back-substitution")?;
    drop(back_map);

    let mut out = Vec::with_capacity(incs.len());
    for (k, inc) in incs.iter().enumerate() {
        let unknowns: Vec<Complex64> = x.col(k).iter().copied().collect();
        let bragg = |d: Direction| {
            model.layout.col_range(ColGroup::Bragg(d)).map(|r| {
                BraggAmplitudes::from_values(model.disc.order, unknowns[r].to_vec())
            })
        };
        let a_up = bragg(Direction::Up).unwrap();
        let a_down = bragg(Direction::Down);
        let flux = flux_error(&a_up, a_down.as_ref(), &model.modes_up, model.modes_down.as_ref(), inc)?;
        let mut timings = timings.clone();
        let (full, blocks) = if opts.full_residual {
            let t2 = Instant::now();
            let r = model.residual(&unknowns, &model.rhs_for(inc))?;
            timings.push(("full_residual".to_string(), t2.elapsed().as_secs_f64()));
            let norm = |v: &[Complex64]| v.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let blocks = model.layout.rows.iter().map(|(b, rr)| (*b, norm(&r[rr.clone()]))).collect();
            (Some(norm(&r)), blocks)
        } else {
            (None, Vec::new())
        };
        let mut sol = Solution {
            model: Arc::clone(model),
            inc: inc.clone(),
            unknowns,
            a_up,
            a_down,
            residuals: Residuals { reduced: reduced_res[k], full, blocks, rhs_norm: rhs_norm(model, inc) },
            flux_error: flux,
            diagnostics: Diagnostics {
                method,
                layers: layers.clone(),
                reduced_rows: n_r,
                reduced_cols: n_c,
                reduced_svd,
                stages: stages.clone(),
                warnings: warnings.clone(),
                full_system: None,
                timings,
            },
        };
        if opts.full_system_check {
            sol.diagnostics.full_system = Some(full_system_check(&sol)?);
        }
        out.push(sol);
    }
    Ok(out)
}

/// Caps the worker threads of assembly, factorizations and sweeps. Call once, before any solve.
pub fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Domain(format!("thread pool already initialized: {e}")))?;
    faer::set_global_parallelism(if n == 1 { faer::Par::Seq } else { faer::Par::rayon(n) });
    Ok(())
}

/// Solves the unreduced system by truncated SVD and compares Bragg amplitudes.
pub fn full_system_check(sol: &Solution) -> Result<FullSystemCheck> {
    let model = &sol.model;
    let sys = BlockSystem::from_model(model)?;
    let m = sys.to_dense();
    let rhs = model.rhs_for(&sol.inc);
    let (x, res, summary) =
        least_squares_multi(m.as_ref(), faer::ColRef::from_slice(&rhs).as_mat(), model.disc.rel_tol)?;
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for d in [Direction::Up, Direction::Down] {
        if let Some(r) = model.layout.col_range(ColGroup::Bragg(d)) {
            for i in r {
                diff = diff.max((x[(i, 0)] - sol.unknowns[i]).norm());
                scale = scale.max(sol.unknowns[i].norm());
            }
        }
    }
    Ok(FullSystemCheck {
        residual: res[0],
        bragg_rel_diff: if scale > 0.0 { diff / scale } else { diff },
        condition: summary.condition(),
    })
}
