//! Matrix blocks of the periodized MFS systems and their layout.
//!
//! Blocks are produced on demand by a [`Model`], which owns every point set of a problem. Large
//! problems never hold the whole system; [`BlockSystem`] materializes it for small cases.

use std::collections::BTreeMap;
use std::ops::Range;

use faer::reborrow::ReborrowMut;
use faer::{Mat, MatMut};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    collocation_points, lid_points, mfs_sources, proxy_sphere, wall_points, Discretization,
    LayerStack, Mode, ProxySphere, Side, Target, Walls,
};
use crate::kernels::{
    green_value, green_value_dn, plane_wave, plane_wave_dn, rb_modes_for, Direction, Incidence,
    RbModeSet, Vec3,
};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Field value or target-normal derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Deriv {
    Value,
    Normal,
}

/// A lattice shift of every source and the weight of that copy.
type Shifted = (Vec3, Complex64);

fn near_copies(inc: &Incidence, weight: Complex64) -> Vec<Shifted> {
    let ph = inc.near_phases();
    let mut out = Vec::with_capacity(9);
    for m in -1i32..=1 {
        for n in -1i32..=1 {
            let shift = Vec3::new(m as f64 * inc.e_x, n as f64 * inc.e_y, 0.0);
            out.push((shift, weight * ph[((m + 1) * 3 + (n + 1)) as usize]));
        }
    }
    out
}

/// Copies for the wall rows. `hi` targets see sources shifted back one period with weight
/// `alpha^-2`, `lo` targets see them shifted forward with weight `-alpha`; both are summed over
/// the three transverse copies.
fn wall_copies(inc: &Incidence, axis: usize) -> (Vec<Shifted>, Vec<Shifted>) {
    let (a, b, e_a, e_b) = if axis == 0 {
        (inc.alpha_x, inc.alpha_y, Vec3::new(inc.e_x, 0.0, 0.0), Vec3::new(0.0, inc.e_y, 0.0))
    } else {
        (inc.alpha_y, inc.alpha_x, Vec3::new(0.0, inc.e_y, 0.0), Vec3::new(inc.e_x, 0.0, 0.0))
    };
    let mut hi = Vec::with_capacity(3);
    let mut lo = Vec::with_capacity(3);
    for n in -1i32..=1 {
        let bn = b.powi(n);
        hi.push((-e_a + e_b * n as f64, a.powi(-2) * bn));
        lo.push((e_a + e_b * n as f64, -a * bn));
    }
    (hi, lo)
}

fn coincidence(i: usize, j: usize, t: &Target, shift: &Vec3) -> Error {
    Error::Assembly(format!(
        "target {i} at ({:.6}, {:.6}, {:.6}) coincides with source {j} shifted by ({}, {}, {})",
        t.point[0], t.point[1], t.point[2], shift[0], shift[1], shift[2]
    ))
}

/// `out[i, j] (+)= sum_c w_c K(x_i, y_j + s_c)`.
fn fill_sum(
    mut out: MatMut<'_, Complex64>,
    k: f64,
    targets: &[Target],
    deriv: Deriv,
    sources: &[Vec3],
    copies: &[Shifted],
    accumulate: bool,
) -> Result<()> {
    debug_assert_eq!(out.nrows(), targets.len());
    debug_assert_eq!(out.ncols(), sources.len());
    if out.nrows() == 0 {
        return Ok(());
    }
    out.rb_mut().par_col_iter_mut().enumerate().try_for_each(|(j, col)| {
        let col = col.try_as_col_major_mut().expect("column-major block").as_slice_mut();
        let shifted: Vec<(Vec3, Complex64)> =
            copies.iter().map(|(s, w)| (sources[j] + s, *w)).collect();
        for (i, t) in targets.iter().enumerate() {
            let mut acc = ZERO;
            for (c, (y, w)) in shifted.iter().enumerate() {
                let d = t.point - y;
                if d.norm_squared() == 0.0 {
                    return Err(coincidence(i, j, t, &copies[c].0));
                }
                let v = match deriv {
                    Deriv::Value => green_value(k, &d),
                    Deriv::Normal => green_value_dn(k, &d, &t.normal).1,
                };
                acc += w * v;
            }
            if accumulate {
                col[i] += acc;
            } else {
                col[i] = acc;
            }
        }
        Ok(())
    })
}

/// `out[i, idx] = w * mode_idx(x_i)` or its normal derivative.
fn fill_modes(
    mut out: MatMut<'_, Complex64>,
    targets: &[Target],
    deriv: Deriv,
    modes: &RbModeSet,
    w: Complex64,
) {
    let width = modes.width();
    out.rb_mut().par_col_iter_mut().enumerate().for_each(|(idx, col)| {
        let col = col.try_as_col_major_mut().expect("column-major block").as_slice_mut();
        let (kx, ky) = (modes.kappa_x[idx / width], modes.kappa_y[idx % width]);
        let dz = modes.dz_factor(idx);
        for (i, t) in targets.iter().enumerate() {
            let p = t.point;
            let phase = modes.horizontal_phase(idx, p[0], p[1]) * modes.vertical_phase(idx, p[2]);
            col[i] = w * match deriv {
                Deriv::Value => phase,
                Deriv::Normal => {
                    phase * (I * (kx * t.normal[0] + ky * t.normal[1]) + dz * t.normal[2])
                }
            };
        }
    });
}

/// Near-field block: `sum_{m,n=-1..1} alpha_x^m alpha_y^n K(x_i, y_j + m e_x + n e_y)`.
pub fn near_block(
    k: f64,
    targets: &[Target],
    sources: &[Vec3],
    inc: &Incidence,
    deriv: Deriv,
) -> Result<Mat<Complex64>> {
    let mut out = Mat::zeros(targets.len(), sources.len());
    fill_sum(out.as_mut(), k, targets, deriv, sources, &near_copies(inc, ONE), false)?;
    Ok(out)
}

/// Proxy block: `K(x_i, z_j)`.
pub fn proxy_block(
    k: f64,
    targets: &[Target],
    proxies: &[Vec3],
    deriv: Deriv,
) -> Result<Mat<Complex64>> {
    let mut out = Mat::zeros(targets.len(), proxies.len());
    fill_sum(out.as_mut(), k, targets, deriv, proxies, &[(Vec3::zeros(), ONE)], false)?;
    Ok(out)
}

fn check_pairing(walls: &Walls, inc: &Incidence) -> Result<()> {
    let ex = Vec3::new(inc.e_x, 0.0, 0.0);
    let ey = Vec3::new(0.0, inc.e_y, 0.0);
    let n = walls.left.len();
    if walls.right.len() != n || walls.back.len() != n || walls.front.len() != n {
        return Err(Error::Assembly("wall point sets have different sizes".into()));
    }
    for i in 0..n {
        if walls.right[i].point != walls.left[i].point + ex {
            return Err(Error::Assembly(format!("right wall point {i} is not paired with the left wall")));
        }
        if walls.front[i].point != walls.back[i].point + ey {
            return Err(Error::Assembly(format!("front wall point {i} is not paired with the back wall")));
        }
    }
    Ok(())
}

/// Row segment of a block row: one kind of equation at one set of targets.
#[derive(Clone, Copy)]
enum Seg<'a> {
    /// Value or normal derivative of the representation at `targets`.
    Plain { targets: &'a [Target], deriv: Deriv },
    /// Quasi-periodicity defect between paired walls normal to `axis`.
    Wall { lo: &'a [Target], hi: &'a [Target], axis: usize, deriv: Deriv },
}

impl<'a> Seg<'a> {
    fn len(&self) -> usize {
        match self {
            Seg::Plain { targets, .. } => targets.len(),
            Seg::Wall { lo, .. } => lo.len(),
        }
    }

    fn slice(&self, r: Range<usize>) -> Seg<'a> {
        match *self {
            Seg::Plain { targets, deriv } => Seg::Plain { targets: &targets[r], deriv },
            Seg::Wall { lo, hi, axis, deriv } => {
                Seg::Wall { lo: &lo[r.clone()], hi: &hi[r], axis, deriv }
            }
        }
    }
}

/// What a column group multiplies.
#[derive(Clone, Copy)]
enum Src<'a> {
    Mfs(&'a [Vec3]),
    Proxy(&'a [Vec3]),
    Modes(&'a RbModeSet),
}

fn fill_seg(
    mut out: MatMut<'_, Complex64>,
    seg: Seg<'_>,
    src: Src<'_>,
    k: f64,
    inc: &Incidence,
    sign: f64,
) -> Result<()> {
    let w = Complex64::new(sign, 0.0);
    match (seg, src) {
        (Seg::Plain { targets, deriv }, Src::Mfs(y)) => {
            fill_sum(out, k, targets, deriv, y, &near_copies(inc, w), false)
        }
        (Seg::Plain { targets, deriv }, Src::Proxy(z)) => {
            fill_sum(out, k, targets, deriv, z, &[(Vec3::zeros(), w)], false)
        }
        (Seg::Plain { targets, deriv }, Src::Modes(modes)) => {
            fill_modes(out, targets, deriv, modes, w);
            Ok(())
        }
        (Seg::Wall { lo, hi, axis, deriv }, Src::Mfs(y)) => {
            let (c_hi, c_lo) = wall_copies(inc, axis);
            fill_sum(out.rb_mut(), k, hi, deriv, y, &c_hi, false)?;
            fill_sum(out, k, lo, deriv, y, &c_lo, true)
        }
        (Seg::Wall { lo, hi, axis, deriv }, Src::Proxy(z)) => {
            let a = if axis == 0 { inc.alpha_x } else { inc.alpha_y };
            fill_sum(out.rb_mut(), k, hi, deriv, z, &[(Vec3::zeros(), a.inv())], false)?;
            fill_sum(out, k, lo, deriv, z, &[(Vec3::zeros(), -ONE)], true)
        }
        (Seg::Wall { .. }, Src::Modes(_)) => {
            out.fill(ZERO);
            Ok(())
        }
    }
}

fn wall_segs(walls: &Walls) -> Vec<Seg<'_>> {
    let mut out = Vec::with_capacity(4);
    for (lo, hi, axis) in [(&walls.left, &walls.right, 0), (&walls.back, &walls.front, 1)] {
        for deriv in [Deriv::Value, Deriv::Normal] {
            out.push(Seg::Wall { lo, hi, axis, deriv });
        }
    }
    out
}

fn fill_segs(
    mut out: MatMut<'_, Complex64>,
    segs: &[Seg<'_>],
    rows: Range<usize>,
    src: Src<'_>,
    k: f64,
    inc: &Incidence,
    sign: f64,
) -> Result<()> {
    let mut start = 0;
    let mut written = 0;
    for seg in segs {
        let end = start + seg.len();
        let lo = rows.start.max(start);
        let hi = rows.end.min(end);
        if lo < hi {
            let part = seg.slice(lo - start..hi - start);
            let n = hi - lo;
            fill_seg(out.rb_mut().subrows_mut(written, n), part, src, k, inc, sign)?;
            written += n;
        }
        start = end;
    }
    Ok(())
}

/// Quasi-periodicity blocks `(P, Q)` of one layer: four row groups (left/right value, left/right
/// normal derivative, back/front value, back/front normal derivative).
pub fn qp_wall_blocks(
    k: f64,
    walls: &Walls,
    mfs_src: &[Vec3],
    proxies: &[Vec3],
    inc: &Incidence,
) -> Result<(Mat<Complex64>, Mat<Complex64>)> {
    check_pairing(walls, inc)?;
    let segs = wall_segs(walls);
    let rows = 4 * walls.len();
    let mut p = Mat::zeros(rows, mfs_src.len());
    let mut q = Mat::zeros(rows, proxies.len());
    fill_segs(p.as_mut(), &segs, 0..rows, Src::Mfs(mfs_src), k, inc, 1.0)?;
    fill_segs(q.as_mut(), &segs, 0..rows, Src::Proxy(proxies), k, inc, 1.0)?;
    Ok((p, q))
}

fn check_lid_side(lid: &[Target], mfs_src: &[Vec3], dir: Direction) -> Result<()> {
    let Some(z) = lid.first().map(|t| t.point[2]) else { return Ok(()) };
    let bad = mfs_src.iter().position(|y| match dir {
        Direction::Up => y[2] >= z,
        Direction::Down => y[2] <= z,
    });
    match bad {
        Some(j) => Err(Error::Assembly(format!(
            "lid at z = {z} is on the wrong side of MFS source {j} (z = {})",
            mfs_src[j][2]
        ))),
        None => Ok(()),
    }
}

/// Radiation blocks `(Z, V, W)` at a lid, each stacked as `[value; d/dz]`. The lid rows read
/// `Z c + V d - W a = 0`; `W` holds the Rayleigh-Bloch modes and their `z`-derivatives.
pub fn radiation_blocks(
    k: f64,
    lid: &[Target],
    mfs_src: &[Vec3],
    proxies: &[Vec3],
    inc: &Incidence,
    modes: &RbModeSet,
) -> Result<(Mat<Complex64>, Mat<Complex64>, Mat<Complex64>)> {
    check_lid_side(lid, mfs_src, modes.direction)?;
    let segs = [
        Seg::Plain { targets: lid, deriv: Deriv::Value },
        Seg::Plain { targets: lid, deriv: Deriv::Normal },
    ];
    let rows = 2 * lid.len();
    let mut z = Mat::zeros(rows, mfs_src.len());
    let mut v = Mat::zeros(rows, proxies.len());
    let mut w = Mat::zeros(rows, modes.len());
    fill_segs(z.as_mut(), &segs, 0..rows, Src::Mfs(mfs_src), k, inc, 1.0)?;
    fill_segs(v.as_mut(), &segs, 0..rows, Src::Proxy(proxies), k, inc, 1.0)?;
    fill_segs(w.as_mut(), &segs, 0..rows, Src::Modes(modes), k, inc, 1.0)?;
    Ok((z, v, w))
}

/// Block row of the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RowBlock {
    /// Boundary or transmission conditions on interface `i` (1-based).
    Interface(usize),
    /// Quasi-periodicity conditions on the walls of a layer.
    Walls(usize),
    /// Radiation condition on a lid.
    Lid(Direction),
}

/// Group of unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ColGroup {
    /// MFS coefficients of `layer` for the sources on `side` of `interface`.
    Mfs { layer: usize, interface: usize, side: Side },
    /// Proxy strengths of a layer.
    Proxy(usize),
    /// Bragg amplitudes above (`Up`) or below (`Down`) the structure.
    Bragg(Direction),
}

impl ColGroup {
    /// Layer whose representation the group belongs to (`None` for Bragg amplitudes).
    pub fn layer(&self) -> Option<usize> {
        match self {
            ColGroup::Mfs { layer, .. } | ColGroup::Proxy(layer) => Some(*layer),
            ColGroup::Bragg(_) => None,
        }
    }
}

/// Ordering of row blocks and unknown groups: `[c-groups | d-groups | a^u | a^d]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub rows: Vec<(RowBlock, Range<usize>)>,
    pub cols: Vec<(ColGroup, Range<usize>)>,
}

impl Layout {
    fn build(rows: Vec<(RowBlock, usize)>, cols: Vec<(ColGroup, usize)>) -> Self {
        fn ranges<B>(v: Vec<(B, usize)>) -> Vec<(B, Range<usize>)> {
            let mut at = 0;
            v.into_iter()
                .map(|(b, n)| {
                    at += n;
                    (b, at - n..at)
                })
                .collect()
        }
        Self { rows: ranges(rows), cols: ranges(cols) }
    }

    pub fn nrows(&self) -> usize {
        self.rows.last().map_or(0, |r| r.1.end)
    }

    pub fn ncols(&self) -> usize {
        self.cols.last().map_or(0, |c| c.1.end)
    }

    pub fn row_range(&self, block: RowBlock) -> Option<Range<usize>> {
        self.rows.iter().find(|r| r.0 == block).map(|r| r.1.clone())
    }

    pub fn col_range(&self, group: ColGroup) -> Option<Range<usize>> {
        self.cols.iter().find(|c| c.0 == group).map(|c| c.1.clone())
    }

    /// Splits a full unknown vector into its groups.
    pub fn gather(&self, x: &[Complex64]) -> Vec<(ColGroup, Vec<Complex64>)> {
        assert_eq!(x.len(), self.ncols(), "unknown vector has the wrong length");
        self.cols.iter().map(|(g, r)| (*g, x[r.clone()].to_vec())).collect()
    }

    /// Inverse of [`Layout::gather`].
    pub fn scatter(&self, groups: &[(ColGroup, Vec<Complex64>)]) -> Result<Vec<Complex64>> {
        let mut x = vec![ZERO; self.ncols()];
        for (g, v) in groups {
            let r = self
                .col_range(*g)
                .ok_or_else(|| Error::Assembly(format!("unknown group {g:?} not in layout")))?;
            if r.len() != v.len() {
                return Err(Error::Assembly(format!(
                    "group {g:?} has {} entries, layout expects {}",
                    v.len(),
                    r.len()
                )));
            }
            x[r].copy_from_slice(v);
        }
        Ok(x)
    }
}

/// Point sets of one layer.
#[derive(Debug, Clone)]
pub struct LayerPoints {
    pub k: f64,
    pub sphere: ProxySphere,
    pub proxies: Vec<Vec3>,
    pub walls: Walls,
}

/// A prepared problem: every point set, the Rayleigh-Bloch modes and the system layout.
///
/// The matrix depends on the incidence only through the Bloch phases and the transverse
/// wavenumber grid, so one model serves every incidence sharing them; see [`Model::rhs_for`].
#[derive(Debug, Clone)]
pub struct Model {
    pub stack: LayerStack,
    pub disc: Discretization,
    pub inc: Incidence,
    /// Collocation targets per interface.
    pub colloc: Vec<Vec<Target>>,
    /// MFS sources keyed by `(interface, side)`.
    pub sources: BTreeMap<(usize, Side), Vec<Vec3>>,
    pub layers: Vec<LayerPoints>,
    pub lid_up: Vec<Target>,
    pub lid_down: Vec<Target>,
    pub modes_up: RbModeSet,
    pub modes_down: Option<RbModeSet>,
    pub layout: Layout,
}

impl Model {
    pub fn new(stack: &LayerStack, disc: &Discretization, inc: &Incidence) -> Result<Self> {
        stack.validate()?;
        disc.validate()?;
        if (inc.e_x - stack.e_x).abs() > 0.0 || (inc.e_y - stack.e_y).abs() > 0.0 {
            return Err(Error::Domain("incidence periods differ from the stack periods".into()));
        }
        if (inc.k - stack.wavenumber(1)).abs() > 1e-12 * inc.k {
            return Err(Error::Domain(format!(
                "incidence wavenumber {} differs from the top-layer wavenumber {}",
                inc.k,
                stack.wavenumber(1)
            )));
        }
        let n_int = stack.interfaces.len();
        let n_layers = stack.n_layers();
        let transmission = stack.mode == Mode::Transmission;
        let m = disc.m();

        let colloc: Vec<Vec<Target>> =
            stack.interfaces.iter().map(|s| collocation_points(s, m)).collect();
        let mut sources = BTreeMap::new();
        for (i, s) in stack.interfaces.iter().enumerate() {
            sources.insert((i + 1, Side::Below), mfs_sources(s, disc.n_src, disc.tau, Side::Below)?);
            if transmission {
                sources.insert((i + 1, Side::Above), mfs_sources(s, disc.n_src, disc.tau, Side::Above)?);
            }
        }
        let mut layers = Vec::with_capacity(n_layers);
        for layer in 1..=n_layers {
            let sphere = disc.proxy_sphere_for(stack, layer);
            let c = Vec3::from(sphere.center);
            layers.push(LayerPoints {
                k: stack.wavenumber(layer),
                sphere,
                proxies: proxy_sphere(&c, sphere.radius, disc.l),
                walls: wall_points(stack, layer, disc.n_w)?,
            });
        }
        let lid_up = lid_points(stack, Direction::Up, disc.n_t);
        let lid_down = if transmission { lid_points(stack, Direction::Down, disc.n_t) } else { Vec::new() };
        let modes_up =
            rb_modes_for(inc.k_x(), inc.k_y(), stack.e_x, stack.e_y, stack.wavenumber(1), disc.order, Direction::Up, stack.z_u);
        let modes_down = transmission.then(|| {
            rb_modes_for(
                inc.k_x(),
                inc.k_y(),
                stack.e_x,
                stack.e_y,
                stack.wavenumber(n_layers),
                disc.order,
                Direction::Down,
                stack.z_d,
            )
        });

        let mut cols = Vec::new();
        for layer in 1..=n_layers {
            for (interface, side) in mfs_keys(layer, n_int, transmission) {
                cols.push((ColGroup::Mfs { layer, interface, side }, disc.n_src * disc.n_src));
            }
        }
        for layer in 1..=n_layers {
            cols.push((ColGroup::Proxy(layer), disc.l * disc.l));
        }
        cols.push((ColGroup::Bragg(Direction::Up), modes_up.len()));
        if let Some(md) = &modes_down {
            cols.push((ColGroup::Bragg(Direction::Down), md.len()));
        }
        let per_interface = if transmission { 2 * m * m } else { m * m };
        let mut rows: Vec<(RowBlock, usize)> =
            (1..=n_int).map(|i| (RowBlock::Interface(i), per_interface)).collect();
        for layer in 1..=n_layers {
            rows.push((RowBlock::Walls(layer), 4 * disc.n_w * disc.n_w));
        }
        rows.push((RowBlock::Lid(Direction::Up), 2 * disc.n_t * disc.n_t));
        if transmission {
            rows.push((RowBlock::Lid(Direction::Down), 2 * disc.n_t * disc.n_t));
        }

        let model = Self {
            stack: stack.clone(),
            disc: disc.clone(),
            inc: inc.clone(),
            colloc,
            sources,
            layers,
            lid_up,
            lid_down,
            modes_up,
            modes_down,
            layout: Layout::build(rows, cols),
        };
        for y in model.layer_sources(1) {
            check_lid_side(&model.lid_up, y, Direction::Up)?;
        }
        if transmission {
            for y in model.layer_sources(n_layers) {
                check_lid_side(&model.lid_down, y, Direction::Down)?;
            }
        }
        Ok(model)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_transmission(&self) -> bool {
        self.stack.mode == Mode::Transmission
    }

    /// MFS column groups of a layer in layout order.
    pub fn layer_groups(&self, layer: usize) -> Vec<ColGroup> {
        mfs_keys(layer, self.stack.interfaces.len(), self.is_transmission())
            .into_iter()
            .map(|(interface, side)| ColGroup::Mfs { layer, interface, side })
            .collect()
    }

    fn layer_sources(&self, layer: usize) -> impl Iterator<Item = &[Vec3]> + '_ {
        mfs_keys(layer, self.stack.interfaces.len(), self.is_transmission())
            .into_iter()
            .map(move |key| self.sources[&key].as_slice())
    }

    /// Contiguous column range of a layer's MFS coefficients.
    pub fn layer_cols(&self, layer: usize) -> Range<usize> {
        let groups = self.layer_groups(layer);
        let first = self.layout.col_range(groups[0]).unwrap();
        let last = self.layout.col_range(*groups.last().unwrap()).unwrap();
        first.start..last.end
    }

    /// Rows and columns removed by the Schur complement for `layer`: its walls and proxies,
    /// plus the lid and Bragg amplitudes where the layer touches a lid.
    pub fn eliminated(&self, layer: usize) -> (Vec<RowBlock>, Vec<ColGroup>) {
        let mut rows = vec![RowBlock::Walls(layer)];
        let mut cols = vec![ColGroup::Proxy(layer)];
        if layer == 1 {
            rows.push(RowBlock::Lid(Direction::Up));
            cols.push(ColGroup::Bragg(Direction::Up));
        }
        if self.stack.is_bottom_layer(layer) {
            rows.push(RowBlock::Lid(Direction::Down));
            cols.push(ColGroup::Bragg(Direction::Down));
        }
        (rows, cols)
    }

    fn row_segs(&self, row: RowBlock) -> Vec<Seg<'_>> {
        match row {
            RowBlock::Interface(i) => {
                let targets = self.colloc[i - 1].as_slice();
                let mut segs = vec![Seg::Plain { targets, deriv: Deriv::Value }];
                if self.is_transmission() {
                    segs.push(Seg::Plain { targets, deriv: Deriv::Normal });
                }
                segs
            }
            RowBlock::Walls(layer) => wall_segs(&self.layers[layer - 1].walls),
            RowBlock::Lid(dir) => {
                let targets = match dir {
                    Direction::Up => self.lid_up.as_slice(),
                    Direction::Down => self.lid_down.as_slice(),
                };
                vec![
                    Seg::Plain { targets, deriv: Deriv::Value },
                    Seg::Plain { targets, deriv: Deriv::Normal },
                ]
            }
        }
    }

    /// Sign with which `col` enters `row`, or `None` for a structurally zero block.
    pub fn coupling(&self, row: RowBlock, col: ColGroup) -> Option<f64> {
        let bottom = self.n_layers();
        match (row, col) {
            (RowBlock::Interface(i), ColGroup::Mfs { layer, .. } | ColGroup::Proxy(layer)) => {
                if layer == i {
                    Some(1.0)
                } else if layer == i + 1 && self.is_transmission() {
                    Some(-1.0)
                } else {
                    None
                }
            }
            (RowBlock::Walls(l), ColGroup::Mfs { layer, .. } | ColGroup::Proxy(layer)) => {
                (l == layer).then_some(1.0)
            }
            (RowBlock::Lid(Direction::Up), ColGroup::Mfs { layer, .. } | ColGroup::Proxy(layer)) => {
                (layer == 1).then_some(1.0)
            }
            (RowBlock::Lid(Direction::Down), ColGroup::Mfs { layer, .. } | ColGroup::Proxy(layer)) => {
                (layer == bottom && self.is_transmission()).then_some(1.0)
            }
            (RowBlock::Lid(d), ColGroup::Bragg(e)) => (d == e).then_some(-1.0),
            _ => None,
        }
    }

    fn src(&self, col: ColGroup) -> Result<(Src<'_>, f64)> {
        match col {
            ColGroup::Mfs { layer, interface, side } => {
                Ok((Src::Mfs(&self.sources[&(interface, side)]), self.layers[layer - 1].k))
            }
            ColGroup::Proxy(layer) => {
                let lp = &self.layers[layer - 1];
                Ok((Src::Proxy(&lp.proxies), lp.k))
            }
            ColGroup::Bragg(Direction::Up) => Ok((Src::Modes(&self.modes_up), self.modes_up.k_layer)),
            ColGroup::Bragg(Direction::Down) => {
                let md = self
                    .modes_down
                    .as_ref()
                    .ok_or_else(|| Error::Assembly("no lower lid in a half-space problem".into()))?;
                Ok((Src::Modes(md), md.k_layer))
            }
        }
    }

    /// Rows `rows` (relative to the block row) of block `(row, col)`, or `None` if the block is
    /// structurally zero.
    pub fn block_rows(
        &self,
        row: RowBlock,
        col: ColGroup,
        rows: Range<usize>,
    ) -> Result<Option<Mat<Complex64>>> {
        let Some(sign) = self.coupling(row, col) else { return Ok(None) };
        let ncols = self.layout.col_range(col).map(|r| r.len()).unwrap_or(0);
        let mut out = Mat::zeros(rows.len(), ncols);
        self.fill_block(out.as_mut(), row, col, rows, sign)?;
        Ok(Some(out))
    }

    /// Writes rows `rows` of block `(row, col)` into `out`. The block must be coupled.
    pub(crate) fn fill_block(
        &self,
        out: MatMut<'_, Complex64>,
        row: RowBlock,
        col: ColGroup,
        rows: Range<usize>,
        sign: f64,
    ) -> Result<()> {
        let (src, k) = self.src(col)?;
        fill_segs(out, &self.row_segs(row), rows, src, k, &self.inc, sign)
    }

    /// Whole block `(row, col)`.
    pub fn block(&self, row: RowBlock, col: ColGroup) -> Result<Option<Mat<Complex64>>> {
        let n = self.layout.row_range(row).map(|r| r.len()).unwrap_or(0);
        self.block_rows(row, col, 0..n)
    }

    /// Right-hand side of block row `row` for incidence `inc`. Only the first interface is forced.
    pub fn rhs_block_for(&self, row: RowBlock, inc: &Incidence) -> Vec<Complex64> {
        let n = self.layout.row_range(row).map(|r| r.len()).unwrap_or(0);
        if row != RowBlock::Interface(1) {
            return vec![ZERO; n];
        }
        let targets = &self.colloc[0];
        let mut out: Vec<Complex64> = targets.iter().map(|t| -plane_wave(inc, &t.point)).collect();
        if self.is_transmission() {
            out.extend(targets.iter().map(|t| -plane_wave_dn(inc, &t.point, &t.normal)));
        }
        out
    }

    /// Full right-hand side for the model's own incidence.
    pub fn rhs(&self) -> Vec<Complex64> {
        self.rhs_for(&self.inc)
    }

    /// Full right-hand side for another incidence with the same Bloch phases.
    pub fn rhs_for(&self, inc: &Incidence) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.layout.nrows());
        for (row, _) in &self.layout.rows {
            out.extend(self.rhs_block_for(*row, inc));
        }
        out
    }

    /// `M x - rhs` block row by block row, without materializing the system.
    pub fn residual(&self, x: &[Complex64], rhs: &[Complex64]) -> Result<Vec<Complex64>> {
        const CHUNK: usize = 2048;
        let mut out = rhs.iter().map(|v| -v).collect::<Vec<_>>();
        for (row, rr) in &self.layout.rows {
            let mut start = 0;
            while start < rr.len() {
                let end = (start + CHUNK).min(rr.len());
                for (col, cr) in &self.layout.cols {
                    if let Some(b) = self.block_rows(*row, *col, start..end)? {
                        let xs = faer::ColRef::from_slice(&x[cr.clone()]);
                        let y = &b * xs;
                        for (i, r) in (start..end).enumerate() {
                            out[rr.start + r] += y[i];
                        }
                    }
                }
                start = end;
            }
        }
        Ok(out)
    }
}

/// `(interface, side)` of the MFS source sets in a layer's representation, in layout order.
fn mfs_keys(layer: usize, n_int: usize, transmission: bool) -> Vec<(usize, Side)> {
    if !transmission {
        return vec![(1, Side::Below)];
    }
    let mut out = Vec::with_capacity(2);
    if layer <= n_int {
        out.push((layer, Side::Below));
    }
    if layer >= 2 {
        out.push((layer - 1, Side::Above));
    }
    out
}

/// A fully materialized system. Structurally zero blocks are never stored.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub model: Model,
    pub layout: Layout,
    pub blocks: BTreeMap<(RowBlock, ColGroup), Mat<Complex64>>,
    pub rhs: Vec<Complex64>,
}

impl BlockSystem {
    /// Materializes every coupled block of `model`.
    pub fn from_model(model: &Model) -> Result<Self> {
        let mut blocks = BTreeMap::new();
        for (row, _) in &model.layout.rows {
            for (col, _) in &model.layout.cols {
                if let Some(b) = model.block(*row, *col)? {
                    blocks.insert((*row, *col), b);
                }
            }
        }
        Ok(Self { model: model.clone(), layout: model.layout.clone(), blocks, rhs: model.rhs() })
    }

    pub fn block(&self, row: RowBlock, col: ColGroup) -> Option<&Mat<Complex64>> {
        self.blocks.get(&(row, col))
    }

    pub fn to_dense(&self) -> Mat<Complex64> {
        let mut out = Mat::zeros(self.layout.nrows(), self.layout.ncols());
        for ((row, col), b) in &self.blocks {
            let rr = self.layout.row_range(*row).unwrap();
            let cr = self.layout.col_range(*col).unwrap();
            out.as_mut().submatrix_mut(rr.start, cr.start, rr.len(), cr.len()).copy_from(b);
        }
        out
    }
}

/// Half-space system `[[A B 0]; [P Q 0]; [Z V -W]]` with right-hand side `[-u_inc; 0; 0]`.
pub fn assemble_dirichlet(stack: &LayerStack, disc: &Discretization, inc: &Incidence) -> Result<BlockSystem> {
    if stack.mode != Mode::Dirichlet {
        return Err(Error::Assembly("assemble_dirichlet needs a Dirichlet stack".into()));
    }
    BlockSystem::from_model(&Model::new(stack, disc, inc)?)
}

/// Transmission system over all layers. Lower-layer blocks of each interface row carry the
/// minus sign of the jump conditions.
pub fn assemble_multilayer(stack: &LayerStack, disc: &Discretization, inc: &Incidence) -> Result<BlockSystem> {
    if stack.mode != Mode::Transmission {
        return Err(Error::Assembly("assemble_multilayer needs a transmission stack".into()));
    }
    BlockSystem::from_model(&Model::new(stack, disc, inc)?)
}
