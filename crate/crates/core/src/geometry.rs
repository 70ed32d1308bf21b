//! Periodic interfaces, layer stacks and every point set the scheme places on them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Vec3;

/// Trigonometric factor of a surface term along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    Sin,
    Cos,
    One,
}

impl Trig {
    /// Value and derivative with respect to the argument.
    #[inline]
    fn eval(self, arg: f64) -> (f64, f64) {
        match self {
            Trig::Sin => (arg.sin(), arg.cos()),
            Trig::Cos => (arg.cos(), -arg.sin()),
            Trig::One => (1.0, 0.0),
        }
    }
}

/// `amplitude * fx(2 pi p x / e_x) * fy(2 pi q y / e_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceTerm {
    pub amplitude: f64,
    pub p: i32,
    pub q: i32,
    pub fx: Trig,
    pub fy: Trig,
}

/// A doubly-periodic graph surface `z = g(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSurface {
    pub terms: Vec<SurfaceTerm>,
    pub offset: f64,
    pub e_x: f64,
    pub e_y: f64,
}

/// Height, gradient and upward unit normal of a surface at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub z: f64,
    pub grad: [f64; 2],
    pub normal: Vec3,
}

/// A point with an attached unit normal; every target of the scheme is one of these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub point: Vec3,
    pub normal: Vec3,
}

impl PeriodicSurface {
    pub fn new(terms: Vec<SurfaceTerm>, offset: f64, e_x: f64, e_y: f64) -> Self {
        Self { terms, offset, e_x, e_y }
    }

    pub fn flat(offset: f64, e_x: f64, e_y: f64) -> Self {
        Self::new(Vec::new(), offset, e_x, e_y)
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.sample(x, y).z
    }

    pub fn sample(&self, x: f64, y: f64) -> SurfaceSample {
        let (wx, wy) = (2.0 * PI / self.e_x, 2.0 * PI / self.e_y);
        let mut z = self.offset;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for t in &self.terms {
            let (ax, bx) = (wx * t.p as f64, wy * t.q as f64);
            let (fx, dfx) = t.fx.eval(ax * x);
            let (fy, dfy) = t.fy.eval(bx * y);
            z += t.amplitude * fx * fy;
            gx += t.amplitude * ax * dfx * fy;
            gy += t.amplitude * bx * fx * dfy;
        }
        let normal = Vec3::new(-gx, -gy, 1.0).normalize();
        SurfaceSample { z, grad: [gx, gy], normal }
    }

    /// Sampled (min, max) of the height over one period on a 257 x 257 grid.
    pub fn bounds(&self) -> (f64, f64) {
        if self.terms.is_empty() {
            return (self.offset, self.offset);
        }
        let n = 257;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            for j in 0..n {
                let z = self.height(self.e_x * i as f64 / (n - 1) as f64, self.e_y * j as f64 / (n - 1) as f64);
                lo = lo.min(z);
                hi = hi.max(z);
            }
        }
        (lo, hi)
    }

    /// Mean height over a period (the constant offset, since every other term integrates to zero
    /// unless both factors are constant).
    pub fn mean(&self) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .filter(|t| {
                    (t.fx == Trig::One || (t.fx == Trig::Cos && t.p == 0))
                        && (t.fy == Trig::One || (t.fy == Trig::Cos && t.q == 0))
                })
                .map(|t| t.amplitude)
                .sum::<f64>()
    }
}

/// Height, gradient and normal of `s` at `(x, y)`.
pub fn surface_eval(s: &PeriodicSurface, x: f64, y: f64) -> SurfaceSample {
    s.sample(x, y)
}

/// Boundary condition on the single interface of a half-space problem, or transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dirichlet,
    Transmission,
}

/// Interfaces ordered top to bottom, one wavenumber per layer that carries a field, and the
/// artificial lids where radiation conditions are imposed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub mode: Mode,
    pub interfaces: Vec<PeriodicSurface>,
    pub wavenumbers: Vec<f64>,
    pub z_u: f64,
    pub z_d: f64,
    pub e_x: f64,
    pub e_y: f64,
}

/// Default distance between an interface extreme and the adjacent lid.
pub const DEFAULT_LID_GAP: f64 = 0.5;

impl LayerStack {
    /// Sound-soft half-space above `surface`. The lid defaults to `max g + 0.5`.
    pub fn dirichlet(surface: PeriodicSurface, k: f64, z_u: Option<f64>) -> Result<Self> {
        let (lo, hi) = surface.bounds();
        let stack = Self {
            mode: Mode::Dirichlet,
            e_x: surface.e_x,
            e_y: surface.e_y,
            z_u: z_u.unwrap_or(hi + DEFAULT_LID_GAP),
            z_d: lo - DEFAULT_LID_GAP,
            interfaces: vec![surface],
            wavenumbers: vec![k],
        };
        stack.validate()?;
        Ok(stack)
    }

    /// Penetrable stack with `interfaces.len() + 1` layers.
    pub fn transmission(
        interfaces: Vec<PeriodicSurface>,
        wavenumbers: Vec<f64>,
        z_u: Option<f64>,
        z_d: Option<f64>,
    ) -> Result<Self> {
        let first = interfaces
            .first()
            .ok_or_else(|| Error::Geometry("a stack needs at least one interface".into()))?;
        let last = interfaces.last().unwrap();
        let stack = Self {
            mode: Mode::Transmission,
            e_x: first.e_x,
            e_y: first.e_y,
            z_u: z_u.unwrap_or(first.bounds().1 + DEFAULT_LID_GAP),
            z_d: z_d.unwrap_or(last.bounds().0 - DEFAULT_LID_GAP),
            interfaces,
            wavenumbers,
        };
        stack.validate()?;
        Ok(stack)
    }

    /// Checks ordering, lid placement and wavenumbers.
    pub fn validate(&self) -> Result<()> {
        let expected = match self.mode {
            Mode::Dirichlet => 1,
            Mode::Transmission => self.interfaces.len() + 1,
        };
        if self.mode == Mode::Dirichlet && self.interfaces.len() != 1 {
            return Err(Error::Geometry(format!(
                "a Dirichlet half-space has exactly one interface, got {}",
                self.interfaces.len()
            )));
        }
        if self.wavenumbers.len() != expected {
            return Err(Error::Geometry(format!(
                "expected {expected} layer wavenumbers, got {}",
                self.wavenumbers.len()
            )));
        }
        if let Some(k) = self.wavenumbers.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::Geometry(format!("wavenumbers must be positive, got {k}")));
        }
        if !(self.e_x > 0.0 && self.e_y > 0.0) {
            return Err(Error::Geometry("periods must be positive".into()));
        }
        for (i, s) in self.interfaces.iter().enumerate() {
            if s.e_x != self.e_x || s.e_y != self.e_y {
                return Err(Error::Geometry(format!("interface {} has mismatched periods", i + 1)));
            }
        }
        for i in 1..self.interfaces.len() {
            let (upper_lo, _) = self.interfaces[i - 1].bounds();
            let (_, lower_hi) = self.interfaces[i].bounds();
            if lower_hi >= upper_lo {
                return Err(Error::Geometry(format!(
                    "interfaces intersect: interface {} (max {lower_hi}) reaches interface {} (min {upper_lo})",
                    i + 1,
                    i
                )));
            }
        }
        let (_, top_hi) = self.interfaces[0].bounds();
        if self.z_u <= top_hi {
            return Err(Error::Geometry(format!(
                "upper lid z_u = {} must lie above the top interface (max {top_hi})",
                self.z_u
            )));
        }
        if self.mode == Mode::Transmission {
            let (bottom_lo, _) = self.interfaces.last().unwrap().bounds();
            if self.z_d >= bottom_lo {
                return Err(Error::Geometry(format!(
                    "lower lid z_d = {} must lie below the bottom interface (min {bottom_lo})",
                    self.z_d
                )));
            }
        }
        Ok(())
    }

    /// Number of layers that carry an unknown field.
    pub fn n_layers(&self) -> usize {
        match self.mode {
            Mode::Dirichlet => 1,
            Mode::Transmission => self.interfaces.len() + 1,
        }
    }

    pub fn is_bottom_layer(&self, layer: usize) -> bool {
        self.mode == Mode::Transmission && layer == self.n_layers()
    }

    /// Wavenumber of layer `layer` (1-based).
    pub fn wavenumber(&self, layer: usize) -> f64 {
        self.wavenumbers[layer - 1]
    }

    /// Height of the upper boundary of `layer` at `(x, y)`.
    pub fn upper_trace(&self, layer: usize, x: f64, y: f64) -> f64 {
        if layer == 1 {
            self.z_u
        } else {
            self.interfaces[layer - 2].height(x, y)
        }
    }

    /// Height of the lower boundary of `layer` at `(x, y)`.
    pub fn lower_trace(&self, layer: usize, x: f64, y: f64) -> f64 {
        if layer <= self.interfaces.len() {
            self.interfaces[layer - 1].height(x, y)
        } else {
            self.z_d
        }
    }

    /// Vertical extent `(bottom, top)` of a layer including interface excursions.
    pub fn layer_extent(&self, layer: usize) -> (f64, f64) {
        let top = if layer == 1 { self.z_u } else { self.interfaces[layer - 2].bounds().1 };
        let bottom = if layer <= self.interfaces.len() {
            self.interfaces[layer - 1].bounds().0
        } else {
            self.z_d
        };
        (bottom, top)
    }
}

/// Proxy sphere placement for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxySphere {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Point counts and placement parameters. Counts are per side of a square grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretization {
    /// Collocation grid side; `ceil(1.1 * n_src)` when `None`.
    pub n_colloc: Option<usize>,
    pub n_src: usize,
    pub tau: f64,
    pub l: usize,
    pub n_t: usize,
    pub n_w: usize,
    pub order: usize,
    /// Multiplier on the enclosing radius of the 3 x 3 cell block.
    pub proxy_radius_factor: f64,
    /// Per-layer overrides (index 0 is layer 1).
    pub proxy_overrides: Vec<Option<ProxySphere>>,
    /// Relative singular-value cutoff of every pseudo-inverse and least-squares solve.
    pub rel_tol: f64,
}

pub const DEFAULT_TAU: f64 = 0.03;
pub const DEFAULT_ORDER: usize = 10;
pub const DEFAULT_REL_TOL: f64 = 1e-12;
pub const DEFAULT_PROXY_RADIUS_FACTOR: f64 = 1.1;

impl Discretization {
    /// Defaults: `tau = 0.03`, `R = 10`, `rel_tol = 1e-12`.
    pub fn new(n_src: usize, l: usize, n_t: usize, n_w: usize) -> Self {
        Self {
            n_colloc: None,
            n_src,
            tau: DEFAULT_TAU,
            l,
            n_t,
            n_w,
            order: DEFAULT_ORDER,
            proxy_radius_factor: DEFAULT_PROXY_RADIUS_FACTOR,
            proxy_overrides: Vec::new(),
            rel_tol: DEFAULT_REL_TOL,
        }
    }

    /// Collocation grid side `m`, `M = m^2`.
    pub fn m(&self) -> usize {
        self.n_colloc.unwrap_or_else(|| (1.1 * self.n_src as f64 - 1e-9).ceil() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Geometry(format!("tau must be positive, got {}", self.tau)));
        }
        if self.n_src == 0 || self.m() == 0 || self.n_t == 0 || self.n_w == 0 {
            return Err(Error::Geometry("point counts must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::Geometry(format!("rel_tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if !(self.proxy_radius_factor > 0.0) {
            return Err(Error::Geometry("proxy radius factor must be positive".into()));
        }
        // Fewer lid samples than modes per direction leaves the amplitudes undetermined.
        if 2 * self.order + 1 > self.n_t {
            return Err(Error::Geometry(format!(
                "Bragg order {} needs n_t >= {} lid points per direction, got {}",
                self.order,
                2 * self.order + 1,
                self.n_t
            )));
        }
        Ok(())
    }

    /// Proxy sphere of `layer`: centered on the cell column at the middle of the layer extent,
    /// radius `factor * sqrt((1.5 e_x)^2 + (1.5 e_y)^2 + h^2)` with `h` the half-height.
    pub fn proxy_sphere_for(&self, stack: &LayerStack, layer: usize) -> ProxySphere {
        if let Some(Some(p)) = self.proxy_overrides.get(layer - 1) {
            return *p;
        }
        let (bottom, top) = stack.layer_extent(layer);
        let half = 0.5 * (top - bottom);
        let radius = self.proxy_radius_factor
            * ((1.5 * stack.e_x).powi(2) + (1.5 * stack.e_y).powi(2) + half * half).sqrt();
        ProxySphere { center: [0.5 * stack.e_x, 0.5 * stack.e_y, 0.5 * (top + bottom)], radius }
    }
}

#[inline]
fn cell_center(i: usize, n: usize, period: f64) -> f64 {
    (i as f64 + 0.5) * period / n as f64
}

/// `m^2` collocation points on a cell-centered grid with their upward normals. The `x` index
/// varies slowest.
pub fn collocation_points(s: &PeriodicSurface, m: usize) -> Vec<Target> {
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        let x = cell_center(i, m, s.e_x);
        for j in 0..m {
            let y = cell_center(j, m, s.e_y);
            let smp = s.sample(x, y);
            out.push(Target { point: Vec3::new(x, y, smp.z), normal: smp.normal });
        }
    }
    out
}

/// Which side of an interface a source set lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Above,
    Below,
}

/// `n_src^2` MFS sources displaced by `tau` along the unit normal from a cell-centered grid.
///
/// Fails with [`Error::Curvature`] when the displaced grid folds over: two sources closer than a
/// tenth of the grid spacing, or a neighbor pair whose ordering reverses relative to the surface.
pub fn mfs_sources(s: &PeriodicSurface, n_src: usize, tau: f64, side: Side) -> Result<Vec<Vec3>> {
    if !(tau > 0.0) {
        return Err(Error::Geometry(format!("tau must be positive, got {tau}")));
    }
    let sign = match side {
        Side::Above => 1.0,
        Side::Below => -1.0,
    };
    let surf = collocation_points(s, n_src);
    let src: Vec<Vec3> = surf.iter().map(|t| t.point + t.normal * (sign * tau)).collect();
    check_fold_over(&surf, &src, n_src, s.e_x.min(s.e_y) / n_src as f64, tau)?;
    Ok(src)
}

fn check_fold_over(surf: &[Target], src: &[Vec3], n: usize, spacing: f64, tau: f64) -> Result<()> {
    let fold = |msg: String| {
        Err(Error::Curvature(format!(
            "{msg}; tau = {tau} exceeds the local radius of curvature"
        )))
    };
    for i in 0..n {
        for j in 0..n {
            let a = i * n + j;
            for b in [(i + 1 < n).then(|| a + n), (j + 1 < n).then(|| a + 1)].into_iter().flatten() {
                let ds = surf[b].point - surf[a].point;
                if (src[b] - src[a]).dot(&ds) <= 0.0 {
                    return fold(format!("sources {a} and {b} reverse order"));
                }
            }
        }
    }
    let min_sep = 0.1 * spacing;
    // Only pairs within tau + a few spacings can come close after displacement.
    let reach = ((2.0 * tau) / spacing).ceil() as usize + 2;
    for i in 0..n {
        for j in 0..n {
            let a = i * n + j;
            for ii in i..(i + reach + 1).min(n) {
                let j0 = if ii == i { j + 1 } else { j.saturating_sub(reach) };
                for jj in j0..(j + reach + 1).min(n) {
                    let b = ii * n + jj;
                    if (src[a] - src[b]).norm() < min_sep {
                        return fold(format!("sources {a} and {b} closer than {min_sep}"));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Side-wall targets of one layer. Right and front walls are exact translates of the left and
/// back walls, index by index.
#[derive(Debug, Clone, PartialEq)]
pub struct Walls {
    pub left: Vec<Target>,
    pub right: Vec<Target>,
    pub back: Vec<Target>,
    pub front: Vec<Target>,
}

impl Walls {
    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// `n_w^2` points on each side wall of `layer` (1-based), uniform in the horizontal coordinate
/// and in the fraction `t` between the lower and upper boundary traces.
pub fn wall_points(stack: &LayerStack, layer: usize, n_w: usize) -> Result<Walls> {
    if layer == 0 || layer > stack.n_layers() {
        return Err(Error::Geometry(format!(
            "layer {layer} outside 1..={}",
            stack.n_layers()
        )));
    }
    let column = |x: f64, y: f64, normal: Vec3| -> Result<Vec<Target>> {
        let lo = stack.lower_trace(layer, x, y);
        let hi = stack.upper_trace(layer, x, y);
        if !(hi - lo > 1e-12) {
            return Err(Error::Geometry(format!(
                "layer {layer} has degenerate thickness at ({x}, {y})"
            )));
        }
        Ok((0..n_w)
            .map(|k| {
                let t = (k as f64 + 0.5) / n_w as f64;
                Target { point: Vec3::new(x, y, lo + t * (hi - lo)), normal }
            })
            .collect())
    };
    let mut left = Vec::with_capacity(n_w * n_w);
    let mut back = Vec::with_capacity(n_w * n_w);
    for j in 0..n_w {
        left.extend(column(0.0, cell_center(j, n_w, stack.e_y), Vec3::x())?);
        back.extend(column(cell_center(j, n_w, stack.e_x), 0.0, Vec3::y())?);
    }
    let shift = |pts: &[Target], d: Vec3| -> Vec<Target> {
        pts.iter().map(|t| Target { point: t.point + d, normal: t.normal }).collect()
    };
    let right = shift(&left, Vec3::new(stack.e_x, 0.0, 0.0));
    let front = shift(&back, Vec3::new(0.0, stack.e_y, 0.0));
    Ok(Walls { left, right, back, front })
}

/// `n_t^2` cell-centered points on a lid, `x` index slowest; normals are `+z`.
pub fn lid_points(stack: &LayerStack, which: crate::kernels::Direction, n_t: usize) -> Vec<Target> {
    let z = match which {
        crate::kernels::Direction::Up => stack.z_u,
        crate::kernels::Direction::Down => stack.z_d,
    };
    let mut out = Vec::with_capacity(n_t * n_t);
    for i in 0..n_t {
        for j in 0..n_t {
            out.push(Target {
                point: Vec3::new(cell_center(i, n_t, stack.e_x), cell_center(j, n_t, stack.e_y), z),
                normal: Vec3::z(),
            });
        }
    }
    out
}

/// `l^2` points on a sphere: Gauss-Legendre nodes in the cosine of the polar angle times `l`
/// equispaced azimuths.
pub fn proxy_sphere(center: &Vec3, radius: f64, l: usize) -> Vec<Vec3> {
    let (nodes, _) = gauss_legendre(l);
    let mut out = Vec::with_capacity(l * l);
    for &ct in &nodes {
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        for j in 0..l {
            let az = 2.0 * PI * j as f64 / l as f64;
            out.push(center + Vec3::new(st * az.cos(), st * az.sin(), ct) * radius);
        }
    }
    out
}

/// Gauss-Legendre nodes (ascending) and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Direction;

    fn corrugated() -> PeriodicSurface {
        PeriodicSurface::new(
            vec![SurfaceTerm { amplitude: 0.1, p: 1, q: 1, fx: Trig::Sin, fy: Trig::Cos }],
            0.0,
            1.0,
            1.0,
        )
    }

    fn second_interface() -> PeriodicSurface {
        PeriodicSurface::new(
            vec![SurfaceTerm { amplitude: -0.1, p: 0, q: 1, fx: Trig::One, fy: Trig::Sin }],
            -1.0,
            1.0,
            1.0,
        )
    }

    #[test]
    fn flat_surface_sample() {
        let s = PeriodicSurface::flat(0.0, 1.0, 1.0).sample(0.3, 0.8);
        assert_eq!(s.z, 0.0);
        assert_eq!(s.grad, [0.0, 0.0]);
        assert_eq!(s.normal, Vec3::z());
    }

    #[test]
    fn corrugated_crest() {
        let s = corrugated().sample(0.25, 0.0);
        assert!((s.z - 0.1).abs() < 1e-15);
        assert!(s.grad[0].abs() < 1e-15 && s.grad[1].abs() < 1e-15);
    }

    #[test]
    fn second_interface_value() {
        assert!((second_interface().height(0.37, 0.25) + 1.1).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let s = corrugated();
        let h = 1e-6;
        let smp = s.sample(0.13, 0.41);
        let gx = (s.height(0.13 + h, 0.41) - s.height(0.13 - h, 0.41)) / (2.0 * h);
        let gy = (s.height(0.13, 0.41 + h) - s.height(0.13, 0.41 - h)) / (2.0 * h);
        assert!((smp.grad[0] - gx).abs() < 1e-8 && (smp.grad[1] - gy).abs() < 1e-8);
        assert!(smp.normal[2] > 0.0);
    }

    #[test]
    fn collocation_grid() {
        let flat = PeriodicSurface::flat(0.0, 1.0, 1.0);
        let one = collocation_points(&flat, 1);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].point, Vec3::new(0.5, 0.5, 0.0));

        let pts = collocation_points(&corrugated(), 10);
        assert_eq!(pts.len(), 100);
        let mut xs: Vec<f64> = pts.iter().map(|t| t.point[0]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        assert_eq!(xs.len(), 10);
        for w in xs.windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-14);
        }
        for (a, t) in pts.iter().enumerate() {
            assert!((t.point[2] - corrugated().height(t.point[0], t.point[1])).abs() < 1e-15);
            for u in &pts[a + 1..] {
                assert!((t.point - u.point).norm() > 1e-3);
            }
        }
    }

    #[test]
    fn flat_sources_below() {
        let src = mfs_sources(&PeriodicSurface::flat(0.0, 1.0, 1.0), 5, 0.03, Side::Below).unwrap();
        assert!(src.iter().all(|p| (p[2] + 0.03).abs() < 1e-15));
    }

    #[test]
    fn sources_at_distance_tau() {
        let s = corrugated();
        for side in [Side::Above, Side::Below] {
            let src = mfs_sources(&s, 12, 0.03, side).unwrap();
            let surf = collocation_points(&s, 12);
            for (p, t) in src.iter().zip(&surf) {
                assert!(((p - t.point).norm() - 0.03).abs() < 1e-14);
                let g = s.height(p[0], p[1]);
                match side {
                    Side::Below => assert!(p[2] < g),
                    Side::Above => assert!(p[2] > g),
                }
            }
        }
    }

    #[test]
    fn fold_over_detected() {
        for n in [10, 20, 40] {
            let err = mfs_sources(&corrugated(), n, 0.5, Side::Below).unwrap_err();
            assert!(matches!(err, Error::Curvature(_)), "{err}");
        }
    }

    #[test]
    fn walls_of_flat_dirichlet_layer() {
        let stack = LayerStack::dirichlet(PeriodicSurface::flat(0.0, 1.0, 1.0), 10.0, Some(1.0)).unwrap();
        let w = wall_points(&stack, 1, 4).unwrap();
        assert_eq!(w.len(), 16);
        let mut zs: Vec<f64> = w.left.iter().map(|t| t.point[2]).collect();
        zs.sort_by(f64::total_cmp);
        zs.dedup();
        assert_eq!(zs, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(w.left.iter().all(|t| t.point[0] == 0.0 && t.normal == Vec3::x()));
        for (l, r) in w.left.iter().zip(&w.right) {
            assert_eq!(r.point, l.point + Vec3::new(1.0, 0.0, 0.0));
        }
        for (b, f) in w.back.iter().zip(&w.front) {
            assert_eq!(f.point, b.point + Vec3::new(0.0, 1.0, 0.0));
            assert_eq!(b.normal, Vec3::y());
        }
    }

    #[test]
    fn wall_range_follows_interface_traces() {
        let stack = LayerStack::transmission(
            vec![corrugated(), second_interface()],
            vec![1.0, 2.0, 3.0],
            None,
            None,
        )
        .unwrap();
        assert!((stack.lower_trace(2, 0.0, 0.25) + 1.1).abs() < 1e-15);
        assert!(stack.upper_trace(2, 0.0, 0.25).abs() < 1e-15);
        let w = wall_points(&stack, 2, 4).unwrap();
        for t in &w.left {
            let lo = stack.lower_trace(2, 0.0, t.point[1]);
            let hi = stack.upper_trace(2, 0.0, t.point[1]);
            assert!(t.point[2] > lo && t.point[2] < hi);
        }
    }

    #[test]
    fn intersecting_interfaces_rejected() {
        let err = LayerStack::transmission(
            vec![second_interface(), corrugated()],
            vec![1.0, 2.0, 3.0],
            None,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("interfaces intersect"), "{err}");
    }

    #[test]
    fn lid_grid() {
        let stack = LayerStack::dirichlet(PeriodicSurface::flat(0.0, 1.0, 1.0), 10.0, Some(0.7)).unwrap();
        let one = lid_points(&stack, Direction::Up, 1);
        assert_eq!(one[0].point, Vec3::new(0.5, 0.5, 0.7));
        let many = lid_points(&stack, Direction::Up, 30);
        assert_eq!(many.len(), 900);
        assert!(many.iter().all(|t| t.point[2] == 0.7));
    }

    #[test]
    fn proxy_points_on_sphere() {
        let c = Vec3::new(0.5, 0.5, 0.25);
        let pts = proxy_sphere(&c, 2.5, 7);
        assert_eq!(pts.len(), 49);
        assert!(pts.iter().all(|p| ((p - c).norm() - 2.5).abs() < 1e-14));
        let two = proxy_sphere(&c, 1.0, 2);
        assert_eq!(two.len(), 4);
        let a0 = (two[0][1] - c[1]).atan2(two[0][0] - c[0]);
        let a1 = (two[1][1] - c[1]).atan2(two[1][0] - c[0]);
        assert!(((a1 - a0).abs() - PI).abs() < 1e-14);
    }

    #[test]
    fn default_proxy_sphere_encloses_neighbor_block() {
        // Slab of half-height 1 around z = 0 with unit periods.
        let stack = LayerStack::dirichlet(PeriodicSurface::flat(-1.0, 1.0, 1.0), 1.0, Some(1.0)).unwrap();
        let mut disc = Discretization::new(4, 4, 2, 2);
        let p = disc.proxy_sphere_for(&stack, 1);
        let bare = (1.5f64.powi(2) * 2.0 + 1.0).sqrt();
        assert!((bare - 2.345).abs() < 1e-3);
        assert!((p.radius - 1.1 * bare).abs() < 1e-12);
        disc.proxy_radius_factor = 2.5 / bare;
        let p = disc.proxy_sphere_for(&stack, 1);
        let c = Vec3::from(p.center);
        for m in -1..=1 {
            for n in -1..=1 {
                for corner in 0..8 {
                    let v = Vec3::new(
                        m as f64 + (corner & 1) as f64,
                        n as f64 + ((corner >> 1) & 1) as f64,
                        if corner & 4 == 0 { -1.0 } else { 1.0 },
                    );
                    assert!((v - c).norm() < p.radius);
                }
            }
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(9);
        for deg in 0..18 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "deg {deg}: {q}");
        }
    }

    #[test]
    fn collocation_count_rule() {
        assert_eq!(Discretization::new(70, 1, 1, 1).m(), 77);
        assert_eq!(Discretization::new(60, 1, 1, 1).m(), 66);
        assert_eq!(Discretization::new(10, 1, 1, 1).m(), 11);
        assert_eq!(Discretization::new(25, 1, 1, 1).m(), 28);
    }
}
