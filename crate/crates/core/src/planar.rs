//! Exact plane-wave solution for stacks of flat interfaces. Serves as the analytic reference for
//! pointwise errors.

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{LayerStack, Mode};
use crate::kernels::{vertical_wavenumber, Incidence, Vec3};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Layer `j` carries `D_j exp(-i kz_j (z - top_j)) + U_j exp(i kz_j (z - bottom_j))` times the
/// transverse phase. References sit on the layer's own interfaces so evanescent terms never grow.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSolution {
    pub mode: Mode,
    pub k_x: f64,
    pub k_y: f64,
    pub kz: Vec<Complex64>,
    /// Interface heights, top to bottom.
    pub heights: Vec<f64>,
    pub down: Vec<Complex64>,
    pub up: Vec<Complex64>,
    z_u: f64,
    z_d: f64,
}

impl PlanarSolution {
    fn top(&self, j: usize) -> f64 {
        if j == 0 { 0.0 } else { self.heights[j - 1] }
    }

    fn bottom(&self, j: usize) -> f64 {
        self.heights.get(j).copied().unwrap_or(0.0)
    }

    /// Total field (incident included) anywhere; zero inside a sound-soft half-space.
    pub fn field(&self, x: &Vec3) -> Complex64 {
        let z = x[2];
        let j = self.heights.iter().take_while(|&&h| z < h).count();
        if self.mode == Mode::Dirichlet && j > 0 {
            return Complex64::new(0.0, 0.0);
        }
        let lateral = Complex64::from_polar(1.0, self.k_x * x[0] + self.k_y * x[1]);
        let kz = self.kz[j];
        lateral
            * (self.down[j] * (-I * kz * (z - self.top(j))).exp()
                + self.up[j] * (I * kz * (z - self.bottom(j))).exp())
    }

    /// Specular upward Bragg amplitude referenced to the upper lid.
    pub fn a_up(&self) -> Complex64 {
        self.up[0] * (I * self.kz[0] * (self.z_u - self.heights[0])).exp()
    }

    /// Specular downward Bragg amplitude referenced to the lower lid (transmission only).
    pub fn a_down(&self) -> Option<Complex64> {
        if self.mode == Mode::Dirichlet {
            return None;
        }
        let j = self.heights.len();
        Some(self.down[j] * (-I * self.kz[j] * (self.z_d - self.top(j))).exp())
    }

    /// Reflected and transmitted energy fractions.
    pub fn energy_fractions(&self) -> (f64, f64) {
        let inc = self.kz[0].re;
        let r = self.kz[0].re * self.up[0].norm_sqr() / inc;
        let t = match self.a_down() {
            Some(d) => self.kz[self.heights.len()].re * d.norm_sqr() / inc,
            None => 0.0,
        };
        (r, t)
    }
}

/// Solves the interface conditions of a flat stack exactly. Fails for curved interfaces.
pub fn planar_reference(stack: &LayerStack, inc: &Incidence) -> Result<PlanarSolution> {
    let mut heights = Vec::with_capacity(stack.interfaces.len());
    for (i, s) in stack.interfaces.iter().enumerate() {
        if s.terms.iter().any(|t| t.amplitude != 0.0) {
            return Err(Error::Domain(format!("interface {} is not flat", i + 1)));
        }
        heights.push(s.offset);
    }
    let (k_x, k_y) = (inc.k_x(), inc.k_y());
    let n_layers = stack.n_layers();
    let kz: Vec<Complex64> =
        (1..=n_layers).map(|l| vertical_wavenumber(stack.wavenumber(l), k_x, k_y)).collect();
    let mut sol = PlanarSolution {
        mode: stack.mode,
        k_x,
        k_y,
        kz,
        heights,
        down: vec![Complex64::new(0.0, 0.0); n_layers],
        up: vec![Complex64::new(0.0, 0.0); n_layers],
        z_u: stack.z_u,
        z_d: stack.z_d,
    };
    sol.down[0] = Complex64::new(1.0, 0.0);
    if stack.mode == Mode::Dirichlet {
        let h = sol.heights[0];
        sol.up[0] = -(-I * sol.kz[0] * h).exp();
        return Ok(sol);
    }

    // Unknowns: U_1, then (D_j, U_j) for middle layers, then D_J.
    let n_if = sol.heights.len();
    let n = 2 * n_if;
    let col_d = |j: usize| 2 * j - 1;
    let col_u = |j: usize| if j == 0 { 0 } else { 2 * j };
    let mut m = Mat::<Complex64>::zeros(n, n);
    let mut b = Mat::<Complex64>::zeros(n, 1);
    for i in 0..n_if {
        let h = sol.heights[i];
        let (above, below) = (i, i + 1);
        let (r0, r1) = (2 * i, 2 * i + 1);
        // Value and z-derivative of each term at z = h, entered as above minus below.
        let mut put = |layer: usize, is_up: bool, sign: f64| {
            let kz = sol.kz[layer];
            let (e, d) = if is_up {
                let e = (I * kz * (h - sol.bottom(layer))).exp();
                (e, I * kz * e)
            } else {
                let e = (-I * kz * (h - sol.top(layer))).exp();
                (e, -I * kz * e)
            };
            if layer == 0 && !is_up {
                b[(r0, 0)] -= sign * e;
                b[(r1, 0)] -= sign * d;
                return;
            }
            let c = if is_up { col_u(layer) } else { col_d(layer) };
            m[(r0, c)] += sign * e;
            m[(r1, c)] += sign * d;
        };
        put(above, false, 1.0);
        put(above, true, 1.0);
        put(below, false, -1.0);
        if below < n_if {
            put(below, true, -1.0);
        }
    }
    let x = m.partial_piv_lu().solve(&b);
    if x.col(0).iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical { stage: "planar reference", detail: "singular interface system".into() });
    }
    sol.up[0] = x[(0, 0)];
    for j in 1..=n_if {
        sol.down[j] = x[(col_d(j), 0)];
        if j < n_if {
            sol.up[j] = x[(col_u(j), 0)];
        }
    }
    Ok(sol)
}
