//! Free-space Helmholtz kernel, quasi-periodic plane waves and Rayleigh-Bloch modes.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const FOUR_PI: f64 = 4.0 * PI;
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `exp(ikr) / (4 pi r)` for a separation vector `d = x - y`, `|d| > 0`.
#[inline]
pub(crate) fn green_value(k: f64, d: &Vec3) -> Complex64 {
    let r = d.norm();
    let (s, c) = (k * r).sin_cos();
    Complex64::new(c, s) / (FOUR_PI * r)
}

/// Value and target-normal derivative of the kernel for `d = x - y`, `|d| > 0`.
#[inline]
pub(crate) fn green_value_dn(k: f64, d: &Vec3, n: &Vec3) -> (Complex64, Complex64) {
    let r = d.norm();
    let (s, c) = (k * r).sin_cos();
    let g = Complex64::new(c, s) / (FOUR_PI * r);
    let radial = n.dot(d) / r;
    (g, g * Complex64::new(-1.0 / r, k) * radial)
}

fn check_separation(x: &Vec3, y: &Vec3) -> Result<Vec3> {
    let d = x - y;
    if d.norm() == 0.0 {
        return Err(Error::Domain(format!(
            "kernel evaluated at coincident points ({}, {}, {})",
            x[0], x[1], x[2]
        )));
    }
    Ok(d)
}

/// Free-space Green's function of the 3D Helmholtz equation, `exp(ik|x-y|) / (4 pi |x-y|)`.
pub fn helmholtz_green(k: f64, x: &Vec3, y: &Vec3) -> Result<Complex64> {
    let d = check_separation(x, y)?;
    Ok(green_value(k, &d))
}

/// Directional derivative `n . grad_x G_k(x, y)`, taken at the target point `x`.
pub fn helmholtz_green_dn(k: f64, x: &Vec3, y: &Vec3, n: &Vec3) -> Result<Complex64> {
    let d = check_separation(x, y)?;
    Ok(green_value_dn(k, &d, n).1)
}

/// A downgoing plane wave and the Bloch phases it induces on the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incidence {
    pub k: f64,
    pub theta_inc: f64,
    pub phi_inc: f64,
    pub kvec: Vec3,
    pub alpha_x: Complex64,
    pub alpha_y: Complex64,
    pub e_x: f64,
    pub e_y: f64,
}

/// Builds the incidence for wavenumber `k`, azimuth `theta` and polar angle `phi` in `(pi/2, pi]`.
pub fn make_incidence(k: f64, theta: f64, phi: f64, e_x: f64, e_y: f64) -> Result<Incidence> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Domain(format!("wavenumber must be positive, got {k}")));
    }
    if !(phi > PI / 2.0 && phi <= PI) {
        return Err(Error::Domain(format!(
            "polar angle {phi} outside (pi/2, pi]; the incident wave must travel downward"
        )));
    }
    if !(e_x > 0.0 && e_y > 0.0) {
        return Err(Error::Domain(format!("periods must be positive, got ({e_x}, {e_y})")));
    }
    let kvec = Vec3::new(
        k * phi.sin() * theta.cos(),
        k * phi.sin() * theta.sin(),
        k * phi.cos(),
    );
    Ok(Incidence {
        k,
        theta_inc: theta,
        phi_inc: phi,
        kvec,
        alpha_x: Complex64::from_polar(1.0, e_x * kvec[0]),
        alpha_y: Complex64::from_polar(1.0, e_y * kvec[1]),
        e_x,
        e_y,
    })
}

impl Incidence {
    pub fn k_x(&self) -> f64 {
        self.kvec[0]
    }

    pub fn k_y(&self) -> f64 {
        self.kvec[1]
    }

    pub fn k_z(&self) -> f64 {
        self.kvec[2]
    }

    /// `alpha_x^m alpha_y^n` for the nine nearest lattice copies, indexed `(m + 1) * 3 + (n + 1)`.
    pub(crate) fn near_phases(&self) -> [Complex64; 9] {
        let ax = [self.alpha_x.inv(), Complex64::new(1.0, 0.0), self.alpha_x];
        let ay = [self.alpha_y.inv(), Complex64::new(1.0, 0.0), self.alpha_y];
        let mut out = [Complex64::new(0.0, 0.0); 9];
        for m in 0..3 {
            for n in 0..3 {
                out[m * 3 + n] = ax[m] * ay[n];
            }
        }
        out
    }
}

/// Incident field `exp(i k . x)`.
pub fn plane_wave(inc: &Incidence, x: &Vec3) -> Complex64 {
    Complex64::from_polar(1.0, inc.kvec.dot(x))
}

/// Directional derivative of the incident field along `n`.
pub fn plane_wave_dn(inc: &Incidence, x: &Vec3, n: &Vec3) -> Complex64 {
    I * inc.kvec.dot(n) * plane_wave(inc, x)
}

/// Vertical wavenumber `sqrt(k^2 - kx^2 - ky^2)`: nonnegative real or positive imaginary.
pub fn vertical_wavenumber(k: f64, kappa_x: f64, kappa_y: f64) -> Complex64 {
    let radicand = k * k - kappa_x * kappa_x - kappa_y * kappa_y;
    if radicand >= 0.0 {
        Complex64::new(radicand.sqrt(), 0.0)
    } else {
        Complex64::new(0.0, (-radicand).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Truncated family of Bragg orders `(m, n)`, `|m|, |n| <= order`, radiating away from a lid.
#[derive(Debug, Clone, PartialEq)]
pub struct RbModeSet {
    pub order: usize,
    pub kappa_x: Vec<f64>,
    pub kappa_y: Vec<f64>,
    /// Row-major over `(m, n)`; see [`RbModeSet::index`].
    pub kvert: Vec<Complex64>,
    pub direction: Direction,
    pub z_ref: f64,
    pub k_layer: f64,
}

impl RbModeSet {
    pub fn width(&self) -> usize {
        2 * self.order + 1
    }

    pub fn len(&self) -> usize {
        self.width() * self.width()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of order `(m, n)`.
    pub fn index(&self, m: i64, n: i64) -> usize {
        let r = self.order as i64;
        debug_assert!(m.abs() <= r && n.abs() <= r);
        ((m + r) * (2 * r + 1) + (n + r)) as usize
    }

    /// Inverse of [`RbModeSet::index`].
    pub fn orders(&self, idx: usize) -> (i64, i64) {
        let w = self.width();
        let r = self.order as i64;
        ((idx / w) as i64 - r, (idx % w) as i64 - r)
    }

    pub fn kvert_at(&self, m: i64, n: i64) -> Complex64 {
        self.kvert[self.index(m, n)]
    }

    /// Horizontal phase `exp(i(kappa_x x + kappa_y y))` of mode `idx`.
    #[inline]
    pub(crate) fn horizontal_phase(&self, idx: usize, x: f64, y: f64) -> Complex64 {
        let w = self.width();
        Complex64::from_polar(1.0, self.kappa_x[idx / w] * x + self.kappa_y[idx % w] * y)
    }

    /// `d/dz` factor of mode `idx`: `+i k` upward, `-i k` downward.
    #[inline]
    pub(crate) fn dz_factor(&self, idx: usize) -> Complex64 {
        match self.direction {
            Direction::Up => I * self.kvert[idx],
            Direction::Down => -I * self.kvert[idx],
        }
    }

    /// Vertical factor `exp(i k (z - z_ref))` up, `exp(i k (z_ref - z))` down.
    #[inline]
    pub(crate) fn vertical_phase(&self, idx: usize, z: f64) -> Complex64 {
        let dz = match self.direction {
            Direction::Up => z - self.z_ref,
            Direction::Down => self.z_ref - z,
        };
        (I * self.kvert[idx] * dz).exp()
    }

    fn check_side(&self, z: f64) -> Result<()> {
        let ok = match self.direction {
            Direction::Up => z >= self.z_ref,
            Direction::Down => z <= self.z_ref,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "Rayleigh-Bloch expansion ({:?}) evaluated at z = {z} on the wrong side of the lid z = {}",
                self.direction, self.z_ref
            )))
        }
    }
}

/// Rayleigh-Bloch orders for the transverse wavevector of `inc` in a layer of wavenumber `k_layer`.
pub fn rb_modes(
    inc: &Incidence,
    k_layer: f64,
    order: usize,
    direction: Direction,
    z_ref: f64,
) -> RbModeSet {
    rb_modes_for(inc.k_x(), inc.k_y(), inc.e_x, inc.e_y, k_layer, order, direction, z_ref)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn rb_modes_for(
    k_x: f64,
    k_y: f64,
    e_x: f64,
    e_y: f64,
    k_layer: f64,
    order: usize,
    direction: Direction,
    z_ref: f64,
) -> RbModeSet {
    let r = order as i64;
    let kappa_x: Vec<f64> = (-r..=r).map(|m| k_x + 2.0 * PI * m as f64 / e_x).collect();
    let kappa_y: Vec<f64> = (-r..=r).map(|n| k_y + 2.0 * PI * n as f64 / e_y).collect();
    let mut kvert = Vec::with_capacity(kappa_x.len() * kappa_y.len());
    for &kx in &kappa_x {
        for &ky in &kappa_y {
            kvert.push(vertical_wavenumber(k_layer, kx, ky));
        }
    }
    RbModeSet { order, kappa_x, kappa_y, kvert, direction, z_ref, k_layer }
}

/// Bragg amplitudes `a[m][n]` for `|m|, |n| <= order`, stored row-major like [`RbModeSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BraggAmplitudes {
    pub order: usize,
    pub values: Vec<Complex64>,
}

impl BraggAmplitudes {
    pub fn zeros(order: usize) -> Self {
        let w = 2 * order + 1;
        Self { order, values: vec![Complex64::new(0.0, 0.0); w * w] }
    }

    pub fn from_values(order: usize, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), (2 * order + 1) * (2 * order + 1));
        Self { order, values }
    }

    fn index(&self, m: i64, n: i64) -> Option<usize> {
        let r = self.order as i64;
        (m.abs() <= r && n.abs() <= r).then(|| ((m + r) * (2 * r + 1) + (n + r)) as usize)
    }

    /// Amplitude of order `(m, n)`; zero outside the truncation window.
    pub fn get(&self, m: i64, n: i64) -> Complex64 {
        self.index(m, n).map_or(Complex64::new(0.0, 0.0), |i| self.values[i])
    }

    pub fn set(&mut self, m: i64, n: i64, value: Complex64) {
        let i = self.index(m, n).expect("Bragg order outside truncation window");
        self.values[i] = value;
    }

    /// Iterates `(m, n, a_mn)`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, i64, Complex64)> + '_ {
        let w = 2 * self.order + 1;
        let r = self.order as i64;
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &a)| ((i / w) as i64 - r, (i % w) as i64 - r, a))
    }

    /// Amplitudes relabeled so that order `(m, n)` here is order `(m + shift_m, n + shift_n)` of
    /// `self`. Orders falling outside the window are dropped; the count of dropped nonzero
    /// amplitudes is returned alongside.
    pub fn shifted(&self, shift_m: i64, shift_n: i64) -> (Self, usize) {
        let mut out = Self::zeros(self.order);
        let mut dropped = 0;
        for (m, n, a) in self.iter() {
            match out.index(m - shift_m, n - shift_n) {
                Some(i) => out.values[i] = a,
                None if a != Complex64::new(0.0, 0.0) => dropped += 1,
                None => {}
            }
        }
        (out, dropped)
    }
}

/// Evaluates the truncated Rayleigh-Bloch expansion with amplitudes `a` at `x`.
pub fn rb_eval(modes: &RbModeSet, a: &BraggAmplitudes, x: &Vec3) -> Result<Complex64> {
    modes.check_side(x[2])?;
    check_order(modes, a)?;
    Ok((0..modes.len())
        .map(|i| a.values[i] * modes.horizontal_phase(i, x[0], x[1]) * modes.vertical_phase(i, x[2]))
        .sum())
}

/// `d/dz` of [`rb_eval`].
pub fn rb_eval_dz(modes: &RbModeSet, a: &BraggAmplitudes, x: &Vec3) -> Result<Complex64> {
    modes.check_side(x[2])?;
    check_order(modes, a)?;
    Ok((0..modes.len())
        .map(|i| {
            a.values[i]
                * modes.dz_factor(i)
                * modes.horizontal_phase(i, x[0], x[1])
                * modes.vertical_phase(i, x[2])
        })
        .sum())
}

fn check_order(modes: &RbModeSet, a: &BraggAmplitudes) -> Result<()> {
    if modes.order != a.order {
        return Err(Error::Domain(format!(
            "amplitude order {} does not match mode order {}",
            a.order, modes.order
        )));
    }
    Ok(())
}
