//! Fields, Bragg amplitudes, flux balance and angle sweeps.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{ColGroup, Model};
use crate::error::{Error, Result};
use crate::geometry::{Discretization, LayerStack, Mode};
use crate::kernels::{
    green_value, make_incidence, plane_wave, rb_eval, BraggAmplitudes, Incidence, RbModeSet, Vec3,
};
use crate::solver::{solve_model, SolveOptions, Solution};

/// Layer containing `x` (1-based). Points on an interface or outside `[z_d, z_u]` are rejected.
pub fn locate_layer(stack: &LayerStack, x: &Vec3) -> Result<usize> {
    let z = x[2];
    let bottom = if stack.mode == Mode::Dirichlet { f64::NEG_INFINITY } else { stack.z_d };
    if !(z <= stack.z_u && z >= bottom) {
        return Err(Error::Domain(format!(
            "z = {z} lies outside the slab [{}, {}]",
            stack.z_d, stack.z_u
        )));
    }
    for (i, s) in stack.interfaces.iter().enumerate() {
        let g = s.height(x[0], x[1]);
        if z == g {
            return Err(Error::Domain(format!("point lies on interface {}", i + 1)));
        }
        if z > g {
            return Ok(i + 1);
        }
    }
    match stack.mode {
        Mode::Transmission => Ok(stack.interfaces.len() + 1),
        Mode::Dirichlet => Err(Error::Domain(format!(
            "z = {z} lies inside the sound-soft region below the surface"
        ))),
    }
}

/// Scattered field of the MFS representation of the layer containing `x`; `total` adds the
/// incident wave in the top layer.
pub fn eval_field(sol: &Solution, x: &Vec3, total: bool) -> Result<Complex64> {
    let model = &sol.model;
    let layer = locate_layer(&model.stack, x)?;
    let mut u = layer_field(sol, layer, x)?;
    if total && layer == 1 {
        u += plane_wave(&sol.inc, x);
    }
    Ok(u)
}

/// MFS representation of `layer` evaluated at `x`, wherever `x` lies.
pub fn layer_field(sol: &Solution, layer: usize, x: &Vec3) -> Result<Complex64> {
    let model = &sol.model;
    let lp = &model.layers[layer - 1];
    let phases = model.inc.near_phases();
    let mut u = Complex64::new(0.0, 0.0);
    for g in model.layer_groups(layer) {
        let ColGroup::Mfs { interface, side, .. } = g else { unreachable!() };
        let c = sol.group(g).unwrap();
        for (y, cj) in model.sources[&(interface, side)].iter().zip(c) {
            for m in -1i32..=1 {
                for n in -1i32..=1 {
                    let d = x - (y + Vec3::new(m as f64 * model.stack.e_x, n as f64 * model.stack.e_y, 0.0));
                    if d.norm_squared() == 0.0 {
                        return Err(Error::Domain("field evaluated at an MFS source".into()));
                    }
                    u += cj * phases[((m + 1) * 3 + (n + 1)) as usize] * green_value(lp.k, &d);
                }
            }
        }
    }
    let d = sol.group(ColGroup::Proxy(layer)).unwrap();
    for (z, dj) in lp.proxies.iter().zip(d) {
        let r = x - z;
        if r.norm_squared() == 0.0 {
            return Err(Error::Domain("field evaluated at a proxy point".into()));
        }
        u += dj * green_value(lp.k, &r);
    }
    Ok(u)
}

/// Field anywhere: Rayleigh-Bloch expansions outside the lids, MFS representations between them,
/// zero inside a sound-soft region.
pub fn total_field(sol: &Solution, x: &Vec3, total: bool) -> Result<Complex64> {
    let model = &sol.model;
    let stack = &model.stack;
    let inc = if total { plane_wave(&sol.inc, x) } else { Complex64::new(0.0, 0.0) };
    if x[2] > stack.z_u {
        return Ok(rb_eval(&model.modes_up, &sol.a_up, x)? + inc);
    }
    if stack.mode == Mode::Transmission && x[2] < stack.z_d {
        let (md, ad) = (model.modes_down.as_ref().unwrap(), sol.a_down.as_ref().unwrap());
        return Ok(rb_eval(md, ad, x)?);
    }
    if stack.mode == Mode::Dirichlet && x[2] < stack.interfaces[0].height(x[0], x[1]) {
        return Ok(Complex64::new(0.0, 0.0));
    }
    eval_field(sol, x, total)
}

/// Upward and downward Bragg amplitudes (model grid labeling).
pub fn bragg_amplitudes(sol: &Solution) -> (BraggAmplitudes, Option<BraggAmplitudes>) {
    (sol.a_up.clone(), sol.a_down.clone())
}

/// Bragg amplitudes relabeled so that order `(0, 0)` is specular for the solution's own
/// incidence. The second value counts nonzero amplitudes dropped at the window edge.
pub fn physical_bragg(sol: &Solution) -> (BraggAmplitudes, Option<BraggAmplitudes>, usize) {
    let (sm, sn) = order_shift(&sol.model.inc, &sol.inc);
    let (up, d1) = sol.a_up.shifted(sm, sn);
    let (down, d2) = match &sol.a_down {
        Some(a) => {
            let (d, n) = a.shifted(sm, sn);
            (Some(d), n)
        }
        None => (None, 0),
    };
    (up, down, d1 + d2)
}

/// Integer order offset between two incidences sharing Bloch phases.
fn order_shift(model_inc: &Incidence, inc: &Incidence) -> (i64, i64) {
    (
        ((inc.k_x() - model_inc.k_x()) * inc.e_x / (2.0 * PI)).round() as i64,
        ((inc.k_y() - model_inc.k_y()) * inc.e_y / (2.0 * PI)).round() as i64,
    )
}

fn family_flux(a: &BraggAmplitudes, modes: &RbModeSet) -> Result<f64> {
    if a.order != modes.order {
        return Err(Error::Domain(format!(
            "amplitude order {} does not match mode order {}",
            a.order, modes.order
        )));
    }
    Ok(a.values.iter().zip(&modes.kvert).map(|(v, kv)| kv.re * v.norm_sqr()).sum())
}

/// Reflected and transmitted energy fractions `(R, T)`.
pub fn energy_fractions(
    a_up: &BraggAmplitudes,
    a_down: Option<&BraggAmplitudes>,
    modes_up: &RbModeSet,
    modes_down: Option<&RbModeSet>,
    inc: &Incidence,
) -> Result<(f64, f64)> {
    let incident = inc.k_z().abs();
    if incident == 0.0 {
        return Err(Error::Domain("grazing incidence carries no vertical flux".into()));
    }
    let r = family_flux(a_up, modes_up)? / incident;
    let t = match (a_down, modes_down) {
        (Some(a), Some(m)) => family_flux(a, m)? / incident,
        (None, _) => 0.0,
        (Some(_), None) => return Err(Error::Domain("downward amplitudes without modes".into())),
    };
    Ok((r, t))
}

/// Relative defect of the energy balance between the incident wave and all propagating orders.
pub fn flux_error(
    a_up: &BraggAmplitudes,
    a_down: Option<&BraggAmplitudes>,
    modes_up: &RbModeSet,
    modes_down: Option<&RbModeSet>,
    inc: &Incidence,
) -> Result<f64> {
    let (r, t) = energy_fractions(a_up, a_down, modes_up, modes_down, inc)?;
    Ok((r + t - 1.0).abs())
}

/// Coordinate axis normal to a grid plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Plane `axis = offset` sampled on a uniform grid; `u` and `v` are the remaining coordinates in
/// `(x, y, z)` order, each given as `(start, end, count)` with endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPlane {
    pub axis: Axis,
    pub offset: f64,
    pub u: (f64, f64, usize),
    pub v: (f64, f64, usize),
}

impl GridPlane {
    fn coord(range: (f64, f64, usize), i: usize) -> f64 {
        if range.2 <= 1 {
            range.0
        } else {
            range.0 + (range.1 - range.0) * i as f64 / (range.2 - 1) as f64
        }
    }

    /// Grid point `(i, j)`, `i` along `u`.
    pub fn point(&self, i: usize, j: usize) -> Vec3 {
        let (u, v) = (Self::coord(self.u, i), Self::coord(self.v, j));
        match self.axis {
            Axis::X => Vec3::new(self.offset, u, v),
            Axis::Y => Vec3::new(u, self.offset, v),
            Axis::Z => Vec3::new(u, v, self.offset),
        }
    }
}

/// Sampled field on a plane. `values[j * nu + i]` belongs to `points[j * nu + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub plane: GridPlane,
    pub points: Vec<[f64; 3]>,
    pub values: Vec<Complex64>,
}

/// Total field on a plane. Points exactly on an interface move up by `1e-9`.
pub fn field_grid(sol: &Solution, plane: &GridPlane) -> Result<FieldGrid> {
    let stack = &sol.model.stack;
    let (nu, nv) = (plane.u.2, plane.v.2);
    let pts: Vec<Vec3> = (0..nv)
        .flat_map(|j| (0..nu).map(move |i| (i, j)))
        .map(|(i, j)| {
            let mut p = plane.point(i, j);
            if stack.interfaces.iter().any(|s| s.height(p[0], p[1]) == p[2]) {
                p[2] += 1e-9;
            }
            p
        })
        .collect();
    let values = pts.par_iter().map(|p| total_field(sol, p, true)).collect::<Result<Vec<_>>>()?;
    Ok(FieldGrid { plane: *plane, points: pts.iter().map(|p| [p[0], p[1], p[2]]).collect(), values })
}

/// Reflection/transmission spectra over a list of incidence angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraResult {
    /// `(theta, phi)` as requested.
    pub angles: Vec<(f64, f64)>,
    pub k_x_values: Vec<f64>,
    pub reflection: Vec<f64>,
    pub transmission: Vec<f64>,
    pub flux_errors: Vec<f64>,
    pub group_ids: Vec<usize>,
    pub n_groups: usize,
    /// Failure message per angle (`None` on success).
    pub errors: Vec<Option<String>>,
}

/// Downgoing incidence for a sweep angle. Polar angles in `(pi, 3pi/2)` describe the mirrored
/// direction `(theta + pi, 2 pi - phi)`.
pub fn sweep_incidence(stack: &LayerStack, theta: f64, phi: f64) -> Result<Incidence> {
    let (t, p) = if phi > PI && phi < 1.5 * PI { (theta + PI, 2.0 * PI - phi) } else { (theta, phi) };
    make_incidence(stack.wavenumber(1), t, p, stack.e_x, stack.e_y)
}

/// Grouping key: Bloch phases rounded to 12 decimals.
fn phase_key(inc: &Incidence) -> [i64; 4] {
    let q = |v: f64| {
        let r = (v * 1e12).round() as i64;
        if r == 0 { 0 } else { r }
    };
    [q(inc.alpha_x.re), q(inc.alpha_x.im), q(inc.alpha_y.re), q(inc.alpha_y.im)]
}

/// Solves every angle, assembling and reducing once per group of angles sharing Bloch phases.
/// A failed angle yields NaN entries and an error message.
pub fn sweep_spectra(
    stack: &LayerStack,
    disc: &Discretization,
    angles: &[(f64, f64)],
    opts: &SolveOptions,
) -> SpectraResult {
    let n = angles.len();
    let mut res = SpectraResult {
        angles: angles.to_vec(),
        k_x_values: vec![f64::NAN; n],
        reflection: vec![f64::NAN; n],
        transmission: vec![f64::NAN; n],
        flux_errors: vec![f64::NAN; n],
        group_ids: vec![usize::MAX; n],
        n_groups: 0,
        errors: vec![None; n],
    };
    let mut groups: BTreeMap<[i64; 4], Vec<(usize, Incidence)>> = BTreeMap::new();
    let mut order: Vec<[i64; 4]> = Vec::new();
    for (i, &(theta, phi)) in angles.iter().enumerate() {
        match sweep_incidence(stack, theta, phi) {
            Ok(inc) => {
                res.k_x_values[i] = inc.k_x();
                let key = phase_key(&inc);
                if !groups.contains_key(&key) {
                    order.push(key);
                }
                groups.entry(key).or_default().push((i, inc));
            }
            Err(e) => res.errors[i] = Some(e.to_string()),
        }
    }
    res.n_groups = order.len();
    for (gid, key) in order.iter().enumerate() {
        for (i, _) in &groups[key] {
            res.group_ids[*i] = gid;
        }
    }
    let opts = SolveOptions { full_residual: false, full_system_check: false, ..opts.clone() };
    let outcomes: Vec<Vec<(usize, Result<(f64, f64, f64)>)>> = order
        .par_iter()
        .map(|key| {
            let members = &groups[key];
            let incs: Vec<Incidence> = members.iter().map(|(_, inc)| inc.clone()).collect();
            let solved = Model::new(stack, disc, &incs[0])
                .and_then(|m| solve_model(&Arc::new(m), &incs, &opts));
            match solved {
                Ok(sols) => members
                    .iter()
                    .zip(sols)
                    .map(|((i, _), s)| (*i, spectra_entry(&s)))
                    .collect(),
                Err(e) => members.iter().map(|(i, _)| (*i, Err(e.clone()))).collect(),
            }
        })
        .collect();
    for (i, out) in outcomes.into_iter().flatten() {
        match out {
            Ok((r, t, f)) => {
                res.reflection[i] = r;
                res.transmission[i] = t;
                res.flux_errors[i] = f;
            }
            Err(e) => res.errors[i] = Some(e.to_string()),
        }
    }
    res
}

fn spectra_entry(sol: &Solution) -> Result<(f64, f64, f64)> {
    let m = &sol.model;
    let (r, t) = energy_fractions(&sol.a_up, sol.a_down.as_ref(), &m.modes_up, m.modes_down.as_ref(), &sol.inc)?;
    Ok((r, t, sol.flux_error))
}
