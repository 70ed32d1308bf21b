//! `summary.json`, `field.csv`, `spectra.csv` and `convergence.csv` writers.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use periscat::{
    energy_fractions, physical_bragg, BraggAmplitudes, FieldGrid, Incidence, RbModeSet, RowBlock,
    Solution, SpectraResult,
};
use serde::Serialize;
use serde_json::{json, Value};

/// Comment block carrying the canonical configuration, one `# ` line per TOML line.
pub fn config_header(kind: &str, canonical: &str) -> String {
    let mut out = format!("# periscat {kind}\n");
    for line in canonical.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Order {
    m: i64,
    n: i64,
    re: f64,
    im: f64,
    kvert_re: f64,
    kvert_im: f64,
}

fn orders(a: &BraggAmplitudes, modes: &RbModeSet) -> Value {
    let list: Vec<Order> = a
        .iter()
        .map(|(m, n, v)| {
            let kv = modes.kvert_at(m, n);
            Order { m, n, re: v.re, im: v.im, kvert_re: kv.re, kvert_im: kv.im }
        })
        .collect();
    json!({ "z_ref": modes.z_ref, "k": modes.k_layer, "orders": list })
}

pub fn incidence_json(inc: &Incidence) -> Value {
    json!({
        "k": inc.k,
        "theta": inc.theta_inc,
        "phi": inc.phi_inc,
        "k_x": inc.k_x(),
        "k_y": inc.k_y(),
        "k_z": inc.k_z(),
        "alpha_x": [inc.alpha_x.re, inc.alpha_x.im],
        "alpha_y": [inc.alpha_y.re, inc.alpha_y.im],
    })
}

fn block_name(b: &RowBlock) -> String {
    match b {
        RowBlock::Interface(i) => format!("interface_{i}"),
        RowBlock::Walls(l) => format!("walls_{l}"),
        RowBlock::Lid(d) => format!("lid_{}", serde_json::to_value(d).unwrap().as_str().unwrap()),
    }
}

/// Everything the solve produced except timings, which would break reproducibility.
pub fn summary_json(canonical: &str, sol: &Solution) -> Value {
    let model = &sol.model;
    let (up, down, dropped) = physical_bragg(sol);
    let (r, t) = energy_fractions(&sol.a_up, sol.a_down.as_ref(), &model.modes_up, model.modes_down.as_ref(), &sol.inc)
        .unwrap_or((f64::NAN, f64::NAN));
    // Modes relabeled alongside the amplitudes so each order keeps its own vertical wavenumber.
    let shift = |modes: &RbModeSet| {
        periscat::rb_modes(&sol.inc, modes.k_layer, modes.order, modes.direction, modes.z_ref)
    };
    let bragg_up = orders(&up, &shift(&model.modes_up));
    let bragg_down = match (&down, &model.modes_down) {
        (Some(a), Some(m)) => orders(a, &shift(m)),
        _ => Value::Null,
    };
    let blocks: Vec<Value> = sol
        .residuals
        .blocks
        .iter()
        .map(|(b, v)| json!({ "block": block_name(b), "norm": v }))
        .collect();
    let walls: Vec<Value> = sol
        .residuals
        .blocks
        .iter()
        .filter_map(|(b, v)| match b {
            RowBlock::Walls(l) => Some(json!({ "layer": l, "norm": v })),
            _ => None,
        })
        .collect();
    let d = &sol.diagnostics;
    json!({
        "status": "ok",
        "config": canonical,
        "incidence": incidence_json(&sol.inc),
        "flux_error": sol.flux_error,
        "reflection": r,
        "transmission": t,
        "residuals": {
            "reduced": sol.residuals.reduced,
            "full": sol.residuals.full,
            "rhs_norm": sol.residuals.rhs_norm,
            "blocks": blocks,
        },
        "wall_residuals": walls,
        "diagnostics": {
            "method": d.method,
            "reduced_rows": d.reduced_rows,
            "reduced_cols": d.reduced_cols,
            "reduced_svd": d.reduced_svd.map(|s| json!({
                "rank": s.rank, "sigma_max": s.sigma_max, "sigma_min": s.sigma_min, "condition": s.condition(),
            })),
            "eliminated": d.layers.iter().map(|l| json!({
                "layer": l.layer, "rows": l.q.rows, "cols": l.q.cols, "rank": l.q.rank,
                "sigma_max": l.q.sigma_max, "sigma_min": l.q.sigma_min, "condition": l.q.condition(),
            })).collect::<Vec<_>>(),
            "stages": d.stages,
            "warnings": d.warnings,
            "full_system": d.full_system,
            "dropped_orders": dropped,
        },
        "bragg": { "up": bragg_up, "down": bragg_down },
    })
}

/// Summary of a failed solve: configuration, incidence when known, and the error.
pub fn failure_json(canonical: &str, inc: Option<&Incidence>, err: &str) -> Value {
    json!({
        "status": "error",
        "config": canonical,
        "incidence": inc.map(incidence_json),
        "error": err,
    })
}

pub fn write_json(path: &Path, v: &Value) -> io::Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(io::Error::other)?;
    s.push('\n');
    fs::write(path, s)
}

pub fn field_csv(canonical: &str, grid: &FieldGrid) -> String {
    let mut out = config_header("field", canonical);
    out.push_str("x,y,z,re,im\n");
    for (p, v) in grid.points.iter().zip(&grid.values) {
        writeln!(out, "{},{},{},{},{}", p[0], p[1], p[2], v.re, v.im).unwrap();
    }
    out
}

/// One row per angle, sorted by polar angle. Failed angles keep their row with NaN values.
pub fn spectra_csv(canonical: &str, res: &SpectraResult) -> String {
    let mut out = config_header("spectra", canonical);
    out.push_str("theta,phi,k_x,reflection,transmission,flux_error,group_id\n");
    let mut idx: Vec<usize> = (0..res.angles.len()).collect();
    idx.sort_by(|&a, &b| res.angles[a].1.total_cmp(&res.angles[b].1));
    for i in idx {
        let (theta, phi) = res.angles[i];
        let gid = if res.group_ids[i] == usize::MAX { -1 } else { res.group_ids[i] as i64 };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            theta, phi, res.k_x_values[i], res.reflection[i], res.transmission[i], res.flux_errors[i], gid
        )
        .unwrap();
    }
    out
}

/// One convergence run. `probes` holds `(value, error)` per probe point.
pub struct ConvergenceRow {
    pub value: usize,
    pub flux_error: f64,
    pub residual: f64,
    pub probes: Vec<(num_complex::Complex64, f64)>,
}

pub fn convergence_csv(canonical: &str, parameter: &str, probes: &[[f64; 3]], rows: &[ConvergenceRow]) -> String {
    let mut out = config_header("convergence", canonical);
    for (i, p) in probes.iter().enumerate() {
        writeln!(out, "# probe{} = ({}, {}, {})", i + 1, p[0], p[1], p[2]).unwrap();
    }
    out.push_str("parameter,value,flux_error,reduced_residual");
    for i in 1..=probes.len() {
        write!(out, ",probe{i}_re,probe{i}_im,probe{i}_error").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{},{}", parameter, r.value, r.flux_error, r.residual).unwrap();
        for (v, e) in &r.probes {
            write!(out, ",{},{},{}", v.re, v.im, e).unwrap();
        }
        out.push('\n');
    }
    out
}
