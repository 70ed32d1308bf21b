use std::path::PathBuf;

use num_complex::Complex64;
use periscat::{
    field_grid, make_incidence, planar_reference, solve_with, sweep_spectra, total_field, Incidence,
    Solution, Vec3,
};

use crate::config::{ConvergeAxis, RunConfig};
use crate::output;

pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub full_system_check: bool,
}

pub struct Failure {
    pub code: u8,
    pub msg: String,
}

pub type Outcome = Result<(), Failure>;

fn fail(code: u8, msg: impl Into<String>) -> Failure {
    Failure { code, msg: msg.into() }
}

fn io_fail(e: std::io::Error) -> Failure {
    fail(1, format!("write failed: {e}"))
}

fn incidence(cfg: &RunConfig) -> Result<Incidence, Failure> {
    let inc = cfg.incidence.ok_or_else(|| fail(2, "config has no [incidence] section"))?;
    let g = &cfg.geometry;
    make_incidence(g.wavenumbers.get_ref()[0], inc.theta, inc.phi, g.period[0], g.period[1])
        .map_err(|e| fail(2, e.to_string()))
}

fn run_solve(cfg: &RunConfig, inc: &Incidence, full_check: bool) -> periscat::Result<Solution> {
    let stack = cfg.layer_stack()?;
    solve_with(&stack, &cfg.discretization(), inc, &cfg.solve_options(full_check))
}

pub fn solve(ctx: &Ctx) -> Outcome {
    let cfg = &ctx.cfg;
    let canonical = cfg.canonical();
    let inc = incidence(cfg)?;
    let summary_path = ctx.out.join("summary.json");
    let sol = match run_solve(cfg, &inc, ctx.full_system_check) {
        Ok(s) => s,
        Err(e) => {
            if cfg.output.summary {
                output::write_json(&summary_path, &output::failure_json(&canonical, Some(&inc), &e.to_string()))
                    .map_err(io_fail)?;
            }
            return Err(fail(1, format!("solve failed: {e}")));
        }
    };
    for (name, secs) in &sol.diagnostics.timings {
        eprintln!("{name}: {secs:.2} s");
    }
    for w in &sol.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("flux error {:.3e}", sol.flux_error);
    if cfg.output.summary {
        output::write_json(&summary_path, &output::summary_json(&canonical, &sol)).map_err(io_fail)?;
    }
    if let Some(f) = &cfg.output.field {
        let grid = field_grid(&sol, &f.plane()).map_err(|e| fail(1, format!("field grid failed: {e}")))?;
        std::fs::write(ctx.out.join("field.csv"), output::field_csv(&canonical, &grid)).map_err(io_fail)?;
    }
    Ok(())
}

pub fn sweep(ctx: &Ctx) -> Outcome {
    let cfg = &ctx.cfg;
    let sw = cfg.sweep.as_ref().ok_or_else(|| fail(2, "config has no [sweep] section"))?;
    let angles: Vec<(f64, f64)> = sw.angles().into_iter().map(|p| (sw.theta, p)).collect();
    let stack = cfg.layer_stack().map_err(|e| fail(2, e.to_string()))?;
    let res = sweep_spectra(&stack, &cfg.discretization(), &angles, &cfg.solve_options(false));
    std::fs::write(ctx.out.join("spectra.csv"), output::spectra_csv(&cfg.canonical(), &res)).map_err(io_fail)?;
    let failed = res.errors.iter().filter(|e| e.is_some()).count();
    for (i, e) in res.errors.iter().enumerate() {
        if let Some(e) = e {
            eprintln!("angle {:?}: {e}", res.angles[i]);
        }
    }
    eprintln!("{} angles in {} Bloch-phase groups, {failed} failed", angles.len(), res.n_groups);
    if failed * 10 > angles.len() {
        return Err(fail(1, format!("{failed} of {} angles failed", angles.len())));
    }
    Ok(())
}

pub fn converge(ctx: &Ctx) -> Outcome {
    let cfg = &ctx.cfg;
    let conv = cfg.converge.as_ref().ok_or_else(|| fail(2, "config has no [converge] section"))?;
    let inc = incidence(cfg)?;
    let stack = cfg.layer_stack().map_err(|e| fail(2, e.to_string()))?;
    // Pointwise errors only where an exact solution exists (flat interfaces).
    let oracle = planar_reference(&stack, &inc).ok();
    let name = match conv.parameter {
        ConvergeAxis::NSrc => "n_src",
        ConvergeAxis::L => "l",
    };
    let mut rows = Vec::with_capacity(conv.values.len());
    let mut failures = 0;
    for &v in &conv.values {
        let mut run = cfg.clone();
        match conv.parameter {
            ConvergeAxis::NSrc => run.discretization.n_src = v,
            ConvergeAxis::L => run.discretization.l = v,
        }
        let nan = Complex64::new(f64::NAN, f64::NAN);
        let row = match run_solve(&run, &inc, false) {
            Ok(sol) => {
                let probes = conv
                    .probes
                    .iter()
                    .map(|p| {
                        let x = Vec3::new(p[0], p[1], p[2]);
                        let u = total_field(&sol, &x, true).unwrap_or(nan);
                        let err = oracle.as_ref().map_or(f64::NAN, |o| (u - o.field(&x)).norm());
                        (u, err)
                    })
                    .collect();
                eprintln!("{name} = {v}: flux error {:.3e}", sol.flux_error);
                output::ConvergenceRow { value: v, flux_error: sol.flux_error, residual: sol.residuals.reduced, probes }
            }
            Err(e) => {
                eprintln!("{name} = {v}: {e}");
                failures += 1;
                output::ConvergenceRow {
                    value: v,
                    flux_error: f64::NAN,
                    residual: f64::NAN,
                    probes: conv.probes.iter().map(|_| (nan, f64::NAN)).collect(),
                }
            }
        };
        rows.push(row);
    }
    let csv = output::convergence_csv(&cfg.canonical(), name, &conv.probes, &rows);
    std::fs::write(ctx.out.join("convergence.csv"), csv).map_err(io_fail)?;
    if failures > 0 {
        return Err(fail(1, format!("{failures} of {} runs failed", rows.len())));
    }
    Ok(())
}
