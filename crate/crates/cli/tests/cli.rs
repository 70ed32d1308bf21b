use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
[discretization]
n_src = 14
l = 14
n_t = 12
n_w = 12
order = 3
tau = 0.1
"#;

fn dirichlet(extra: &str) -> String {
    format!(
        r#"
[geometry]
mode = "dirichlet"
wavenumbers = [5.0]

[[geometry.interfaces]]
offset = 0.0
{SMALL}
{extra}
"#
    )
}

fn two_layer(extra: &str) -> String {
    format!(
        r#"
[geometry]
mode = "transmission"
wavenumbers = [5.0, 7.0]

[[geometry.interfaces]]
offset = 0.0
terms = [{{ amplitude = 0.05, p = 1, q = 1, fx = "sin", fy = "cos" }}]
{SMALL}
{extra}
"#
    )
}

struct Run {
    dir: TempDir,
    out: Output,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join("out").join(name)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap_or_else(|e| panic!("{name}: {e}\n{}", self.stderr()))
    }

    fn summary(&self) -> Value {
        serde_json::from_str(&self.read("summary.json")).unwrap()
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.out.stderr).into_owned()
    }

    fn code(&self) -> i32 {
        self.out.status.code().unwrap()
    }
}

fn periscat(cmd: &str, config: &str, args: &[&str]) -> Run {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config).unwrap();
    run_file(dir, cmd, &cfg, args)
}

fn run_file(dir: TempDir, cmd: &str, cfg: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_periscat"))
        .arg(cmd)
        .arg(cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .args(args)
        .output()
        .unwrap();
    Run { dir, out }
}

/// Data rows of a CSV written with a `# ` comment header.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

/// `sum Re(k_v) |a|^2 / |k_z|` over the emitted orders.
fn family_flux(family: &Value, kz: f64) -> f64 {
    family["orders"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            let (re, im) = (o["re"].as_f64().unwrap(), o["im"].as_f64().unwrap());
            o["kvert_re"].as_f64().unwrap() * (re * re + im * im)
        })
        .sum::<f64>()
        / kz.abs()
}

#[test]
fn solve_writes_summary_and_field() {
    let extra = r#"
[incidence]
theta = 0.3
phi = 2.8

[output]
directory = "ignored"
summary = true
field = { axis = "y", offset = 0.5, u = [0.0, 1.0, 5], v = [-0.5, 1.0, 4] }
"#;
    let run = periscat("solve", &dirichlet(extra), &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let s = run.summary();
    assert_eq!(s["status"], "ok");
    let kz = s["incidence"]["k_z"].as_f64().unwrap();
    let r = family_flux(&s["bragg"]["up"], kz);
    assert!((r - s["reflection"].as_f64().unwrap()).abs() < 1e-12);
    assert!(((r - 1.0).abs() - s["flux_error"].as_f64().unwrap()).abs() < 1e-12);
    assert!(s["bragg"]["down"].is_null());
    assert!(s.get("timings").is_none());
    assert_eq!(s["wall_residuals"].as_array().unwrap().len(), 1);

    let (header, rows) = csv_rows(&run.read("field.csv"));
    assert_eq!(header, ["x", "y", "z", "re", "im"]);
    assert_eq!(rows.len(), 20);
    // Below the sound-soft surface the total field vanishes.
    assert_eq!(rows[0][2], "-0.5");
    assert_eq!((rows[0][3].as_str(), rows[0][4].as_str()), ("0", "0"));
    assert!(run.read("field.csv").starts_with("# periscat field\n# "));
}

#[test]
fn transmission_summary_balances_both_families() {
    let run = periscat("solve", &two_layer("[incidence]\ntheta = 0.5\nphi = 2.7\n"), &["--full-system-check"]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let s = run.summary();
    let kz = s["incidence"]["k_z"].as_f64().unwrap();
    let r = family_flux(&s["bragg"]["up"], kz);
    let t = family_flux(&s["bragg"]["down"], kz);
    assert!((t - s["transmission"].as_f64().unwrap()).abs() < 1e-12);
    assert!(((r + t - 1.0).abs() - s["flux_error"].as_f64().unwrap()).abs() < 1e-12);
    assert!(s["flux_error"].as_f64().unwrap() < 1e-3);
    assert!(s["diagnostics"]["full_system"]["bragg_rel_diff"].is_number());
    assert_eq!(s["diagnostics"]["eliminated"].as_array().unwrap().len(), 2);
}

#[test]
fn canonical_config_round_trips() {
    let run = periscat("solve", &dirichlet("[incidence]\ntheta = 0.0\nphi = 3.0\n"), &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let canonical = run.summary()["config"].as_str().unwrap().to_owned();
    assert!(canonical.contains("rel_tol"), "defaults are written out");
    let again = periscat("solve", &canonical, &[]);
    assert_eq!(again.code(), 0, "{}", again.stderr());
    assert_eq!(again.summary()["config"].as_str().unwrap(), canonical);
    assert_eq!(again.summary()["flux_error"], run.summary()["flux_error"]);
}

#[test]
fn intersecting_interfaces_are_reported_with_line() {
    let cfg = r#"[geometry]
mode = "transmission"
wavenumbers = [5.0, 6.0, 7.0]

[[geometry.interfaces]]
offset = 0.0

[[geometry.interfaces]]
offset = -0.05
terms = [{ amplitude = 0.1, p = 1, fx = "sin" }]

[incidence]
theta = 0.0
phi = 3.0
"#;
    let run = periscat("solve", cfg, &[]);
    assert_eq!(run.code(), 2);
    let err = run.stderr();
    assert!(err.contains("line 8") && err.contains("interfaces intersect"), "{err}");
    assert!(!run.path("summary.json").exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let run = periscat("solve", &dirichlet("[incidence]\ntheta = 0.0\nphi = 3.0\nazimuth = 1.0\n"), &[]);
    assert_eq!(run.code(), 2);
    assert!(run.stderr().contains("azimuth"), "{}", run.stderr());
}

#[test]
fn wrong_wavenumber_count_points_at_line() {
    let cfg = dirichlet("[incidence]\ntheta = 0.0\nphi = 3.0\n").replace("wavenumbers = [5.0]", "wavenumbers = [5.0, 6.0]");
    let run = periscat("solve", &cfg, &[]);
    assert_eq!(run.code(), 2);
    assert!(run.stderr().contains("line 4"), "{}", run.stderr());
}

#[test]
fn missing_incidence_is_a_usage_error() {
    let run = periscat("solve", &dirichlet(""), &[]);
    assert_eq!(run.code(), 2);
    assert!(run.stderr().contains("[incidence]"));
}

#[test]
fn sweep_groups_shared_bloch_phases() {
    // k_x = 1 and 1 - 2 pi share a Bloch phase; k_x = 0.3 does not.
    let phis: Vec<f64> = [1.0f64, 1.0 - 2.0 * std::f64::consts::PI, 0.3]
        .iter()
        .map(|kx| std::f64::consts::PI - (kx / 6.0).asin())
        .collect();
    let cfg = dirichlet(&format!("[sweep]\ntheta = 0.0\nphi = [{}, {}, {}]\n", phis[0], phis[1], phis[2]))
        .replace("wavenumbers = [5.0]", "wavenumbers = [6.0]");
    let run = periscat("sweep", &cfg, &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let text = run.read("spectra.csv");
    assert!(text.starts_with("# periscat spectra\n"));
    let (header, rows) = csv_rows(&text);
    assert_eq!(header, ["theta", "phi", "k_x", "reflection", "transmission", "flux_error", "group_id"]);
    assert_eq!(rows.len(), 3);
    let phi: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(phi.windows(2).all(|w| w[0] <= w[1]), "rows sorted by phi");
    let group = |kx: f64| {
        rows.iter().find(|r| (r[2].parse::<f64>().unwrap() - kx).abs() < 1e-9).unwrap()[6].clone()
    };
    assert_eq!(group(1.0), group(1.0 - 2.0 * std::f64::consts::PI));
    assert_ne!(group(1.0), group(0.3));
    for r in &rows {
        let rt: f64 = r[3].parse::<f64>().unwrap() + r[4].parse::<f64>().unwrap();
        assert!((rt - 1.0).abs() < 1e-3, "R + T = {rt}");
    }
}

#[test]
fn three_angles_with_one_phase_form_one_group() {
    let pi = std::f64::consts::PI;
    let phis: Vec<f64> = [0.5f64, 0.5 - 2.0 * pi, 0.5 + 2.0 * pi].iter().map(|kx| pi - (kx / 8.0).asin()).collect();
    let cfg = dirichlet(&format!("[sweep]\ntheta = 0.0\nphi = [{}, {}, {}]\n", phis[0], phis[1], phis[2]))
        .replace("wavenumbers = [5.0]", "wavenumbers = [8.0]");
    let run = periscat("sweep", &cfg, &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let (_, rows) = csv_rows(&run.read("spectra.csv"));
    assert!(rows.iter().all(|r| r[6] == "0"), "{rows:?}");
    assert!(run.stderr().contains("1 Bloch-phase groups"));
}

#[test]
fn empty_sweep_writes_header_only() {
    let run = periscat("sweep", &dirichlet("[sweep]\ntheta = 0.0\nphi = []\n"), &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let (_, rows) = csv_rows(&run.read("spectra.csv"));
    assert!(rows.is_empty());
}

#[test]
fn sweep_range_form_is_expanded() {
    let run = periscat("sweep", &dirichlet("[sweep]\ntheta = 0.0\nphi_start = 2.6\nphi_end = 3.0\ncount = 3\n"), &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let (_, rows) = csv_rows(&run.read("spectra.csv"));
    let phi: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(phi, [2.6, 2.8, 3.0]);
}

#[test]
fn single_value_convergence_matches_solve() {
    let base = "[incidence]\ntheta = 0.3\nphi = 2.8\n";
    let solve = periscat("solve", &dirichlet(base), &[]);
    assert_eq!(solve.code(), 0, "{}", solve.stderr());
    let conv = periscat("converge", &dirichlet(&format!("{base}\n[converge]\nparameter = \"n_src\"\nvalues = [14]\n")), &[]);
    assert_eq!(conv.code(), 0, "{}", conv.stderr());
    let text = conv.read("convergence.csv");
    assert!(text.contains("# probe1 = (2.5, 0, 2.5)"));
    let (header, rows) = csv_rows(&text);
    assert_eq!(&header[..4], ["parameter", "value", "flux_error", "reduced_residual"]);
    assert_eq!(header.len(), 4 + 3 * 2);
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("n_src", "14"));
    let flux: f64 = rows[0][2].parse().unwrap();
    assert_eq!(flux, solve.summary()["flux_error"].as_f64().unwrap());
    // Flat surface: probe errors come from the exact solution. The second probe is in the solid.
    let err1: f64 = rows[0][6].parse().unwrap();
    assert!(err1 < 1e-3, "{err1}");
    assert_eq!(rows[0][7], "0");
}

#[test]
fn convergence_along_proxy_count() {
    let cfg = two_layer("[incidence]\ntheta = 0.0\nphi = 3.0\n\n[converge]\nparameter = \"l\"\nvalues = [10, 14]\n");
    let run = periscat("converge", &cfg, &[]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
    let (_, rows) = csv_rows(&run.read("convergence.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][1], "14");
    // Corrugated interface: no exact solution, so probe errors are NaN.
    assert_eq!(rows[0][6], "NaN");
}

#[test]
fn threads_flag_is_accepted() {
    let run = periscat("solve", &dirichlet("[incidence]\ntheta = 0.0\nphi = 3.0\n"), &["--threads", "1"]);
    assert_eq!(run.code(), 0, "{}", run.stderr());
}
