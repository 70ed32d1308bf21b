//! Run configuration: a TOML file with a fixed schema. Unknown keys are rejected.

use std::f64::consts::PI;
use std::ops::Range;
use std::path::{Path, PathBuf};

use periscat::{
    Axis, Discretization, GridPlane, LayerStack, LsqMethod, Mode, PeriodicSurface, ProxySphere,
    SolveOptions, SurfaceTerm, Trig, DEFAULT_ORDER, DEFAULT_PROXY_RADIUS_FACTOR, DEFAULT_REL_TOL,
    DEFAULT_TAU,
};
use serde::{Deserialize, Serialize};
use toml::Spanned;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("{0}")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incidence: Option<IncidenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergeConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub mode: Mode,
    #[serde(default = "unit_period")]
    pub period: [f64; 2],
    /// One per layer, top first.
    pub wavenumbers: Spanned<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_u: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_d: Option<f64>,
    pub interfaces: Vec<Spanned<InterfaceConfig>>,
}

fn unit_period() -> [f64; 2] {
    [1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceConfig {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub terms: Vec<TermConfig>,
}

/// `amplitude * fx(2 pi p x / e_x) * fy(2 pi q y / e_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub amplitude: f64,
    #[serde(default)]
    pub p: i32,
    #[serde(default)]
    pub q: i32,
    #[serde(default = "trig_one")]
    pub fx: Trig,
    #[serde(default = "trig_one")]
    pub fy: Trig,
}

fn trig_one() -> Trig {
    Trig::One
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub n_src: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_colloc: Option<usize>,
    pub l: usize,
    pub n_t: usize,
    pub n_w: usize,
    pub tau: f64,
    pub order: usize,
    pub rel_tol: f64,
    pub proxy_radius_factor: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub proxy: Vec<ProxyConfig>,
}

impl Default for DiscretizationConfig {
    fn default() -> Self {
        Self {
            n_src: 30,
            n_colloc: None,
            l: 30,
            n_t: 30,
            n_w: 30,
            tau: DEFAULT_TAU,
            order: DEFAULT_ORDER,
            rel_tol: DEFAULT_REL_TOL,
            proxy_radius_factor: DEFAULT_PROXY_RADIUS_FACTOR,
            proxy: Vec::new(),
        }
    }
}

/// Explicit proxy sphere for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    pub layer: usize,
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: LsqMethod,
    pub svd_max_cols: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self { method: o.method, svd_max_cols: o.svd_max_cols }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidenceConfig {
    pub theta: f64,
    pub phi: f64,
}

/// Fixed azimuth with either an explicit polar angle list or an evenly spaced range
/// (endpoints included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl SweepConfig {
    pub fn angles(&self) -> Vec<f64> {
        if let Some(p) = &self.phi {
            return p.clone();
        }
        let (a, b, n) = (self.phi_start.unwrap(), self.phi_end.unwrap(), self.count.unwrap());
        match n {
            0 => Vec::new(),
            1 => vec![a],
            _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergeAxis {
    NSrc,
    L,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub parameter: ConvergeAxis,
    pub values: Vec<usize>,
    #[serde(default = "default_probes")]
    pub probes: Vec<[f64; 3]>,
}

pub fn default_probes() -> Vec<[f64; 3]> {
    vec![[2.5, 0.0, 2.5], [2.5, 0.0, -2.5]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub summary: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldConfig>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: PathBuf::from("out"), summary: true, field: None }
    }
}

/// Plane `axis = offset`, sampled on `u` and `v` given as `[start, end, count]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub axis: Axis,
    pub offset: f64,
    pub u: (f64, f64, usize),
    pub v: (f64, f64, usize),
}

impl FieldConfig {
    pub fn plane(&self) -> GridPlane {
        GridPlane { axis: self.axis, offset: self.offset, u: self.u, v: self.v }
    }
}

fn line_of(src: &str, span: Range<usize>) -> usize {
    src[..span.start.min(src.len())].matches('\n').count() + 1
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let src = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_str(&src)
}

pub fn parse_str(src: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(src).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate(src)?;
    Ok(cfg)
}

impl RunConfig {
    /// Canonical form: every default written out, keys in schema order.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    fn validate(&self, src: &str) -> Result<(), ConfigError> {
        let g = &self.geometry;
        let wn_line = line_of(src, g.wavenumbers.span());
        let invalid = |line: usize, msg: String| ConfigError::Invalid { line, msg };
        if let Some(k) = g.wavenumbers.get_ref().iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(invalid(wn_line, format!("wavenumbers must be positive, got {k}")));
        }
        if g.interfaces.is_empty() {
            return Err(ConfigError::Missing("geometry needs at least one [[geometry.interfaces]] entry".into()));
        }
        let expected = match g.mode {
            Mode::Dirichlet => 1,
            Mode::Transmission => g.interfaces.len() + 1,
        };
        if g.wavenumbers.get_ref().len() != expected {
            return Err(invalid(
                wn_line,
                format!(
                    "{} interface(s) in {:?} mode need {expected} wavenumber(s), got {}",
                    g.interfaces.len(),
                    g.mode,
                    g.wavenumbers.get_ref().len()
                ),
            ));
        }
        if g.mode == Mode::Dirichlet && g.interfaces.len() != 1 {
            let line = line_of(src, g.interfaces[1].span());
            return Err(invalid(line, "dirichlet mode takes exactly one interface".into()));
        }
        let surfaces = self.surfaces();
        for (i, pair) in surfaces.windows(2).enumerate() {
            if let Some((x, y)) = first_crossing(&pair[0], &pair[1]) {
                let line = line_of(src, g.interfaces[i + 1].span());
                return Err(invalid(
                    line,
                    format!("interfaces intersect: interface {} is not below interface {} near ({x:.3}, {y:.3})", i + 2, i + 1),
                ));
            }
        }
        self.layer_stack().map_err(|e| ConfigError::Invalid { line: wn_line, msg: e.to_string() })?;
        self.discretization().validate().map_err(|e| ConfigError::Parse(format!("[discretization] {e}")))?;
        if let Some(inc) = &self.incidence {
            if !(inc.phi > PI / 2.0 && inc.phi <= PI) {
                return Err(ConfigError::Parse(format!(
                    "[incidence] phi = {} must lie in (pi/2, pi] for a downgoing wave",
                    inc.phi
                )));
            }
        }
        if let Some(s) = &self.sweep {
            let range = [s.phi_start.is_some(), s.phi_end.is_some(), s.count.is_some()];
            match (&s.phi, range) {
                (Some(_), [false, false, false]) | (None, [true, true, true]) => {}
                _ => {
                    return Err(ConfigError::Parse(
                        "[sweep] needs either `phi = [...]` or all of phi_start, phi_end, count".into(),
                    ))
                }
            }
        }
        if let Some(c) = &self.converge {
            if c.values.iter().any(|v| *v == 0) {
                return Err(ConfigError::Parse("[converge] values must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn surfaces(&self) -> Vec<PeriodicSurface> {
        let g = &self.geometry;
        g.interfaces
            .iter()
            .map(|s| {
                let s = s.get_ref();
                let terms = s
                    .terms
                    .iter()
                    .map(|t| SurfaceTerm { amplitude: t.amplitude, p: t.p, q: t.q, fx: t.fx, fy: t.fy })
                    .collect();
                PeriodicSurface::new(terms, s.offset, g.period[0], g.period[1])
            })
            .collect()
    }

    pub fn layer_stack(&self) -> periscat::Result<LayerStack> {
        let g = &self.geometry;
        let mut surfaces = self.surfaces();
        let k = g.wavenumbers.get_ref().clone();
        match g.mode {
            Mode::Dirichlet => LayerStack::dirichlet(surfaces.remove(0), k[0], g.z_u),
            Mode::Transmission => LayerStack::transmission(surfaces, k, g.z_u, g.z_d),
        }
    }

    pub fn discretization(&self) -> Discretization {
        let d = &self.discretization;
        let mut out = Discretization::new(d.n_src, d.l, d.n_t, d.n_w);
        out.n_colloc = d.n_colloc;
        out.tau = d.tau;
        out.order = d.order;
        out.rel_tol = d.rel_tol;
        out.proxy_radius_factor = d.proxy_radius_factor;
        for p in &d.proxy {
            if p.layer == 0 {
                continue;
            }
            if out.proxy_overrides.len() < p.layer {
                out.proxy_overrides.resize(p.layer, None);
            }
            out.proxy_overrides[p.layer - 1] = Some(ProxySphere { center: p.center, radius: p.radius });
        }
        out
    }

    pub fn solve_options(&self, full_system_check: bool) -> SolveOptions {
        SolveOptions {
            method: self.solver.method,
            svd_max_cols: self.solver.svd_max_cols,
            full_system_check,
            ..SolveOptions::default()
        }
    }
}

/// Samples both surfaces on a fine grid and reports a point where the lower one is not strictly
/// below the upper one.
fn first_crossing(upper: &PeriodicSurface, lower: &PeriodicSurface) -> Option<(f64, f64)> {
    const N: usize = 64;
    for i in 0..N {
        for j in 0..N {
            let x = upper.e_x * i as f64 / N as f64;
            let y = upper.e_y * j as f64 / N as f64;
            if lower.height(x, y) >= upper.height(x, y) {
                return Some((x, y));
            }
        }
    }
    None
}
