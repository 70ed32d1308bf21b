//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use periscat::{Discretization, Incidence, LayerStack, PeriodicSurface, SurfaceTerm, Trig, make_incidence};

pub fn corrugated_dirichlet(k: f64) -> (LayerStack, Incidence) {
    let s = PeriodicSurface::new(
        vec![SurfaceTerm { amplitude: 0.1, p: 1, q: 1, fx: Trig::Sin, fy: Trig::Cos }],
        0.0,
        1.0,
        1.0,
    );
    let stack = LayerStack::dirichlet(s, k, None).unwrap();
    (stack, make_incidence(k, PI / 4.0, 5.0 * PI / 6.0, 1.0, 1.0).unwrap())
}

pub fn flat_two_layer() -> (LayerStack, Incidence) {
    let stack = LayerStack::transmission(vec![PeriodicSurface::flat(0.0, 1.0, 1.0)], vec![10.0, 20.0], None, None).unwrap();
    (stack, make_incidence(10.0, PI / 4.0, 5.0 * PI / 6.0, 1.0, 1.0).unwrap())
}

/// Small grid with sources set back for fast convergence.
pub fn small_disc(n: usize) -> Discretization {
    let mut d = Discretization::new(n, n, n, n);
    d.order = (n - 1) / 2;
    d.tau = 0.1;
    d
}
