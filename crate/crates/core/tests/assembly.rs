use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;
use periscat::*;
use proptest::prelude::*;

const Z0: Complex64 = Complex64 { re: 0.0, im: 0.0 };

fn corrugated(amplitude: f64, offset: f64) -> PeriodicSurface {
    PeriodicSurface::new(
        vec![SurfaceTerm { amplitude, p: 1, q: 1, fx: Trig::Sin, fy: Trig::Cos }],
        offset,
        1.0,
        1.0,
    )
}

fn small_disc() -> Discretization {
    let mut d = Discretization::new(5, 5, 4, 4);
    d.order = 1;
    d
}

fn near_sum(k: f64, inc: &Incidence, x: &Target, y: &Vec3, deriv: Deriv) -> Complex64 {
    let mut acc = Z0;
    for m in -1i32..=1 {
        for n in -1i32..=1 {
            let ys = y + Vec3::new(m as f64 * inc.e_x, n as f64 * inc.e_y, 0.0);
            let w = inc.alpha_x.powi(m) * inc.alpha_y.powi(n);
            acc += w * match deriv {
                Deriv::Value => helmholtz_green(k, &x.point, &ys).unwrap(),
                Deriv::Normal => helmholtz_green_dn(k, &x.point, &ys, &x.normal).unwrap(),
            };
        }
    }
    acc
}

fn max_diff(a: &Mat<Complex64>, b: &Mat<Complex64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut out = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            out = out.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    out
}

#[test]
fn near_block_matches_brute_force_copies() {
    let s = corrugated(0.1, 0.0);
    let inc = make_incidence(10.0, PI / 4.0, 5.0 * PI / 6.0, 1.0, 1.0).unwrap();
    let targets = collocation_points(&s, 4);
    let sources = mfs_sources(&s, 3, 0.03, Side::Below).unwrap();
    for deriv in [Deriv::Value, Deriv::Normal] {
        let b = near_block(10.0, &targets, &sources, &inc, deriv).unwrap();
        let oracle = Mat::from_fn(targets.len(), sources.len(), |i, j| near_sum(10.0, &inc, &targets[i], &sources[j], deriv));
        assert!(max_diff(&b, &oracle) < 1e-12, "{deriv:?}");
    }
}

#[test]
fn proxy_block_is_plain_kernel() {
    let s = PeriodicSurface::flat(0.0, 1.0, 1.0);
    let targets = collocation_points(&s, 3);
    let proxies = proxy_sphere(&Vec3::new(0.5, 0.5, 0.0), 2.0, 4);
    let b = proxy_block(7.0, &targets, &proxies, Deriv::Normal).unwrap();
    for (i, t) in targets.iter().enumerate() {
        for (j, z) in proxies.iter().enumerate() {
            let e = helmholtz_green_dn(7.0, &t.point, z, &t.normal).unwrap();
            assert!((b[(i, j)] - e).norm() < 1e-14);
        }
    }
}

/// The wall rows must equal the quasi-periodicity defect `alpha^-1 u(x_hi) - u(x_lo)` of the
/// near-field sum, which the assembled blocks compute through the telescoped copy set.
#[test]
fn wall_rows_equal_defect_of_near_field() {
    let stack = LayerStack::dirichlet(corrugated(0.1, 0.0), 10.0, None).unwrap();
    let inc = make_incidence(10.0, 0.7, 2.7, 1.0, 1.0).unwrap();
    let walls = wall_points(&stack, 1, 3).unwrap();
    let sources = mfs_sources(&stack.interfaces[0], 4, 0.03, Side::Below).unwrap();
    let proxies = proxy_sphere(&Vec3::new(0.5, 0.5, 0.0), 2.5, 3);
    let (p, q) = qp_wall_blocks(10.0, &walls, &sources, &proxies, &inc).unwrap();
    let n = walls.len();
    assert_eq!(p.nrows(), 4 * n);
    let groups = [
        (&walls.left, &walls.right, inc.alpha_x, Deriv::Value),
        (&walls.left, &walls.right, inc.alpha_x, Deriv::Normal),
        (&walls.back, &walls.front, inc.alpha_y, Deriv::Value),
        (&walls.back, &walls.front, inc.alpha_y, Deriv::Normal),
    ];
    for (g, (lo, hi, a, deriv)) in groups.iter().enumerate() {
        for i in 0..n {
            let r = g * n + i;
            for (j, y) in sources.iter().enumerate() {
                let e = a.inv() * near_sum(10.0, &inc, &hi[i], y, *deriv) - near_sum(10.0, &inc, &lo[i], y, *deriv);
                assert!((p[(r, j)] - e).norm() < 1e-12 * (1.0 + e.norm()), "P row {r} col {j}");
            }
            for (j, z) in proxies.iter().enumerate() {
                let k = |t: &Target| match deriv {
                    Deriv::Value => helmholtz_green(10.0, &t.point, z).unwrap(),
                    Deriv::Normal => helmholtz_green_dn(10.0, &t.point, z, &t.normal).unwrap(),
                };
                let e = a.inv() * k(&hi[i]) - k(&lo[i]);
                assert!((q[(r, j)] - e).norm() < 1e-13, "Q row {r} col {j}");
            }
        }
    }
}

#[test]
fn radiation_blocks_match_modes_at_lid() {
    let stack = LayerStack::dirichlet(corrugated(0.1, 0.0), 10.0, Some(0.7)).unwrap();
    let inc = make_incidence(10.0, 0.2, 2.9, 1.0, 1.0).unwrap();
    let lid = lid_points(&stack, Direction::Up, 3);
    let sources = mfs_sources(&stack.interfaces[0], 3, 0.03, Side::Below).unwrap();
    let proxies = proxy_sphere(&Vec3::new(0.5, 0.5, 0.2), 2.5, 3);
    let modes = rb_modes(&inc, 10.0, 2, Direction::Up, 0.7);
    let (z, v, w) = radiation_blocks(10.0, &lid, &sources, &proxies, &inc, &modes).unwrap();
    let n = lid.len();
    let zv = near_block(10.0, &lid, &sources, &inc, Deriv::Value).unwrap();
    let zd = near_block(10.0, &lid, &sources, &inc, Deriv::Normal).unwrap();
    assert!(max_diff(&z.as_ref().subrows(0, n).to_owned(), &zv) < 1e-14);
    assert!(max_diff(&z.as_ref().subrows(n, n).to_owned(), &zd) < 1e-14);
    let vv = proxy_block(10.0, &lid, &proxies, Deriv::Value).unwrap();
    assert!(max_diff(&v.as_ref().subrows(0, n).to_owned(), &vv) < 1e-14);
    // Column `idx` of W is mode `idx` at the lid, then its z-derivative.
    let mut a = BraggAmplitudes::zeros(2);
    for idx in 0..modes.len() {
        a.values.iter_mut().for_each(|x| *x = Z0);
        a.values[idx] = Complex64::new(1.0, 0.0);
        for (i, t) in lid.iter().enumerate() {
            let val = rb_eval(&modes, &a, &t.point).unwrap();
            let dz = rb_eval_dz(&modes, &a, &t.point).unwrap();
            assert!((w[(i, idx)] - val).norm() < 1e-12);
            assert!((w[(n + i, idx)] - dz).norm() < 1e-10 * (1.0 + dz.norm()));
        }
    }
}

#[test]
fn lid_below_a_source_is_rejected() {
    let stack = LayerStack::dirichlet(PeriodicSurface::flat(0.0, 1.0, 1.0), 10.0, Some(0.5)).unwrap();
    let inc = make_incidence(10.0, 0.0, PI, 1.0, 1.0).unwrap();
    let lid = lid_points(&stack, Direction::Up, 2);
    let bad = vec![Vec3::new(0.5, 0.5, 0.6)];
    let modes = rb_modes(&inc, 10.0, 1, Direction::Up, 0.5);
    assert!(radiation_blocks(10.0, &lid, &bad, &[], &inc, &modes).is_err());
}

#[test]
fn coincident_source_and_target_is_an_error() {
    let inc = make_incidence(10.0, 0.0, PI, 1.0, 1.0).unwrap();
    let t = Target { point: Vec3::new(0.25, 0.25, 0.0), normal: Vec3::z() };
    // A source one period away coincides with a shifted copy.
    let y = vec![Vec3::new(1.25, 0.25, 0.0)];
    assert!(matches!(near_block(10.0, &[t], &y, &inc, Deriv::Value), Err(Error::Assembly(_))));
}

#[test]
fn block_pattern_of_two_interface_stack() {
    let stack = LayerStack::transmission(
        vec![corrugated(0.1, 0.0), corrugated(-0.1, -1.0)],
        vec![5.0, 7.0, 6.0],
        None,
        None,
    )
    .unwrap();
    let inc = make_incidence(5.0, 0.3, 2.8, 1.0, 1.0).unwrap();
    let sys = assemble_multilayer(&stack, &small_disc(), &inc).unwrap();
    let model = &sys.model;
    for (row, _) in &model.layout.rows {
        for (col, _) in &model.layout.cols {
            let expected = match (*row, *col) {
                (RowBlock::Interface(i), c) => c.layer().is_some_and(|l| l == i || l == i + 1),
                (RowBlock::Walls(l), c) => c.layer() == Some(l),
                (RowBlock::Lid(Direction::Up), c) => c.layer() == Some(1) || c == ColGroup::Bragg(Direction::Up),
                (RowBlock::Lid(Direction::Down), c) => {
                    c.layer() == Some(3) || c == ColGroup::Bragg(Direction::Down)
                }
            };
            assert_eq!(sys.block(*row, *col).is_some(), expected, "{row:?} x {col:?}");
        }
    }
    // Lower layers enter interface rows with the opposite sign.
    let up = sys.block(RowBlock::Interface(1), ColGroup::Proxy(1)).unwrap();
    let down = sys.block(RowBlock::Interface(1), ColGroup::Proxy(2)).unwrap();
    let t = &model.colloc[0][0];
    let z1 = model.layers[0].proxies[0];
    let z2 = model.layers[1].proxies[0];
    assert!((up[(0, 0)] - helmholtz_green(5.0, &t.point, &z1).unwrap()).norm() < 1e-14);
    assert!((down[(0, 0)] + helmholtz_green(7.0, &t.point, &z2).unwrap()).norm() < 1e-14);
}

#[test]
fn dimensions_follow_point_counts() {
    let stack = LayerStack::dirichlet(corrugated(0.1, 0.0), 10.0, None).unwrap();
    let inc = make_incidence(10.0, 0.3, 2.8, 1.0, 1.0).unwrap();
    let mut disc = Discretization::new(6, 5, 5, 3);
    disc.order = 2;
    let sys = assemble_dirichlet(&stack, &disc, &inc).unwrap();
    let m = disc.m();
    assert_eq!(m, 7);
    assert_eq!(sys.layout.nrows(), m * m + 4 * 9 + 2 * 25);
    assert_eq!(sys.layout.ncols(), 36 + 25 + 25);
    assert_eq!(sys.rhs.len(), sys.layout.nrows());
    let dense = sys.to_dense();
    assert_eq!((dense.nrows(), dense.ncols()), (sys.layout.nrows(), sys.layout.ncols()));
    // Only the boundary rows are forced.
    let r = sys.layout.row_range(RowBlock::Interface(1)).unwrap();
    for (i, v) in sys.rhs.iter().enumerate() {
        if !r.contains(&i) {
            assert_eq!(*v, Z0);
        }
    }
    let t = &sys.model.colloc[0][3];
    assert!((sys.rhs[3] + plane_wave(&inc, &t.point)).norm() < 1e-15);
}

#[test]
fn dirichlet_assembly_rejects_transmission_stack() {
    let stack = LayerStack::transmission(vec![corrugated(0.1, 0.0)], vec![5.0, 6.0], None, None).unwrap();
    let inc = make_incidence(5.0, 0.0, PI, 1.0, 1.0).unwrap();
    assert!(assemble_dirichlet(&stack, &small_disc(), &inc).is_err());
}

#[test]
fn streamed_residual_matches_dense_product() {
    let stack = LayerStack::transmission(vec![corrugated(0.1, 0.0)], vec![5.0, 6.0], None, None).unwrap();
    let inc = make_incidence(5.0, 0.3, 2.8, 1.0, 1.0).unwrap();
    let disc = small_disc();
    let sys = assemble_multilayer(&stack, &disc, &inc).unwrap();
    let n = sys.layout.ncols();
    let x: Vec<Complex64> = (0..n).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect();
    let r = sys.model.residual(&x, &sys.rhs).unwrap();
    let m = sys.to_dense();
    let mx = &m * faer::ColRef::from_slice(&x);
    for i in 0..r.len() {
        let e = mx[i] - sys.rhs[i];
        assert!((r[i] - e).norm() < 1e-10 * (1.0 + e.norm()));
    }
}

#[test]
fn model_rejects_mismatched_wavenumber() {
    let stack = LayerStack::dirichlet(PeriodicSurface::flat(0.0, 1.0, 1.0), 10.0, None).unwrap();
    let inc = make_incidence(9.0, 0.0, PI, 1.0, 1.0).unwrap();
    assert!(Model::new(&stack, &small_disc(), &inc).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gather_scatter_round_trip(seed in 0u64..1000) {
        let stack = LayerStack::transmission(
            vec![PeriodicSurface::flat(0.0, 1.0, 1.0), PeriodicSurface::flat(-1.0, 1.0, 1.0)],
            vec![3.0, 4.0, 5.0],
            None,
            None,
        )
        .unwrap();
        let inc = make_incidence(3.0, 0.1, 3.0, 1.0, 1.0).unwrap();
        let mut disc = Discretization::new(2, 2, 3, 2);
        disc.order = 1;
        let model = Model::new(&stack, &disc, &inc).unwrap();
        let n = model.layout.ncols();
        let x: Vec<Complex64> = (0..n).map(|i| Complex64::new((seed + i as u64) as f64, -(i as f64))).collect();
        let groups = model.layout.gather(&x);
        prop_assert_eq!(groups.len(), model.layout.cols.len());
        prop_assert_eq!(model.layout.scatter(&groups).unwrap(), x);
        let mut bad = groups.clone();
        bad[0].1.pop();
        prop_assert!(model.layout.scatter(&bad).is_err());
        // Columns of every layer are contiguous.
        for l in 1..=3 {
            let r = model.layer_cols(l);
            let sum: usize = model.layer_groups(l).iter().map(|g| model.layout.col_range(*g).unwrap().len()).sum();
            prop_assert_eq!(r.len(), sum);
        }
    }
}
