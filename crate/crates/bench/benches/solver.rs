use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use periscat::*;
use periscat_bench::{corrugated_dirichlet, flat_two_layer, small_disc};

fn kernels(c: &mut Criterion) {
    let x = Vec3::new(0.1, 0.2, 0.3);
    let y = Vec3::new(0.7, -0.4, -0.2);
    let n = Vec3::new(0.0, 0.6, 0.8);
    c.bench_function("green", |b| b.iter(|| helmholtz_green(black_box(10.0), &x, &y)));
    c.bench_function("green_dn", |b| b.iter(|| helmholtz_green_dn(black_box(10.0), &x, &y, &n)));
}

fn blocks(c: &mut Criterion) {
    let (stack, inc) = corrugated_dirichlet(10.0);
    let s = &stack.interfaces[0];
    let mut g = c.benchmark_group("near_block");
    for n in [10usize, 20] {
        let targets = collocation_points(s, n + n / 10);
        let sources = mfs_sources(s, n, 0.03, Side::Below).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n * n), &n, |b, _| {
            b.iter(|| near_block(10.0, &targets, &sources, &inc, Deriv::Normal).unwrap())
        });
    }
    g.finish();
    c.bench_function("model_assembly_16", |b| {
        b.iter(|| assemble_dirichlet(&stack, &small_disc(16), &inc).unwrap())
    });
}

fn solves(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    let (stack, inc) = corrugated_dirichlet(5.0);
    for method in [LsqMethod::Svd, LsqMethod::BlockQr] {
        let opts = SolveOptions { method, full_residual: false, ..Default::default() };
        g.bench_function(format!("dirichlet_16_{method:?}"), |b| {
            b.iter(|| solve_with(&stack, &small_disc(16), &inc, &opts).unwrap())
        });
    }
    let (stack, inc) = flat_two_layer();
    g.bench_function("two_layer_16", |b| b.iter(|| solve(&stack, &small_disc(16), &inc).unwrap()));
    g.finish();
}

criterion_group!(benches, kernels, blocks, solves);
criterion_main!(benches);
