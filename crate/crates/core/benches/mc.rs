//! Sequential against data-parallel path batches. Run with
//! `cargo bench -p mheat-core`; set `RAYON_NUM_THREADS` to vary the pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mheat_core::geometry::fields::{gaussian_bump, Profile, Ridge};
use mheat_core::geometry::ManifoldModel;
use mheat_core::mc::{Exec, SimConfig};
use mheat_core::semigroup::{estimate_hess_matrix, estimate_pt, HessianEstimatorConfig, HessianMode};
use std::hint::black_box;

fn execs() -> [(&'static str, Exec); 2] {
    [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)]
}

fn pt_on_the_sphere(c: &mut Criterion) {
    let m = ManifoldModel::sphere(2, 1.0).unwrap();
    let f = gaussian_bump(&m, &m.origin().coords, 0.7).unwrap();
    let x = m.exp_origin(&[0.3, 0.2]);
    let mut group = c.benchmark_group("estimate_pt/sphere");
    group.sample_size(10);
    for (name, exec) in execs() {
        let sim = SimConfig::new(4096, 1).with_h(0.01).with_exec(exec);
        group.bench_with_input(BenchmarkId::from_parameter(name), &sim, |b, sim| {
            b.iter(|| black_box(estimate_pt(&m, &f, &x, 0.5, sim).unwrap()))
        });
    }
    group.finish();
}

fn hessian_on_the_hyperbolic_plane(c: &mut Criterion) {
    let m = ManifoldModel::hyperbolic(2, 1.0).unwrap();
    let f = Ridge::new("x1^2", vec![0.0, 1.0, 0.0], Profile::Square);
    let x = m.origin();
    let cfg = HessianEstimatorConfig::default();
    let mut group = c.benchmark_group("estimate_hess/hyperbolic");
    group.sample_size(10);
    for (name, exec) in execs() {
        let sim = SimConfig::new(2048, 2).with_h(0.01).with_exec(exec);
        group.bench_with_input(BenchmarkId::from_parameter(name), &sim, |b, sim| {
            b.iter(|| black_box(estimate_hess_matrix(&m, &f, &x, 0.5, &cfg, HessianMode::Bismut, sim).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, pt_on_the_sphere, hessian_on_the_hyperbolic_plane);
criterion_main!(benches);
