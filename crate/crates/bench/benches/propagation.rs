//! Propagator construction and application across the dense/Krylov split.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array1;
use num_complex::Complex64 as C64;

use spinecho_bench::bench_system;
use spinecho_core::hamiltonian::{native_t2, secular_dipolar};
use spinecho_core::propagation::{expm_multiply, propagator};
use spinecho_core::spin::Axis;

fn dense_propagator(c: &mut Criterion) {
    let mut group = c.benchmark_group("dense_propagator");
    group.sample_size(10);
    for n_sites in [6usize, 8, 10] {
        let sys = bench_system(n_sites);
        let h = secular_dipolar(&sys, Axis::X);
        let t2 = native_t2(&sys).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n_sites), &n_sites, |b, _| {
            b.iter(|| propagator(&h, 1.3 * t2).unwrap());
        });
    }
    group.finish();
}

fn krylov_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("krylov_apply");
    group.sample_size(10);
    for n_sites in [10usize, 12] {
        let sys = bench_system(n_sites).with_dense_site_limit(4);
        let h = secular_dipolar(&sys, Axis::X);
        let t2 = native_t2(&bench_system(n_sites)).unwrap();
        let dim = sys.dim();
        let mut v = Array1::<C64>::zeros(dim);
        for (i, x) in v.iter_mut().enumerate() {
            *x = C64::new((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos());
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.mapv_inplace(|z| z / norm);
        group.bench_with_input(BenchmarkId::from_parameter(n_sites), &n_sites, |b, _| {
            b.iter(|| expm_multiply(&h, 0.8 * t2, &v, 1e-10, 48).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, dense_propagator, krylov_apply);
criterion_main!(benches);
