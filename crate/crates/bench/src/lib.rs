//! Shared fixtures for the benchmark targets.

use spinecho_core::spin::SpinSystem;

/// Default bench geometry: cube 2 nm, 0.35 nm spacing, T2 near 100 us.
pub fn bench_system(n_sites: usize) -> SpinSystem {
    SpinSystem::random(n_sites, 1, 2.0, 0.35, 1.5e3).unwrap()
}
