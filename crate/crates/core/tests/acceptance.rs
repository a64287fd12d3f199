//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with its measured figures (run with `-- --nocapture` to
//! see them on success).

use std::time::Instant;

use spinecho_core::analysis::{
    fit_abragam, fit_linear_rate, fit_logistic, fit_rate_relation, half_height_time_curve,
    logistic_model,
};
use spinecho_core::hamiltonian::{
    second_moment, secular_dipolar, PerturbationModel, PerturbationSpec, ScalingSpec,
};
use spinecho_core::linalg;
use spinecho_core::propagation::{
    cwsdi_block_pair, propagator, EvolutionMode, StroboscopicPolicy,
};
use spinecho_core::protocols::{
    EchoEngine, Scheme, SigmaPlacement, DEFAULT_OMEGA_E,
};
use spinecho_core::spin::{collective_operator, Axis, SpinSystem};

const PREFACTOR: f64 = 1.5e3; // rad/s nm^3, T2 of order 100 us
const BOX_NM: f64 = 2.0;
const MIN_DIST_NM: f64 = 0.35;

fn system(n: usize, seed: u64) -> SpinSystem {
    SpinSystem::random(n, seed, BOX_NM, MIN_DIST_NM, PREFACTOR).unwrap()
}

fn engine(system: &SpinSystem, mode: EvolutionMode, omega_e: f64) -> EchoEngine {
    EchoEngine::new(system, mode, omega_e, StroboscopicPolicy::RoundNearest).unwrap()
}

fn report(idx: u8, title: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {idx} ({title}): {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {idx} failed: {detail}");
}

// 1. Perfect echo: both schemes, five k values each, N = 10, effective
//    mode, Sigma = 0: |M - 1| < 1e-9 on a 20-point grid, under a minute.
#[test]
fn criterion_01_perfect_echo() {
    let start = Instant::now();
    let sys = system(10, 1);
    let eng = engine(&sys, EvolutionMode::Effective, DEFAULT_OMEGA_E);
    let t2 = eng.t2().unwrap();
    let times: Vec<f64> = (1..=20).map(|i| i as f64 * 0.3 * t2).collect();
    let mut worst = 0.0f64;
    for (scheme, ks) in [
        (Scheme::One, [0.1, 0.2, 0.3, 0.4, 0.5]),
        (Scheme::Two, [0.1, 0.3, 0.5, 0.7, 0.9]),
    ] {
        for k in ks {
            let curve = eng
                .echo_curve(scheme, k, &times, None, SigmaPlacement::VariableSegment)
                .unwrap();
            for v in curve.values {
                worst = worst.max((v - 1.0).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "perfect echo",
        worst < 1e-9 && elapsed.as_secs() < 60,
        &format!("max |M - 1| = {worst:.2e}, runtime {elapsed:.2?}"),
    );
}

// 2. Scaling collapse: P^k(t) = P^1(k t) exactly in effective mode; within
//    5% in microscopic mode once omega_e >= 20 sqrt(M2).
#[test]
fn criterion_02_scaling_collapse() {
    let sys = system(8, 5);
    let eff = engine(&sys, EvolutionMode::Effective, DEFAULT_OMEGA_E);
    let t2 = eff.t2().unwrap();
    let times: Vec<f64> = (1..=15).map(|i| i as f64 * 0.25 * t2).collect();
    let mut worst_eff = 0.0f64;
    for k in [0.25, 0.5, 0.75] {
        let scaled = eff.polarization_curve(k, &times).unwrap();
        let stretched: Vec<f64> = times.iter().map(|&t| k * t).collect();
        let reference = eff.polarization_curve(1.0, &stretched).unwrap();
        for (a, b) in scaled.values.iter().zip(reference.values.iter()) {
            worst_eff = worst_eff.max((a - b).abs());
        }
    }

    let omega_e = 20.0 / t2; // 20 x the second-moment root
    let micro = engine(&sys, EvolutionMode::Microscopic, omega_e);
    let tau = micro.tau_e();
    let grid: Vec<f64> = (1..=10).map(|i| 2.0 * i as f64 * tau).collect();
    let mut worst_micro = 0.0f64;
    for k in [0.25, 0.5, 0.75] {
        let curve = micro.polarization_curve(k, &grid).unwrap();
        for (t, v) in curve.times.iter().zip(curve.values.iter()) {
            let want = eff.polarization_curve(1.0, &[k * t]).unwrap().values[0];
            worst_micro = worst_micro.max((v - want).abs());
        }
    }
    report(
        2,
        "scaling collapse",
        worst_eff < 1e-9 && worst_micro < 0.05,
        &format!("effective dev {worst_eff:.2e}, microscopic dev {worst_micro:.4}"),
    );
}

// 3. Floquet convergence: the microscopic block pair approaches the
//    effective propagator at first order, shrinking >= 1.8x per doubling of
//    omega_e over three doublings (N = 6, k = 0.3, t = 8 tau_e).
#[test]
fn criterion_03_floquet_convergence_order() {
    let sys = system(6, 7);
    let m2 = second_moment(
        &secular_dipolar(&sys, Axis::X),
        &collective_operator(&sys, Axis::Z),
    )
    .unwrap();
    let base = 10.0 * m2.sqrt();
    let t = 8.0 * 2.0 * std::f64::consts::PI / base;
    let mut dists = Vec::new();
    for doubling in 0..4 {
        let omega_e = base * (1u32 << doubling) as f64;
        let spec = ScalingSpec::from_k(0.3, omega_e).unwrap();
        let eff = cwsdi_block_pair(&sys, &spec, t, EvolutionMode::Effective, StroboscopicPolicy::Strict)
            .unwrap();
        let mic = cwsdi_block_pair(
            &sys,
            &spec,
            t,
            EvolutionMode::Microscopic,
            StroboscopicPolicy::Strict,
        )
        .unwrap();
        let diff = &mic.unitary.to_dense() - &eff.unitary.to_dense();
        dists.push(linalg::spectral_norm(&diff));
    }
    let ratios: Vec<f64> = dists.windows(2).map(|w| w[0] / w[1]).collect();
    let pass = ratios.iter().all(|&r| r >= 1.8);
    report(
        3,
        "Floquet convergence order",
        pass,
        &format!("distances {dists:?}, ratios {ratios:?}"),
    );
}

// 4. Second-moment linearity: trace-route (k, 1/T2^k) points are an exact
//    line through the origin; the Abragam-fit route over the initial decay
//    agrees with the trace route within 10% on N = 10.
#[test]
fn criterion_04_second_moment_linearity() {
    // trace route: 1/T2^k = k sqrt(M2) identically
    let sys = system(8, 3);
    let m2 = second_moment(
        &secular_dipolar(&sys, Axis::X),
        &collective_operator(&sys, Axis::Z),
    )
    .unwrap();
    let rate_1 = m2.sqrt();
    let points: Vec<(f64, f64)> = (1..=10)
        .map(|i| {
            let k = 0.1 * i as f64;
            let scaled = secular_dipolar(&sys, Axis::X).scale(k);
            let m2_k = second_moment(&scaled, &collective_operator(&sys, Axis::Z)).unwrap();
            (k, m2_k.sqrt())
        })
        .collect();
    let line = fit_linear_rate(&points).unwrap();
    let slope = line.overall.value("slope").unwrap();
    let intercept = line.overall.value("intercept").unwrap();
    let slope_ok = (slope - rate_1).abs() < 1e-6 * rate_1;
    let intercept_ok = intercept.abs() < 0.01 * slope.abs();

    // Abragam route: fit the FID over its initial decay (out to 1.5 T2,
    // before finite-size revivals the model cannot represent)
    let mut abragam_devs = Vec::new();
    for seed in [1u64, 2] {
        let sys10 = system(10, seed);
        let eng = engine(&sys10, EvolutionMode::Effective, DEFAULT_OMEGA_E);
        let m2_z = second_moment(
            &secular_dipolar(&sys10, Axis::Z),
            &collective_operator(&sys10, Axis::Y),
        )
        .unwrap();
        let trace_rate = m2_z.sqrt();
        let t2 = 1.0 / trace_rate;
        let times: Vec<f64> = (0..45).map(|i| i as f64 * 1.5 * t2 / 45.0).collect();
        let fid = eng.fid_curve(&times).unwrap();
        let fit = fit_abragam(&fid.times, &fid.values).unwrap();
        abragam_devs.push((1.0 / fit.t2 - trace_rate).abs() / trace_rate);
    }
    let abragam_ok = abragam_devs.iter().all(|&d| d < 0.10);
    report(
        4,
        "second-moment linearity",
        slope_ok && intercept_ok && abragam_ok,
        &format!(
            "slope rel dev {:.2e}, intercept/slope {:.2e}, Abragam route devs {abragam_devs:?}",
            (slope - rate_1).abs() / rate_1,
            intercept / slope
        ),
    );
}

// 5. Monotone decoherence ordering: fixed Sigma (strength 0.3) acting
//    through the sequence, Scheme 1, N = 8: half-height times strictly
//    decrease as k grows, over three independent seeds.
#[test]
fn criterion_05_monotone_decoherence_ordering() {
    let mut all = Vec::new();
    let mut pass = true;
    for seed in [1u64, 2, 3] {
        let sys = system(8, seed);
        let eng = engine(&sys, EvolutionMode::Effective, DEFAULT_OMEGA_E);
        let t2 = eng.t2().unwrap();
        let times: Vec<f64> = (1..=55).map(|i| i as f64 * 0.2 * t2).collect();
        let spec = PerturbationSpec::new(PerturbationModel::RandomDipolar, 0.3, 100 + seed).unwrap();
        let mut t3s = Vec::new();
        for k in [0.1, 0.2, 0.3, 0.4, 0.5] {
            let curve = eng
                .echo_curve(Scheme::One, k, &times, Some(&spec), SigmaPlacement::Both)
                .unwrap();
            let t3 = half_height_time_curve(&curve).expect("curve crosses half height");
            t3s.push(t3 / t2);
        }
        pass &= t3s.windows(2).all(|w| w[0] > w[1]);
        all.push((seed, t3s));
    }
    report(
        5,
        "monotone decoherence ordering",
        pass,
        &format!("T3/T2 per seed: {all:?}"),
    );
}

// 6. Rate-relation shape: sweeping Sigma strength over a decade and k over
//    its Scheme-1 range yields (T2^k/T_Sigma, T2^k/T3^k) points fitting
//    sqrt(A + x^2) with small residual, unit large-x slope, and A > 0.
#[test]
fn criterion_06_rate_relation_shape() {
    let sys = system(8, 1);
    let eng = engine(&sys, EvolutionMode::Effective, DEFAULT_OMEGA_E);
    let t2 = eng.t2().unwrap();
    let mut points = Vec::new();
    for (si, strength) in [0.1, 0.18, 0.32, 0.56, 1.0].iter().enumerate() {
        let spec =
            PerturbationSpec::new(PerturbationModel::RandomDipolar, *strength, 40 + si as u64)
                .unwrap();
        let t_max = 14.0 * 1.18 * t2 / strength;
        let times: Vec<f64> = (1..=50).map(|i| i as f64 * t_max / 50.0).collect();
        let reference = eng
            .echo_curve(
                Scheme::One,
                Scheme::One.reference_k(),
                &times,
                Some(&spec),
                SigmaPlacement::Both,
            )
            .unwrap();
        let t_sigma = half_height_time_curve(&reference).expect("reference crosses half height");
        for k in [0.1, 0.2, 0.3, 0.4, 0.5] {
            let curve = eng
                .echo_curve(Scheme::One, k, &times, Some(&spec), SigmaPlacement::Both)
                .unwrap();
            let t3 = half_height_time_curve(&curve).expect("echo crosses half height");
            let t2k = t2 / k;
            points.push((t2k / t_sigma, t2k / t3));
        }
    }
    let fit = fit_rate_relation(&points).unwrap();
    let ymax = points.iter().map(|(_, y)| *y).fold(f64::NEG_INFINITY, f64::max);
    let ymin = points.iter().map(|(_, y)| *y).fold(f64::INFINITY, f64::min);
    let rms_frac = fit.fit.residual_rms / (ymax - ymin);

    // empirical asymptote from the largest-x points
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let hi = &sorted[sorted.len() - 6..];
    let slope = fit_linear_rate(hi).unwrap().overall.value("slope").unwrap();

    let pass = fit.a > 0.0 && rms_frac < 0.15 && (slope - 1.0).abs() < 0.10;
    report(
        6,
        "rate-relation shape",
        pass,
        &format!(
            "A = {:.4}, rms/range = {rms_frac:.3}, large-x slope = {slope:.3}, n = {}",
            fit.a,
            points.len()
        ),
    );
}

// 7. Fit round trips on zero-noise synthetic data, each under a second.
#[test]
fn criterion_07_fit_round_trips() {
    let start = Instant::now();
    let times: Vec<f64> = (0..60).map(|i| i as f64 * 5.0e-6).collect();

    let (w, h) = (2.1e4, 1.3e4);
    let ab: Vec<f64> = times
        .iter()
        .map(|&t| spinecho_core::analysis::abragam_model(t, &[w, h]))
        .collect();
    let fa = fit_abragam(&times, &ab).unwrap();
    let ab_ok = (fa.w - w).abs() < 1e-6 * w && (fa.h - h).abs() < 1e-6 * h;

    let (c, lambda, t3) = (1.0, 2.0e4, 1.4e-4);
    let lg: Vec<f64> = times
        .iter()
        .map(|&t| logistic_model(t, &[c, lambda, t3]))
        .collect();
    let fl = fit_logistic(&times, &lg).unwrap();
    let lg_ok = (fl.c - c).abs() < 1e-6
        && (fl.lambda - lambda).abs() < 1e-6 * lambda
        && (fl.t3 - t3).abs() < 1e-6 * t3;

    let a = 0.02;
    let pts: Vec<(f64, f64)> = (0..12)
        .map(|i| {
            let x = 0.05 + 0.3 * i as f64;
            (x, (a + x * x).sqrt())
        })
        .collect();
    let fr = fit_rate_relation(&pts).unwrap();
    let rr_ok = (fr.a - a).abs() < 1e-8;

    let elapsed = start.elapsed();
    report(
        7,
        "fit round trips",
        ab_ok && lg_ok && rr_ok && elapsed.as_secs_f64() < 3.0,
        &format!(
            "abragam {} logistic {} rate-relation |dA| = {:.1e}, total {elapsed:.2?}",
            ab_ok,
            lg_ok,
            (fr.a - a).abs()
        ),
    );
}

// 8. Unitarity and the two-spin oracle: every produced propagator is
//    unitary within 1e-10; N = 2 propagators and second moments match
//    hand-computed 4x4 results within 1e-12.
#[test]
fn criterion_08_unitarity_and_two_spin_oracle() {
    use num_complex::Complex64 as C64;

    let mut worst_unitarity = 0.0f64;
    let sys = system(4, 9);
    let h = secular_dipolar(&sys, Axis::X);
    for t in [1e-5, 3e-4, 2e-3] {
        let u = propagator(&h, t).unwrap();
        let m = u.dense().unwrap().to_dense();
        let gram = linalg::adjoint(&m).dot(&m);
        worst_unitarity =
            worst_unitarity.max(linalg::max_abs_diff(&gram, &linalg::identity(m.nrows())));
    }
    let spec = ScalingSpec::from_k(0.35, 40.0 * 2.0e4).unwrap();
    let pair = cwsdi_block_pair(
        &sys,
        &spec,
        8.0 * spec.tau_e(),
        EvolutionMode::Microscopic,
        StroboscopicPolicy::Strict,
    )
    .unwrap();
    let m = pair.unitary.to_dense();
    let gram = linalg::adjoint(&m).dot(&m);
    worst_unitarity =
        worst_unitarity.max(linalg::max_abs_diff(&gram, &linalg::identity(m.nrows())));

    // two-spin oracle: aligned pair, hand-diagonalized spectrum
    let pair_sys = SpinSystem::new(
        vec![[0.0; 3], [0.0, 0.0, 1.0]],
        [0.0, 0.0, 1.0],
        PREFACTOR,
        None,
    )
    .unwrap();
    let d = spinecho_core::hamiltonian::dipolar_couplings(&pair_sys)[[0, 1]];
    let h2 = secular_dipolar(&pair_sys, Axis::Z);
    let t = 0.37 / d.abs();
    let u = propagator(&h2, t).unwrap().dense().unwrap().to_dense();
    let s = 1.0 / 2.0f64.sqrt();
    let z = |re: f64| C64::new(re, 0.0);
    let eigvecs: [([C64; 4], f64); 4] = [
        ([z(1.0), z(0.0), z(0.0), z(0.0)], d / 2.0),
        ([z(0.0), z(0.0), z(0.0), z(1.0)], d / 2.0),
        ([z(0.0), z(s), z(s), z(0.0)], -d),
        ([z(0.0), z(s), z(-s), z(0.0)], 0.0),
    ];
    let mut oracle = ndarray::Array2::<C64>::zeros((4, 4));
    for (vec, lam) in eigvecs {
        let phase = C64::from_polar(1.0, -lam * t);
        for r in 0..4 {
            for c in 0..4 {
                oracle[[r, c]] += phase * vec[r] * vec[c].conj();
            }
        }
    }
    let prop_dev = linalg::max_abs_diff(&u, &oracle);

    // second moment against the explicit 4x4 commutator trace
    let iy = collective_operator(&pair_sys, Axis::Y).to_dense();
    let hm = h2.to_dense();
    let comm = hm.dot(&iy) - iy.dot(&hm);
    let oracle_m2 =
        comm.iter().map(|v| v.norm_sqr()).sum::<f64>() / iy.iter().map(|v| v.norm_sqr()).sum::<f64>();
    let lib_m2 = second_moment(&h2, &collective_operator(&pair_sys, Axis::Y)).unwrap();
    let m2_dev = (lib_m2 - oracle_m2).abs() / oracle_m2;

    let pass = worst_unitarity < 1e-10 && prop_dev < 1e-12 && m2_dev < 1e-12;
    report(
        8,
        "unitarity and two-spin oracle",
        pass,
        &format!(
            "unitarity dev {worst_unitarity:.2e}, propagator dev {prop_dev:.2e}, M2 rel dev {m2_dev:.2e}"
        ),
    );
}

// 9. Scheme agreement at k = 0: identical outputs for the same Sigma and
//    time grid.
#[test]
fn criterion_09_scheme_agreement_at_k_zero() {
    let sys = system(6, 11);
    let spec = PerturbationSpec::new(PerturbationModel::RandomDipolar, 0.5, 21).unwrap();
    let sigma = spinecho_core::hamiltonian::perturbation_sigma(&sys, &spec).unwrap();
    let mut worst = 0.0f64;
    for mode in [EvolutionMode::Effective, EvolutionMode::Microscopic] {
        let eng = engine(&sys, mode, DEFAULT_OMEGA_E);
        let grid: Vec<f64> = (1..=10).map(|i| 2.0 * i as f64 * eng.tau_e()).collect();
        for &t_e in &grid {
            let m1 = eng
                .loschmidt_echo(Scheme::One, 0.0, t_e, None, Some(&sigma))
                .unwrap();
            let m2 = eng
                .loschmidt_echo(Scheme::Two, 0.0, t_e, Some(&sigma), None)
                .unwrap();
            worst = worst.max((m1 - m2).abs());
        }
    }
    report(
        9,
        "scheme agreement at k = 0",
        worst < 1e-12,
        &format!("max |M1 - M2| = {worst:.2e}"),
    );
}

// 10. OTOC consistency: M_0-normalization exact, and the 16-point
//     theta-transform gives nonnegative coherence weights summing to
//     M_0(t) (N = 4).
#[test]
fn criterion_10_otoc_consistency() {
    let sys = system(4, 13);
    let eng = engine(&sys, EvolutionMode::Effective, DEFAULT_OMEGA_E);
    let t2 = eng.t2().unwrap();
    let k = 0.7;
    let mut worst_unit = 0.0f64;
    let mut worst_neg = 0.0f64;
    let mut worst_sum = 0.0f64;
    for t in [0.5 * t2, 1.5 * t2, 4.0 * t2] {
        let m0 = eng.otoc(k, 0.0, t).unwrap();
        worst_unit = worst_unit.max((m0 / m0 - 1.0).abs().max((m0 - 1.0).abs()));

        // 16-point discrete transform of M_theta over one period
        let n_theta = 16usize;
        let m_theta: Vec<f64> = (0..n_theta)
            .map(|j| {
                let theta = 2.0 * std::f64::consts::PI * j as f64 / n_theta as f64;
                eng.otoc(k, theta, t).unwrap()
            })
            .collect();
        let mut total = 0.0;
        for q in -(sys.n_sites() as i32)..=(sys.n_sites() as i32) {
            let mut re = 0.0;
            for (j, m) in m_theta.iter().enumerate() {
                let ang = 2.0 * std::f64::consts::PI * (j as f64) * (q as f64) / n_theta as f64;
                re += m * ang.cos();
            }
            re /= n_theta as f64;
            worst_neg = worst_neg.min(re);
            total += re;
        }
        worst_sum = worst_sum.max((total - m0).abs());
    }
    let pass = worst_unit < 1e-10 && worst_neg > -1e-10 && worst_sum < 1e-8;
    report(
        10,
        "OTOC consistency",
        pass,
        &format!(
            "normalization dev {worst_unit:.2e}, most negative weight {worst_neg:.2e}, sum dev {worst_sum:.2e}"
        ),
    );
}
