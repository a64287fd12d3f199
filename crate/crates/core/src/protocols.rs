//! The measurable experiments: polarization curves under the scaled
//! Hamiltonian, Loschmidt echoes in the two scaled-dynamics schemes,
//! reference normalization, and the theta-resolved OTOC.
//!
//! All signals are normalized trace overlaps of the evolved deviation
//! density with the readout observable. In effective mode the forward and
//! backward generators are `k_F H_d^x + Sigma_F` and `-k_B H_d^x + Sigma_B`;
//! in microscopic mode each scaled segment is realized by the two-block
//! irradiation sequence at the tilt angle for its signed scale factor, while
//! Scheme 1's unscaled forward segment is plain dipolar evolution.

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hamiltonian::{
    perturbation_sigma, second_moment, secular_dipolar, theta_from_k, PerturbationSpec,
    ScalingSpec,
};
use crate::linalg::{self, EigenBasis};
use crate::propagation::{BlockPairFamily, EvolutionMode, StroboscopicPolicy};
use crate::spin::{
    collective_operator, site_operator, Axis, Operator, SiteAxis, SpinSystem,
};

/// Effective frequency used when callers do not specify one: 2 pi x 79.8 kHz.
pub const DEFAULT_OMEGA_E: f64 = 2.0 * std::f64::consts::PI * 79.8e3;

/// Reference values below this fraction of the initial amplitude flag the
/// normalized point invalid instead of dividing.
pub const DEFAULT_NORMALIZATION_FLOOR: f64 = 0.02;

/// The two time-reversal schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Forward fixed at the full dipolar Hamiltonian (k_F = 1), backward
    /// scaled by -k for k in (0, 0.5]; t_F = k t_B.
    One,
    /// Forward scaled by k in (0, 1), backward fixed on-resonance at
    /// k_B = 1/2; t_B = 2 k t_F.
    Two,
}

impl Scheme {
    pub fn id(&self) -> u8 {
        match self {
            Scheme::One => 1,
            Scheme::Two => 2,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "1" => Some(Scheme::One),
            "2" => Some(Scheme::Two),
            _ => None,
        }
    }

    /// Legal variable scale factors; k = 0 is the degenerate case shared by
    /// both schemes.
    pub fn validate_k(&self, k: f64) -> Result<()> {
        let ok = match self {
            Scheme::One => (0.0..=0.5).contains(&k),
            Scheme::Two => (0.0..1.0).contains(&k),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain {
                what: "k",
                value: k,
                domain: match self {
                    Scheme::One => "[0, 0.5] for Scheme 1",
                    Scheme::Two => "[0, 1) for Scheme 2",
                },
            })
        }
    }

    /// Adapted segment parameters satisfying k_F t_F = k_B t_B at evolution
    /// time t_e.
    pub fn segment_times(&self, k: f64, t_e: f64) -> SchemeTimes {
        match self {
            Scheme::One => SchemeTimes {
                k_f: 1.0,
                t_f: k * t_e,
                k_b: k,
                t_b: t_e,
            },
            Scheme::Two => SchemeTimes {
                k_f: k,
                t_f: t_e,
                k_b: 0.5,
                t_b: 2.0 * k * t_e,
            },
        }
    }

    /// Reference scale factor used for normalization curves.
    pub fn reference_k(&self) -> f64 {
        match self {
            Scheme::One => 0.05,
            Scheme::Two => 0.1,
        }
    }
}

/// Forward/backward scale factors and durations for one echo evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeTimes {
    pub k_f: f64,
    pub t_f: f64,
    pub k_b: f64,
    pub t_b: f64,
}

/// Where the perturbation acts during an echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaPlacement {
    /// During the variable-k segment only: backward in Scheme 1, forward in
    /// Scheme 2.
    #[default]
    VariableSegment,
    /// During both segments.
    Both,
}

/// Curve family tag for metadata and serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Scheme1,
    Scheme2,
    PCurve,
    Otoc,
    Fid,
}

impl CurveKind {
    pub fn name(&self) -> &'static str {
        match self {
            CurveKind::Scheme1 => "1",
            CurveKind::Scheme2 => "2",
            CurveKind::PCurve => "p-curve",
            CurveKind::Otoc => "otoc",
            CurveKind::Fid => "fid",
        }
    }
}

/// Whether curve times are laboratory evolution times or scaled times
/// t_s = k t_e.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeAxis {
    #[default]
    Lab,
    Scaled,
}

/// Metadata carried by every sampled curve.
#[derive(Debug, Clone, Copy)]
pub struct CurveMeta {
    pub kind: CurveKind,
    pub k: f64,
    pub mode: EvolutionMode,
    pub perturbation: Option<PerturbationSpec>,
    pub time_axis: TimeAxis,
}

/// A sampled signal with its validity mask (points can be invalidated by
/// reference normalization).
#[derive(Debug, Clone)]
pub struct EchoCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub meta: CurveMeta,
}

impl EchoCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>, meta: CurveMeta) -> Self {
        let valid = vec![true; values.len()];
        Self {
            times,
            values,
            valid,
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Rewrite the time axis as scaled time t_s = k t_e.
    pub fn into_scaled_time(mut self) -> Self {
        for t in &mut self.times {
            *t *= self.meta.k;
        }
        self.meta.time_axis = TimeAxis::Scaled;
        self
    }

    /// Divide by the curve maximum (valid points only).
    pub fn normalized_by_max(mut self) -> Self {
        let max = self
            .values
            .iter()
            .zip(self.valid.iter())
            .filter(|(_, &v)| v)
            .map(|(x, _)| x.abs())
            .fold(0.0, f64::max);
        if max > 0.0 {
            for v in &mut self.values {
                *v /= max;
            }
        }
        self
    }
}

/// Pointwise quotient against a reference curve.
///
/// Points where the reference dips below `floor` (relative to its initial
/// value) are flagged invalid. Reference values off the curve's grid are
/// linearly interpolated when `interpolate` is set; otherwise differing
/// grids are an error.
pub fn normalize_to_reference(
    curve: &EchoCurve,
    reference: &EchoCurve,
    floor: f64,
    interpolate: bool,
) -> Result<EchoCurve> {
    if curve.is_empty() || reference.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let same_grid = curve.times.len() == reference.times.len()
        && curve
            .times
            .iter()
            .zip(reference.times.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1e-30));
    if !same_grid && !interpolate {
        return Err(Error::GridMismatch);
    }
    let ref0 = reference.values[0].abs();
    let mut out = curve.clone();
    for (i, t) in curve.times.iter().enumerate() {
        let r = if same_grid {
            if reference.valid[i] {
                Some(reference.values[i])
            } else {
                None
            }
        } else {
            interpolate_at(reference, *t)
        };
        match r {
            Some(rv) if rv.abs() >= floor * ref0 => {
                out.values[i] = curve.values[i] / rv;
            }
            _ => {
                out.values[i] = 0.0;
                out.valid[i] = false;
            }
        }
    }
    Ok(out)
}

fn interpolate_at(curve: &EchoCurve, t: f64) -> Option<f64> {
    let ts = &curve.times;
    if t < ts[0] - 1e-12 || t > ts[ts.len() - 1] + 1e-12 {
        return None;
    }
    let idx = match ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(i) => return curve.valid[i].then_some(curve.values[i]),
        Err(i) => i,
    };
    let (lo, hi) = (idx.saturating_sub(1), idx.min(ts.len() - 1));
    if lo == hi {
        return curve.valid[lo].then_some(curve.values[lo]);
    }
    if !curve.valid[lo] || !curve.valid[hi] {
        return None;
    }
    let w = (t - ts[lo]) / (ts[hi] - ts[lo]);
    Some(curve.values[lo] * (1.0 - w) + curve.values[hi] * w)
}

/// Readout observable for echo and polarization measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Readout {
    /// Collective I^z, the total-polarization measurement.
    #[default]
    CollectiveZ,
    /// Single-site I_i^y, emulating the local polarization-echo observable.
    LocalSiteY(usize),
}

/// Excitation operator for the OTOC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OtocExcitation {
    #[default]
    CollectiveY,
    LocalSiteY(usize),
}

/// Optional protocol switches; the defaults reproduce the standard
/// collective-polarization experiments.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoOptions {
    pub readout: Readout,
    /// Model the waiting time before readout by projecting the evolved
    /// deviation onto the zero-coherence sector of I^z.
    pub wait_projection: bool,
    pub otoc_excitation: OtocExcitation,
}

/// Precomputed evaluation context for one system and mode.
///
/// Holds the H_d^x eigenbasis and the readout observable; individual curve
/// calls add their own per-curve decompositions. Immutable and safe to share
/// across parallel workers.
pub struct EchoEngine {
    system: SpinSystem,
    mode: EvolutionMode,
    omega_e: f64,
    policy: StroboscopicPolicy,
    options: EchoOptions,
    dip_x: Operator,
    basis_x: EigenBasis,
    observable: Operator,
    obs_weights: Array2<f64>,
    obs_norm: f64,
}

impl EchoEngine {
    pub fn new(
        system: &SpinSystem,
        mode: EvolutionMode,
        omega_e: f64,
        policy: StroboscopicPolicy,
    ) -> Result<Self> {
        Self::with_options(system, mode, omega_e, policy, EchoOptions::default())
    }

    pub fn with_options(
        system: &SpinSystem,
        mode: EvolutionMode,
        omega_e: f64,
        policy: StroboscopicPolicy,
        options: EchoOptions,
    ) -> Result<Self> {
        if !system.prefers_dense() {
            return Err(Error::DenseRequired { op: "EchoEngine" });
        }
        if omega_e <= 0.0 {
            return Err(Error::Domain {
                what: "omega_e",
                value: omega_e,
                domain: "(0, inf)",
            });
        }
        let dip_x = secular_dipolar(system, Axis::X);
        let basis_x = EigenBasis::of_hermitian(dip_x.dense().unwrap())?;
        let observable = match options.readout {
            Readout::CollectiveZ => collective_operator(system, Axis::Z),
            Readout::LocalSiteY(site) => site_operator(system, site, SiteAxis::Y)?,
        };
        let obs_in_basis = basis_x.to_basis(&observable.to_dense());
        let obs_weights = obs_in_basis.mapv(|z| z.norm_sqr());
        let obs_norm = obs_weights.sum();
        if obs_norm == 0.0 {
            return Err(Error::ZeroObservable);
        }
        Ok(Self {
            system: system.clone(),
            mode,
            omega_e,
            policy,
            options,
            dip_x,
            basis_x,
            observable,
            obs_weights,
            obs_norm,
        })
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn mode(&self) -> EvolutionMode {
        self.mode
    }

    pub fn omega_e(&self) -> f64 {
        self.omega_e
    }

    pub fn tau_e(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega_e
    }

    /// Spreading time of the unscaled dynamics against the readout.
    pub fn t2(&self) -> Result<f64> {
        let m2 = second_moment(&self.dip_x, &self.observable)?;
        Ok(m2.powf(-0.5))
    }

    /// Trace-route spreading time of the scaled dynamics, T2 / |k|.
    pub fn t2_scaled(&self, k: f64) -> Result<f64> {
        if k == 0.0 {
            return Err(Error::Domain {
                what: "k",
                value: 0.0,
                domain: "nonzero for a finite scaled T2",
            });
        }
        Ok(self.t2()? / k.abs())
    }

    /// Autocorrelation of the readout under `exp(-i k H_d^x t)` evaluated
    /// through the shared eigenbasis; `phi = k t`.
    fn shared_phase_value(&self, phi: f64) -> f64 {
        let n = self.basis_x.dim();
        let vals = &self.basis_x.values;
        let w = &self.obs_weights;
        let mut acc = 0.0;
        for m in 0..n {
            acc += w[[m, m]];
            for j in (m + 1)..n {
                acc += 2.0 * w[[m, j]] * ((vals[m] - vals[j]) * phi).cos();
            }
        }
        acc / self.obs_norm
    }

    /// P^k(t): polarization under the scaled Hamiltonian.
    pub fn polarization_curve(&self, k: f64, times: &[f64]) -> Result<EchoCurve> {
        if !(-0.5..=1.0).contains(&k) {
            return Err(Error::Domain {
                what: "k",
                value: k,
                domain: "[-0.5, 1]",
            });
        }
        validate_grid(times)?;
        let meta = CurveMeta {
            kind: CurveKind::PCurve,
            k,
            mode: self.mode,
            perturbation: None,
            time_axis: TimeAxis::Lab,
        };
        match self.mode {
            EvolutionMode::Effective => {
                let values = times
                    .iter()
                    .map(|&t| self.shared_phase_value(k * t))
                    .collect();
                Ok(EchoCurve::new(times.to_vec(), values, meta))
            }
            EvolutionMode::Microscopic => {
                let scaling = ScalingSpec::from_k(k, self.omega_e)?;
                let family = BlockPairFamily::new(&self.system, &scaling, None, self.policy)?;
                let mut actual = Vec::with_capacity(times.len());
                let mut values = Vec::with_capacity(times.len());
                let a = self.observable.to_dense();
                for &t in times {
                    let pair = family.unitary(t)?;
                    actual.push(pair.actual_duration);
                    values.push(self.overlap_after(pair.unitary.dense().unwrap(), &a)?);
                }
                validate_grid(&actual)?;
                Ok(EchoCurve::new(actual, values, meta))
            }
        }
    }

    /// FID: transverse magnetization I^y under the unscaled z-quantized
    /// dipolar Hamiltonian.
    pub fn fid_curve(&self, times: &[f64]) -> Result<EchoCurve> {
        validate_grid(times)?;
        let h = secular_dipolar(&self.system, Axis::Z);
        let basis = EigenBasis::of_hermitian(h.dense().unwrap())?;
        let iy = collective_operator(&self.system, Axis::Y).to_dense();
        let a_basis = basis.to_basis(&iy);
        let w = a_basis.mapv(|z| z.norm_sqr());
        let norm = w.sum();
        let n = basis.dim();
        let values: Vec<f64> = times
            .iter()
            .map(|&t| {
                let mut acc = 0.0;
                for m in 0..n {
                    acc += w[[m, m]];
                    for j in (m + 1)..n {
                        acc += 2.0 * w[[m, j]] * ((basis.values[m] - basis.values[j]) * t).cos();
                    }
                }
                acc / norm
            })
            .collect();
        Ok(EchoCurve::new(
            times.to_vec(),
            values,
            CurveMeta {
                kind: CurveKind::Fid,
                k: 1.0,
                mode: EvolutionMode::Effective,
                perturbation: None,
                time_axis: TimeAxis::Lab,
            },
        ))
    }

    /// Loschmidt echo at one evolution time with explicit perturbation
    /// operators.
    pub fn loschmidt_echo(
        &self,
        scheme: Scheme,
        k: f64,
        t_e: f64,
        sigma_fwd: Option<&Operator>,
        sigma_bwd: Option<&Operator>,
    ) -> Result<f64> {
        let curve = self.echo_curve_inner(scheme, k, &[t_e], sigma_fwd, sigma_bwd, None)?;
        Ok(curve.values[0])
    }

    /// Loschmidt echo with the forward duration detuned by `t_f_offset`
    /// away from the matching condition (effective mode only).
    pub fn loschmidt_echo_detuned(
        &self,
        scheme: Scheme,
        k: f64,
        t_e: f64,
        t_f_offset: f64,
    ) -> Result<f64> {
        if self.mode != EvolutionMode::Effective {
            return Err(Error::Domain {
                what: "t_f_offset",
                value: t_f_offset,
                domain: "effective mode only",
            });
        }
        scheme.validate_k(k)?;
        let st = scheme.segment_times(k, t_e);
        let phi = st.k_f * (st.t_f + t_f_offset) - st.k_b * st.t_b;
        Ok(self.shared_phase_value(phi))
    }

    /// Echo curve over a time grid, building the perturbation from its spec
    /// and placing it per `placement`.
    pub fn echo_curve(
        &self,
        scheme: Scheme,
        k: f64,
        times: &[f64],
        perturbation: Option<&PerturbationSpec>,
        placement: SigmaPlacement,
    ) -> Result<EchoCurve> {
        let sigma = match perturbation {
            Some(spec) if spec.strength > 0.0 => Some(perturbation_sigma(&self.system, spec)?),
            _ => None,
        };
        let (sigma_fwd, sigma_bwd) = match (placement, scheme) {
            (SigmaPlacement::VariableSegment, Scheme::One) => (None, sigma.as_ref()),
            (SigmaPlacement::VariableSegment, Scheme::Two) => (sigma.as_ref(), None),
            (SigmaPlacement::Both, _) => (sigma.as_ref(), sigma.as_ref()),
        };
        self.echo_curve_inner(scheme, k, times, sigma_fwd, sigma_bwd, perturbation.copied())
    }

    fn echo_curve_inner(
        &self,
        scheme: Scheme,
        k: f64,
        times: &[f64],
        sigma_fwd: Option<&Operator>,
        sigma_bwd: Option<&Operator>,
        perturbation: Option<PerturbationSpec>,
    ) -> Result<EchoCurve> {
        scheme.validate_k(k)?;
        validate_grid(times)?;
        let meta = CurveMeta {
            kind: match scheme {
                Scheme::One => CurveKind::Scheme1,
                Scheme::Two => CurveKind::Scheme2,
            },
            k,
            mode: self.mode,
            perturbation,
            time_axis: TimeAxis::Lab,
        };
        match self.mode {
            EvolutionMode::Effective => {
                self.echo_curve_effective(scheme, k, times, sigma_fwd, sigma_bwd, meta)
            }
            EvolutionMode::Microscopic => {
                self.echo_curve_microscopic(scheme, k, times, sigma_fwd, sigma_bwd, meta)
            }
        }
    }

    fn echo_curve_effective(
        &self,
        scheme: Scheme,
        k: f64,
        times: &[f64],
        sigma_fwd: Option<&Operator>,
        sigma_bwd: Option<&Operator>,
        meta: CurveMeta,
    ) -> Result<EchoCurve> {
        let clean = sigma_fwd.is_none() && sigma_bwd.is_none() && !self.options.wait_projection;
        if clean {
            // both generators share the H_d^x eigenbasis; only the net
            // phase k_F t_F - k_B t_B survives
            let values = times
                .iter()
                .map(|&t| {
                    let st = scheme.segment_times(k, t);
                    self.shared_phase_value(st.k_f * st.t_f - st.k_b * st.t_b)
                })
                .collect();
            return Ok(EchoCurve::new(times.to_vec(), values, meta));
        }

        let st_unit = scheme.segment_times(k, 1.0);
        let h_f = self.scaled_generator(st_unit.k_f, sigma_fwd)?;
        let h_b = self.scaled_generator(-st_unit.k_b, sigma_bwd)?;
        let basis_f = EigenBasis::of_hermitian(h_f.dense().unwrap())?;
        let basis_b = EigenBasis::of_hermitian(h_b.dense().unwrap())?;
        let a = self.observable.to_dense();
        let a_f = basis_f.to_basis(&a);
        let b_b = basis_b.to_basis(&a);
        let c = linalg::adjoint(&basis_b.vectors).dot(&basis_f.vectors);
        let c_dag = linalg::adjoint(&c);

        let mut values = Vec::with_capacity(times.len());
        for &t in times {
            let st = scheme.segment_times(k, t);
            // forward Schroedinger evolution of the deviation in the F basis
            let mut rho = a_f.clone();
            phase_conjugate(&mut rho, &basis_f.values, st.t_f);
            // change to the B basis, evolve backward, read out
            let mut rho_b = c.dot(&rho).dot(&c_dag);
            phase_conjugate(&mut rho_b, &basis_b.values, st.t_b);
            let val = if self.options.wait_projection {
                let rho_lab = basis_b.from_basis(&rho_b);
                let projected = project_zero_coherence(&rho_lab);
                linalg::trace_product(&projected, &a) / C64::new(self.obs_norm, 0.0)
            } else {
                linalg::trace_product(&rho_b, &b_b) / C64::new(self.obs_norm, 0.0)
            };
            values.push(real_checked(val)?);
        }
        Ok(EchoCurve::new(times.to_vec(), values, meta))
    }

    fn scaled_generator(&self, scale: f64, sigma: Option<&Operator>) -> Result<Operator> {
        let h = self.dip_x.scale(scale);
        match sigma {
            Some(s) => h.add(s),
            None => Ok(h),
        }
    }

    fn echo_curve_microscopic(
        &self,
        scheme: Scheme,
        k: f64,
        times: &[f64],
        sigma_fwd: Option<&Operator>,
        sigma_bwd: Option<&Operator>,
        meta: CurveMeta,
    ) -> Result<EchoCurve> {
        let st_unit = scheme.segment_times(k, 1.0);
        let fwd = self.segment_family(scheme, SegmentRole::Forward, st_unit.k_f, sigma_fwd)?;
        let bwd = self.segment_family(scheme, SegmentRole::Backward, -st_unit.k_b, sigma_bwd)?;
        let a = self.observable.to_dense();

        let mut actual_times = Vec::with_capacity(times.len());
        let mut values = Vec::with_capacity(times.len());
        for &t_e in times {
            // the variable-time segment defines the grid; the matched
            // segment adapts to the realized duration
            let (u, actual_te) = match scheme {
                Scheme::One => {
                    let (u_b, t_b) = bwd.unitary(t_e)?;
                    let (u_f, _) = fwd.unitary(st_unit.k_b * t_b)?;
                    (u_b.dot(&u_f), t_b)
                }
                Scheme::Two => {
                    let (u_f, t_f) = fwd.unitary(t_e)?;
                    let (u_b, _) = bwd.unitary(2.0 * st_unit.k_f * t_f)?;
                    (u_b.dot(&u_f), t_f)
                }
            };
            actual_times.push(actual_te);
            values.push(self.overlap_after(&u, &a)?);
        }
        validate_grid(&actual_times)?;
        Ok(EchoCurve::new(actual_times, values, meta))
    }

    fn segment_family(
        &self,
        scheme: Scheme,
        role: SegmentRole,
        k_signed: f64,
        sigma: Option<&Operator>,
    ) -> Result<SegmentFamily> {
        let free = matches!((scheme, role), (Scheme::One, SegmentRole::Forward));
        if free {
            // plain dipolar evolution, no irradiation and no grid
            let gen = match sigma {
                Some(s) => {
                    let h = self.dip_x.scale(k_signed).add(s)?;
                    EigenBasis::of_hermitian(h.dense().unwrap())?
                }
                None => scaled_basis(&self.basis_x, k_signed),
            };
            Ok(SegmentFamily::Free(gen))
        } else {
            let theta = theta_from_k(k_signed)?;
            let scaling = ScalingSpec::from_theta(theta, self.omega_e)?;
            Ok(SegmentFamily::Blocks(BlockPairFamily::new(
                &self.system,
                &scaling,
                sigma,
                self.policy,
            )?))
        }
    }

    /// `Tr[U A U† A] / Tr[A A]`, with optional zero-coherence projection
    /// before readout.
    fn overlap_after(&self, u: &Array2<C64>, a: &Array2<C64>) -> Result<f64> {
        let mut rho = u.dot(a).dot(&linalg::adjoint(u));
        if self.options.wait_projection {
            rho = project_zero_coherence(&rho);
        }
        let val = linalg::trace_product(&rho, a) / C64::new(self.obs_norm, 0.0);
        real_checked(val)
    }

    /// Normalized OTOC `Tr[W(t) V† W(t) V] / Tr[W W]` with
    /// `V = exp(-i theta I^z)` and W evolved under the scaled Hamiltonian.
    pub fn otoc(&self, k: f64, theta: f64, t: f64) -> Result<f64> {
        if !(0.0..2.0 * std::f64::consts::PI).contains(&theta) {
            return Err(Error::Domain {
                what: "theta",
                value: theta,
                domain: "[0, 2 pi)",
            });
        }
        let w_t = self.evolved_excitation(k, t)?;
        let n = w_t.nrows();
        let n_sites = self.system.n_sites();
        let norm: f64 = w_t.iter().map(|z| z.norm_sqr()).sum();
        // V is diagonal in the computational basis with phases theta * m(n)
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..n {
            for c in 0..n {
                let m_r = basis_m(r, n_sites);
                let m_c = basis_m(c, n_sites);
                let phase = C64::from_polar(1.0, theta * (m_c - m_r));
                acc += w_t[[r, c]] * w_t[[c, r]] * phase;
            }
        }
        real_checked(acc / C64::new(norm, 0.0))
    }

    /// Coherence-order weights of the evolved excitation with respect to
    /// I^z: the direct projection decomposition. Returned as (order, weight)
    /// with weights summing to 1.
    pub fn otoc_coherence_spectrum(&self, k: f64, t: f64) -> Result<Vec<(i32, f64)>> {
        let w_t = self.evolved_excitation(k, t)?;
        let n = w_t.nrows();
        let n_sites = self.system.n_sites();
        let norm: f64 = w_t.iter().map(|z| z.norm_sqr()).sum();
        let offset = n_sites as i32;
        let mut weights = vec![0.0; 2 * n_sites + 1];
        for r in 0..n {
            for c in 0..n {
                let q = (basis_m(r, n_sites) - basis_m(c, n_sites)).round() as i32;
                weights[(q + offset) as usize] += w_t[[r, c]].norm_sqr();
            }
        }
        Ok(weights
            .into_iter()
            .enumerate()
            .map(|(i, w)| (i as i32 - offset, w / norm))
            .collect())
    }

    fn evolved_excitation(&self, k: f64, t: f64) -> Result<Array2<C64>> {
        if !(-0.5..=1.0).contains(&k) {
            return Err(Error::Domain {
                what: "k",
                value: k,
                domain: "[-0.5, 1]",
            });
        }
        let w = match self.options.otoc_excitation {
            OtocExcitation::CollectiveY => collective_operator(&self.system, Axis::Y),
            OtocExcitation::LocalSiteY(site) => site_operator(&self.system, site, SiteAxis::Y)?,
        };
        let u = match self.mode {
            EvolutionMode::Effective => self.basis_x.unitary(k * t),
            EvolutionMode::Microscopic => {
                let scaling = ScalingSpec::from_k(k, self.omega_e)?;
                let family = BlockPairFamily::new(&self.system, &scaling, None, self.policy)?;
                family.unitary(t)?.unitary.to_dense()
            }
        };
        // Heisenberg picture: W(t) = U† W U
        Ok(linalg::adjoint(&u).dot(&w.to_dense()).dot(&u))
    }
}

enum SegmentRole {
    Forward,
    Backward,
}

#[allow(clippy::large_enum_variant)]
enum SegmentFamily {
    Free(EigenBasis),
    Blocks(BlockPairFamily),
}

impl SegmentFamily {
    /// Unitary and realized duration for the requested one.
    fn unitary(&self, t: f64) -> Result<(Array2<C64>, f64)> {
        match self {
            SegmentFamily::Free(basis) => Ok((basis.unitary(t), t)),
            SegmentFamily::Blocks(family) => {
                let pair = family.unitary(t)?;
                Ok((pair.unitary.to_dense(), pair.actual_duration))
            }
        }
    }
}

/// Eigenbasis of `s * h` given the basis of `h`.
fn scaled_basis(basis: &EigenBasis, s: f64) -> EigenBasis {
    EigenBasis {
        values: basis.values.mapv(|v| v * s),
        vectors: basis.vectors.clone(),
    }
}

/// In-place Schroedinger phases: rho -> U rho U† in the eigenbasis of the
/// generator, U = exp(-i h t).
fn phase_conjugate(rho: &mut Array2<C64>, values: &ndarray::Array1<f64>, t: f64) {
    let n = values.len();
    for m in 0..n {
        for j in 0..n {
            let phase = C64::from_polar(1.0, -(values[m] - values[j]) * t);
            rho[[m, j]] *= phase;
        }
    }
}

/// Zero all matrix elements between different I^z magnetization sectors.
fn project_zero_coherence(rho: &Array2<C64>) -> Array2<C64> {
    let n = rho.nrows();
    let mut out = rho.clone();
    for r in 0..n {
        for c in 0..n {
            if r.count_ones() != c.count_ones() {
                out[[r, c]] = C64::new(0.0, 0.0);
            }
        }
    }
    out
}

/// Magnetization m of one computational basis state.
fn basis_m(n: usize, n_sites: usize) -> f64 {
    0.5 * (n_sites as f64 - 2.0 * n.count_ones() as f64)
}

fn real_checked(z: C64) -> Result<f64> {
    if z.im.abs() > 1e-10 * (1.0 + z.re.abs()) {
        return Err(Error::Linalg(format!(
            "signal has imaginary residue {:.3e}",
            z.im
        )));
    }
    Ok(z.re)
}

fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for w in times.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Domain {
                what: "time grid",
                value: w[1],
                domain: "strictly increasing",
            });
        }
    }
    Ok(())
}

/// One-shot P^k(t) without reusing an engine.
pub fn polarization_curve(
    system: &SpinSystem,
    k: f64,
    times: &[f64],
    mode: EvolutionMode,
) -> Result<EchoCurve> {
    EchoEngine::new(system, mode, DEFAULT_OMEGA_E, StroboscopicPolicy::RoundNearest)?
        .polarization_curve(k, times)
}

/// One-shot Loschmidt echo without reusing an engine.
pub fn loschmidt_echo(
    system: &SpinSystem,
    scheme: Scheme,
    k: f64,
    t_e: f64,
    sigma_fwd: Option<&Operator>,
    sigma_bwd: Option<&Operator>,
    mode: EvolutionMode,
) -> Result<f64> {
    EchoEngine::new(system, mode, DEFAULT_OMEGA_E, StroboscopicPolicy::RoundNearest)?
        .loschmidt_echo(scheme, k, t_e, sigma_fwd, sigma_bwd)
}

/// One-shot normalized OTOC without reusing an engine.
pub fn otoc_mqc(
    system: &SpinSystem,
    k: f64,
    theta: f64,
    t: f64,
    mode: EvolutionMode,
) -> Result<f64> {
    EchoEngine::new(system, mode, DEFAULT_OMEGA_E, StroboscopicPolicy::RoundNearest)?
        .otoc(k, theta, t)
}
