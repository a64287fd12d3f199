//! Time evolution under piecewise-constant Hamiltonians.
//!
//! Dense Hamiltonians are exponentiated exactly through their
//! eigendecomposition; sparse ones yield an action-only Krylov propagator
//! that is applied to states and never materialized. The two-block
//! irradiation sequence composes hard pulses with the ±Z block evolutions so
//! that the Zeeman parts cancel and the large-omega_e limit is the scaled
//! dipolar propagator exp(-i k H_d^x t).

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hamiltonian::{
    secular_dipolar, tilted_frame_hamiltonian, BlockSign, FrameForm, ScalingSpec,
};
use crate::linalg::{self, EigenBasis};
use crate::spin::{Axis, Operator, SpinSystem};

/// Whether sequences evolve under the ideal effective Hamiltonian or the
/// exact rotating-frame one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvolutionMode {
    Effective,
    Microscopic,
}

impl EvolutionMode {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "effective" => Some(Self::Effective),
            "microscopic" => Some(Self::Microscopic),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Effective => "effective",
            Self::Microscopic => "microscopic",
        }
    }
}

/// What to do with times that do not sit on the stroboscopic grid in
/// microscopic mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StroboscopicPolicy {
    /// Round to the nearest multiple of the block grid and report the
    /// actual time.
    #[default]
    RoundNearest,
    /// Fail on any off-grid request.
    Strict,
}

/// Unitary propagator: a dense matrix, or a Krylov action above the dense
/// storage threshold.
pub enum Propagator {
    Dense(Operator),
    Action(KrylovPropagator),
}

impl Propagator {
    pub fn dim(&self) -> usize {
        match self {
            Propagator::Dense(u) => u.dim(),
            Propagator::Action(k) => k.hamiltonian.dim(),
        }
    }

    /// The dense unitary, if materialized.
    pub fn dense(&self) -> Result<&Operator> {
        match self {
            Propagator::Dense(u) => Ok(u),
            Propagator::Action(_) => Err(Error::ActionOnly),
        }
    }

    /// Apply to a state vector.
    pub fn apply(&self, v: &Array1<C64>) -> Result<Array1<C64>> {
        match self {
            Propagator::Dense(u) => Ok(u.matvec(v)),
            Propagator::Action(k) => k.apply(v),
        }
    }
}

/// `U = exp(-i h t)`.
///
/// Dense storage gives the exact eigendecomposition exponential; sparse
/// storage gives an apply-only Krylov propagator.
pub fn propagator(h: &Operator, t: f64) -> Result<Propagator> {
    if !t.is_finite() {
        return Err(Error::Domain {
            what: "t",
            value: t,
            domain: "finite",
        });
    }
    let dev = h.hermiticity_deviation();
    if dev > 1e-12 {
        return Err(Error::NonHermitian { max_dev: dev });
    }
    match h.dense() {
        Some(m) => {
            let basis = EigenBasis::of_hermitian(m)?;
            Ok(Propagator::Dense(Operator::from_dense(basis.unitary(t))))
        }
        None => Ok(Propagator::Action(KrylovPropagator::new(h.clone(), t))),
    }
}

/// Heisenberg conjugation `U† a U`.
pub fn evolve_observable(u: &Operator, a: &Operator) -> Result<Operator> {
    if u.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            a: u.dim(),
            b: a.dim(),
        });
    }
    let um = u
        .dense()
        .ok_or(Error::DenseRequired {
            op: "evolve_observable",
        })?;
    let am = a.to_dense();
    let out = linalg::adjoint(um).dot(&am).dot(um);
    Ok(Operator::from_dense(out))
}

/// Pulse axis for instantaneous global rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseAxis {
    X,
    Y,
    MinusX,
    MinusY,
}

impl PulseAxis {
    fn direction(self) -> ([f64; 3], f64) {
        match self {
            PulseAxis::X => (Axis::X.unit(), 1.0),
            PulseAxis::Y => (Axis::Y.unit(), 1.0),
            PulseAxis::MinusX => (Axis::X.unit(), -1.0),
            PulseAxis::MinusY => (Axis::Y.unit(), -1.0),
        }
    }
}

/// Instantaneous hard pulse `exp(-i angle I^axis)` as a dense unitary,
/// built as a product of single-site rotations.
pub fn hard_pulse(system: &SpinSystem, axis: PulseAxis, angle: f64) -> Operator {
    let (dir, sign) = axis.direction();
    let a = sign * angle;
    // single-site rotation exp(-i a s^dir) = cos(a/2) 1 - 2 i sin(a/2) s^dir
    let c = (a / 2.0).cos();
    let s = (a / 2.0).sin();
    let r: [[C64; 2]; 2] = if dir[0] != 0.0 {
        [
            [C64::new(c, 0.0), C64::new(0.0, -s)],
            [C64::new(0.0, -s), C64::new(c, 0.0)],
        ]
    } else {
        [
            [C64::new(c, 0.0), C64::new(-s, 0.0)],
            [C64::new(s, 0.0), C64::new(c, 0.0)],
        ]
    };
    let n_sites = system.n_sites();
    let dim = system.dim();
    let mut out = Array2::<C64>::zeros((dim, dim));
    for row in 0..dim {
        for col in 0..dim {
            let mut v = C64::new(1.0, 0.0);
            for site in 0..n_sites {
                let br = (row >> site) & 1;
                let bc = (col >> site) & 1;
                v *= r[br][bc];
                if v.norm() == 0.0 {
                    break;
                }
            }
            if v.norm() != 0.0 {
                out[[row, col]] = v;
            }
        }
    }
    Operator::from_dense(out)
}

/// One entry of a pulse program, in time order.
#[derive(Debug, Clone)]
pub enum Segment {
    Evolution { hamiltonian: Operator, duration: f64 },
    Rotation { axis: PulseAxis, angle: f64 },
}

/// Ordered piecewise-constant evolution segments and instantaneous
/// rotations, with an optional stroboscopic grid for validation.
#[derive(Debug, Clone)]
pub struct PulseProgram {
    pub segments: Vec<Segment>,
    /// Floquet period tau_e = 2 pi / omega_e when the program represents an
    /// irradiation block pair.
    pub floquet_time: Option<f64>,
}

impl PulseProgram {
    pub fn new(segments: Vec<Segment>, floquet_time: Option<f64>) -> Self {
        Self {
            segments,
            floquet_time,
        }
    }

    /// All durations nonnegative; evolution durations on the grid when a
    /// Floquet time is declared.
    pub fn validate(&self) -> Result<()> {
        for seg in &self.segments {
            if let Segment::Evolution { duration, .. } = seg {
                if *duration < 0.0 || !duration.is_finite() {
                    return Err(Error::Domain {
                        what: "duration",
                        value: *duration,
                        domain: "[0, inf)",
                    });
                }
                if let Some(tau) = self.floquet_time {
                    let ratio = duration / tau;
                    if (ratio - ratio.round()).abs() > 1e-9 {
                        return Err(Error::NonStroboscopic {
                            requested: *duration,
                            grid: tau,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Compose the dense propagator, first segment applied first.
    pub fn propagator(&self, system: &SpinSystem) -> Result<Operator> {
        self.validate()?;
        let dim = system.dim();
        let mut u = linalg::identity(dim);
        for seg in &self.segments {
            let step = match seg {
                Segment::Evolution {
                    hamiltonian,
                    duration,
                } => {
                    let m = hamiltonian.dense().ok_or(Error::DenseRequired {
                        op: "PulseProgram::propagator",
                    })?;
                    EigenBasis::of_hermitian(m)?.unitary(*duration)
                }
                Segment::Rotation { axis, angle } => {
                    hard_pulse(system, *axis, *angle).to_dense()
                }
            };
            u = step.dot(&u);
        }
        Ok(Operator::from_dense(u))
    }
}

/// Result of composing a block pair: the unitary and the duration actually
/// realized after stroboscopic rounding.
pub struct BlockPair {
    pub unitary: Operator,
    pub actual_duration: f64,
}

/// Reusable two-block composer: eigendecomposes the ±Z block Hamiltonians
/// once, then yields the pair unitary at any stroboscopic time.
pub struct BlockPairFamily {
    plus: EigenBasis,
    minus: EigenBasis,
    pre: Array2<C64>,
    post: Array2<C64>,
    tau_e: f64,
    policy: StroboscopicPolicy,
}

impl BlockPairFamily {
    /// Build for one scaling spec; `sigma` is added to both block
    /// Hamiltonians when present.
    pub fn new(
        system: &SpinSystem,
        scaling: &ScalingSpec,
        sigma: Option<&Operator>,
        policy: StroboscopicPolicy,
    ) -> Result<Self> {
        if !system.prefers_dense() {
            return Err(Error::DenseRequired {
                op: "BlockPairFamily",
            });
        }
        let mut h_plus =
            tilted_frame_hamiltonian(system, scaling, BlockSign::Plus, FrameForm::Microscopic);
        let mut h_minus =
            tilted_frame_hamiltonian(system, scaling, BlockSign::Minus, FrameForm::Microscopic);
        if let Some(s) = sigma {
            h_plus = h_plus.add(s)?;
            h_minus = h_minus.add(s)?;
        }
        let beta = std::f64::consts::FRAC_PI_2 - scaling.theta;
        // (beta)_y-bar before the blocks, (beta)_y after
        let pre = hard_pulse(system, PulseAxis::MinusY, beta).to_dense();
        let post = hard_pulse(system, PulseAxis::Y, beta).to_dense();
        Ok(Self {
            plus: EigenBasis::of_hermitian(h_plus.dense().unwrap())?,
            minus: EigenBasis::of_hermitian(h_minus.dense().unwrap())?,
            pre,
            post,
            tau_e: scaling.tau_e(),
            policy,
        })
    }

    /// Snap `t/2` to the block grid; returns the realized total duration.
    pub fn round_duration(&self, t: f64) -> Result<f64> {
        let half = t / 2.0;
        let blocks = (half / self.tau_e).round();
        let actual_half = blocks * self.tau_e;
        if matches!(self.policy, StroboscopicPolicy::Strict)
            && (half - actual_half).abs() > 1e-9 * self.tau_e
        {
            return Err(Error::NonStroboscopic {
                requested: t,
                grid: 2.0 * self.tau_e,
            });
        }
        Ok(2.0 * actual_half)
    }

    /// Pair unitary at total duration `t` (each block `t/2`).
    pub fn unitary(&self, t: f64) -> Result<BlockPair> {
        let actual = self.round_duration(t)?;
        let half = actual / 2.0;
        let u_plus = self.plus.unitary(half);
        let u_minus = self.minus.unitary(half);
        // time order: pre pulse, +Z block, -Z block, post pulse
        let u = self
            .post
            .dot(&u_minus)
            .dot(&u_plus)
            .dot(&self.pre);
        Ok(BlockPair {
            unitary: Operator::from_dense(u),
            actual_duration: actual,
        })
    }
}

/// Two successive irradiation blocks with effective axis ±Z surrounded by
/// the β = 90° - θ pulses.
///
/// Effective mode returns `exp(-i k H_d^x t)` exactly; microscopic mode
/// composes the exact rotating-frame blocks (durations rounded to the
/// stroboscopic grid per policy) and converges to the effective result as
/// omega_e grows.
pub fn cwsdi_block_pair(
    system: &SpinSystem,
    scaling: &ScalingSpec,
    t: f64,
    mode: EvolutionMode,
    policy: StroboscopicPolicy,
) -> Result<BlockPair> {
    match mode {
        EvolutionMode::Effective => {
            let h = secular_dipolar(system, Axis::X);
            let m = h.dense().ok_or(Error::DenseRequired {
                op: "cwsdi_block_pair",
            })?;
            let basis = EigenBasis::of_hermitian(m)?;
            Ok(BlockPair {
                unitary: Operator::from_dense(basis.unitary(scaling.k * t)),
                actual_duration: t,
            })
        }
        EvolutionMode::Microscopic => {
            BlockPairFamily::new(system, scaling, None, policy)?.unitary(t)
        }
    }
}

/// Apply-only Krylov propagator for sparse Hamiltonians.
pub struct KrylovPropagator {
    pub hamiltonian: Operator,
    pub t: f64,
    pub tol: f64,
    pub max_subspace: usize,
}

impl KrylovPropagator {
    pub fn new(hamiltonian: Operator, t: f64) -> Self {
        Self {
            hamiltonian,
            t,
            tol: 1e-10,
            max_subspace: 64,
        }
    }

    pub fn apply(&self, v: &Array1<C64>) -> Result<Array1<C64>> {
        expm_multiply(&self.hamiltonian, self.t, v, self.tol, self.max_subspace)
            .map(|(out, _)| out)
    }
}

/// Diagnostics from a Krylov application.
#[derive(Debug, Clone, Copy, Default)]
pub struct KrylovStats {
    /// Largest Lanczos subspace dimension used.
    pub subspace_dim: usize,
    /// Number of time substeps taken.
    pub substeps: usize,
    /// Whether an invariant subspace terminated the recurrence early.
    pub happy_breakdown: bool,
}

/// `exp(-i h t) v` by Lanczos iteration with adaptive subspace growth and
/// recursive time splitting when the subspace cap is hit.
pub fn expm_multiply(
    h: &Operator,
    t: f64,
    v: &Array1<C64>,
    tol: f64,
    max_subspace: usize,
) -> Result<(Array1<C64>, KrylovStats)> {
    if h.dim() != v.len() {
        return Err(Error::DimensionMismatch {
            a: h.dim(),
            b: v.len(),
        });
    }
    let mut stats = KrylovStats::default();
    let out = expm_multiply_inner(h, t, v.clone(), tol, max_subspace, &mut stats, 0)?;
    Ok((out, stats))
}

fn expm_multiply_inner(
    h: &Operator,
    t: f64,
    v: Array1<C64>,
    tol: f64,
    max_subspace: usize,
    stats: &mut KrylovStats,
    depth: usize,
) -> Result<Array1<C64>> {
    if depth > 40 {
        return Err(Error::Linalg(
            "Krylov time splitting failed to converge".into(),
        ));
    }
    let beta0 = norm(&v);
    if beta0 == 0.0 || t == 0.0 {
        stats.substeps += 1;
        return Ok(v);
    }

    let mut basis: Vec<Array1<C64>> = vec![v.mapv(|z| z / beta0)];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let breakdown_tol = 1e-13 * beta0.max(1.0);

    loop {
        let m = alphas.len();
        let w0 = h.matvec(&basis[m]);
        let alpha = basis[m]
            .iter()
            .zip(w0.iter())
            .map(|(a, b)| (a.conj() * b).re)
            .sum::<f64>();
        let mut w = w0;
        w.zip_mut_with(&basis[m], |x, y| *x -= y * alpha);
        if m > 0 {
            let b_prev = betas[m - 1];
            let prev = basis[m - 1].clone();
            w.zip_mut_with(&prev, |x, y| *x -= y * b_prev);
        }
        // one reorthogonalization pass keeps the basis usable at larger m
        for q in &basis {
            let overlap: C64 = q.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
            w.zip_mut_with(q, |x, y| *x -= y * overlap);
        }
        alphas.push(alpha);
        let beta = norm(&w);

        if beta < breakdown_tol {
            stats.happy_breakdown = true;
            stats.subspace_dim = stats.subspace_dim.max(alphas.len());
            stats.substeps += 1;
            let y = small_expm_column(&alphas, &betas, t)?;
            return Ok(reconstruct(&basis, &y, beta0));
        }

        let m_now = alphas.len();
        if m_now >= 4 || m_now >= max_subspace {
            // a posteriori residual estimate for the current subspace
            let y = small_expm_column(&alphas, &betas, t)?;
            let est = beta * y[y.len() - 1].norm();
            if est <= tol {
                stats.subspace_dim = stats.subspace_dim.max(m_now);
                stats.substeps += 1;
                return Ok(reconstruct(&basis, &y, beta0));
            }
            if m_now >= max_subspace {
                // halve the step and recurse; tol is per substep
                let halfway =
                    expm_multiply_inner(h, t / 2.0, v, tol, max_subspace, stats, depth + 1)?;
                return expm_multiply_inner(
                    h,
                    t / 2.0,
                    halfway,
                    tol,
                    max_subspace,
                    stats,
                    depth + 1,
                );
            }
        }

        betas.push(beta);
        basis.push(w.mapv(|z| z / beta));
    }
}

fn norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// First column of `exp(-i T t)` for the real symmetric tridiagonal T.
fn small_expm_column(alphas: &[f64], betas: &[f64], t: f64) -> Result<Vec<C64>> {
    let m = alphas.len();
    let mut tm = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        tm[[i, i]] = alphas[i];
        if i + 1 < m {
            tm[[i, i + 1]] = betas[i];
            tm[[i + 1, i]] = betas[i];
        }
    }
    use ndarray_linalg::{Eigh, UPLO};
    let (vals, vecs) = tm
        .eigh(UPLO::Lower)
        .map_err(|e| Error::Linalg(e.to_string()))?;
    let mut y = vec![C64::new(0.0, 0.0); m];
    for (j, &lam) in vals.iter().enumerate() {
        let phase = C64::from_polar(1.0, -lam * t);
        let w = vecs[[0, j]]; // overlap of e_1 with eigenvector j
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += vecs[[i, j]] * w * phase;
        }
    }
    Ok(y)
}

fn reconstruct(basis: &[Array1<C64>], y: &[C64], beta0: f64) -> Array1<C64> {
    let dim = basis[0].len();
    let mut out = Array1::<C64>::zeros(dim);
    for (q, &c) in basis.iter().zip(y.iter()) {
        out.zip_mut_with(q, |x, b| *x += b * c * beta0);
    }
    out
}
