//! Secular dipolar Hamiltonians, tilted-frame scaling, and perturbation
//! operators.
//!
//! The dipolar couplings follow d_ij = prefactor * (1 - 3 cos^2 theta_ij)
//! / r_ij^3, with theta_ij the angle between the internuclear vector and the
//! field direction. The scale factor obeys k = (3 cos^2 theta - 1) / 2 and
//! the rf calibration keeps omega_1^2 + Omega^2 = omega_e^2 with
//! cos^2 theta = Omega^2 / omega_e^2.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, EigenBasis};
use crate::spin::{collective_along, collective_operator, Axis, Operator, OperatorBuilder, SpinSystem};

/// Pairwise dipolar coupling table d_ij in rad/s. Symmetric, zero diagonal.
pub fn dipolar_couplings(system: &SpinSystem) -> Array2<f64> {
    let n = system.n_sites();
    let pos = system.positions();
    let field = system.field_direction();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let r = [
                pos[j][0] - pos[i][0],
                pos[j][1] - pos[i][1],
                pos[j][2] - pos[i][2],
            ];
            let r_norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            if let Some(cutoff) = system.coupling_cutoff() {
                if r_norm > cutoff {
                    continue;
                }
            }
            let cos_t = (r[0] * field[0] + r[1] * field[1] + r[2] * field[2]) / r_norm;
            let val = system.coupling_prefactor() * (1.0 - 3.0 * cos_t * cos_t)
                / (r_norm * r_norm * r_norm);
            d[[i, j]] = val;
            d[[j, i]] = val;
        }
    }
    d
}

/// 2x2 spin-1/2 matrices in the (up, down) basis.
fn spin_half_matrices() -> [[[C64; 2]; 2]; 3] {
    let z = |re: f64, im: f64| C64::new(re, im);
    let sx = [[z(0.0, 0.0), z(0.5, 0.0)], [z(0.5, 0.0), z(0.0, 0.0)]];
    let sy = [[z(0.0, 0.0), z(0.0, -0.5)], [z(0.0, 0.5), z(0.0, 0.0)]];
    let sz = [[z(0.5, 0.0), z(0.0, 0.0)], [z(0.0, 0.0), z(-0.5, 0.0)]];
    [sx, sy, sz]
}

/// The 4x4 two-site block `3 (s.dir)(s.dir) - s.s`, local index
/// `b_i + 2 b_j`.
fn two_site_block(dir: [f64; 3]) -> [[C64; 4]; 4] {
    let [sx, sy, sz] = spin_half_matrices();
    let mut s_dir = [[C64::new(0.0, 0.0); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            s_dir[a][b] = sx[a][b] * dir[0] + sy[a][b] * dir[1] + sz[a][b] * dir[2];
        }
    }
    let mut block = [[C64::new(0.0, 0.0); 4]; 4];
    for bi_p in 0..2 {
        for bj_p in 0..2 {
            for bi in 0..2 {
                for bj in 0..2 {
                    let mut v = 3.0 * s_dir[bi_p][bi] * s_dir[bj_p][bj];
                    for s in [&sx, &sy, &sz] {
                        v -= s[bi_p][bi] * s[bj_p][bj];
                    }
                    block[bi_p + 2 * bj_p][bi + 2 * bj] = v;
                }
            }
        }
    }
    block
}

/// Dipolar-form Hamiltonian from an explicit coupling table:
/// `sum_{i<j} table_ij (3 I_i.dir I_j.dir - I_i . I_j)`.
pub(crate) fn dipolar_from_table(
    system: &SpinSystem,
    table: &Array2<f64>,
    dir: [f64; 3],
) -> Operator {
    let n = system.n_sites();
    let dim = system.dim();
    let block = two_site_block(dir);
    let mut builder = OperatorBuilder::new(system);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = table[[i, j]];
            if d == 0.0 {
                continue;
            }
            let mi = 1usize << i;
            let mj = 1usize << j;
            for n_idx in 0..dim {
                let bi = (n_idx >> i) & 1;
                let bj = (n_idx >> j) & 1;
                let col = bi + 2 * bj;
                for bi_p in 0..2 {
                    for bj_p in 0..2 {
                        let v = block[bi_p + 2 * bj_p][col];
                        if v.norm() == 0.0 {
                            continue;
                        }
                        let mut row = n_idx & !(mi | mj);
                        if bi_p == 1 {
                            row |= mi;
                        }
                        if bj_p == 1 {
                            row |= mj;
                        }
                        builder.push(row, n_idx, v * d);
                    }
                }
            }
        }
    }
    builder.finish()
}

/// Secular dipolar Hamiltonian with the given quantization axis,
/// `sum_{i<j} d_ij (3 I_i^a I_j^a - I_i . I_j)`.
pub fn secular_dipolar(system: &SpinSystem, axis: Axis) -> Operator {
    secular_dipolar_along(system, axis.unit())
}

/// Secular dipolar form quantized along an arbitrary unit direction.
pub fn secular_dipolar_along(system: &SpinSystem, dir: [f64; 3]) -> Operator {
    let table = dipolar_couplings(system);
    dipolar_from_table(system, &table, dir)
}

/// Scale factor from the tilt angle: k = (3 cos^2 theta - 1) / 2.
pub fn k_from_theta(theta: f64) -> Result<f64> {
    if !(0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&theta) {
        return Err(Error::Domain {
            what: "theta",
            value: theta,
            domain: "[0, pi/2]",
        });
    }
    let c = theta.cos();
    Ok(0.5 * (3.0 * c * c - 1.0))
}

/// Tilt angle from the scale factor, inverse of [`k_from_theta`].
pub fn theta_from_k(k: f64) -> Result<f64> {
    if !(-0.5..=1.0).contains(&k) {
        return Err(Error::Domain {
            what: "k",
            value: k,
            domain: "[-0.5, 1]",
        });
    }
    Ok(((2.0 * k + 1.0) / 3.0).sqrt().clamp(0.0, 1.0).acos())
}

/// r.f. amplitude and off-resonance realizing the scale factor `k` at the
/// effective frequency `omega_e`:
/// omega_1 = omega_e sqrt(2(1 - k)/3), Omega = omega_e sqrt((2k + 1)/3).
///
/// Both calibration identities hold: omega_1^2 + Omega^2 = omega_e^2 and
/// cos^2 theta = Omega^2 / omega_e^2 with k = (3 cos^2 theta - 1)/2, so
/// k = 1 is pure off-resonance (omega_1 = 0) and k = -1/2 is on-resonance
/// (Omega = 0).
pub fn rf_parameters(k: f64, omega_e: f64) -> Result<(f64, f64)> {
    if !(-0.5..=1.0).contains(&k) {
        return Err(Error::Domain {
            what: "k",
            value: k,
            domain: "[-0.5, 1]",
        });
    }
    if omega_e <= 0.0 {
        return Err(Error::Domain {
            what: "omega_e",
            value: omega_e,
            domain: "(0, inf)",
        });
    }
    let omega_1 = omega_e * (2.0 * (1.0 - k) / 3.0).sqrt();
    let omega_offset = omega_e * ((2.0 * k + 1.0) / 3.0).sqrt();
    Ok((omega_1, omega_offset))
}

/// Tilted-frame irradiation parameters for one scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingSpec {
    /// Signed scale factor k_theta in [-0.5, 1].
    pub k: f64,
    /// Tilt angle of the effective field from z, radians in [0, pi/2].
    pub theta: f64,
    /// Effective frequency (rad/s).
    pub omega_e: f64,
    /// r.f. amplitude (rad/s).
    pub omega_1: f64,
    /// Off-resonance Omega (rad/s).
    pub omega_offset: f64,
}

impl ScalingSpec {
    /// Derive all irradiation parameters from the scale factor.
    pub fn from_k(k: f64, omega_e: f64) -> Result<Self> {
        let theta = theta_from_k(k)?;
        let (omega_1, omega_offset) = rf_parameters(k, omega_e)?;
        Ok(Self {
            k,
            theta,
            omega_e,
            omega_1,
            omega_offset,
        })
    }

    /// Derive all irradiation parameters from the tilt angle.
    pub fn from_theta(theta: f64, omega_e: f64) -> Result<Self> {
        Self::from_k(k_from_theta(theta)?, omega_e)
    }

    /// Stroboscopic Floquet period 2 pi / omega_e.
    pub fn tau_e(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.omega_e
    }

    /// Direction of the effective field in the (x, y, z) frame.
    pub fn z_axis(&self) -> [f64; 3] {
        [self.theta.sin(), 0.0, self.theta.cos()]
    }

    /// Check the two defining identities.
    pub fn validate(&self) -> Result<()> {
        let c = self.theta.cos();
        let k_check = 0.5 * (3.0 * c * c - 1.0);
        if (k_check - self.k).abs() > 1e-12 {
            return Err(Error::Domain {
                what: "k",
                value: self.k,
                domain: "k = (3 cos^2 theta - 1)/2",
            });
        }
        let lhs = self.omega_1 * self.omega_1 + self.omega_offset * self.omega_offset;
        let rhs = self.omega_e * self.omega_e;
        if (lhs - rhs).abs() > 1e-10 * rhs {
            return Err(Error::Domain {
                what: "omega_e",
                value: self.omega_e,
                domain: "omega_1^2 + Omega^2 = omega_e^2",
            });
        }
        Ok(())
    }
}

/// Ideal effective-mode generator `k H_d^x`.
pub fn scaled_hamiltonian(system: &SpinSystem, k: f64) -> Result<Operator> {
    if !(-0.5..=1.0).contains(&k) {
        return Err(Error::Domain {
            what: "k",
            value: k,
            domain: "[-0.5, 1]",
        });
    }
    Ok(secular_dipolar(system, Axis::X).scale(k))
}

/// Which of the two irradiation blocks (effective axis +Z or -Z).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSign {
    Plus,
    Minus,
}

impl BlockSign {
    pub fn factor(self) -> f64 {
        match self {
            BlockSign::Plus => 1.0,
            BlockSign::Minus => -1.0,
        }
    }
}

/// Which Hamiltonian describes an irradiation block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameForm {
    /// Tilted-frame secular form `-sign omega_e I^Z + k H_d^Z`.
    Secular,
    /// Exact rotating-frame form `-sign Omega I^z - sign omega_1 I^x + H_d^z`.
    Microscopic,
}

/// Hamiltonian of one off-resonance irradiation block.
pub fn tilted_frame_hamiltonian(
    system: &SpinSystem,
    scaling: &ScalingSpec,
    sign: BlockSign,
    form: FrameForm,
) -> Operator {
    let s = sign.factor();
    match form {
        FrameForm::Secular => {
            let z_dir = scaling.z_axis();
            let zeeman = collective_along(system, z_dir).scale(-s * scaling.omega_e);
            let dipolar = secular_dipolar_along(system, z_dir).scale(scaling.k);
            zeeman.add(&dipolar).expect("equal dims")
        }
        FrameForm::Microscopic => {
            let offset = collective_operator(system, Axis::Z).scale(-s * scaling.omega_offset);
            let rf = collective_operator(system, Axis::X).scale(-s * scaling.omega_1);
            let dipolar = secular_dipolar(system, Axis::Z);
            offset
                .add(&rf)
                .and_then(|h| h.add(&dipolar))
                .expect("equal dims")
        }
    }
}

/// Perturbation construction models for the Sigma operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationModel {
    /// XXZ form with independently drawn pair couplings, x quantization.
    RandomDipolar,
    /// Non-secular remainder of the dipolar Hamiltonian in the magic-angle
    /// tilted frame, rescaled.
    NonsecularResidual,
    /// Random on-site fields `sum_i h_i I_i^z`.
    ZeemanDisorder,
}

impl PerturbationModel {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "random_dipolar" => Some(Self::RandomDipolar),
            "nonsecular_residual" => Some(Self::NonsecularResidual),
            "zeeman_disorder" => Some(Self::ZeemanDisorder),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::RandomDipolar => "random_dipolar",
            Self::NonsecularResidual => "nonsecular_residual",
            Self::ZeemanDisorder => "zeeman_disorder",
        }
    }
}

/// Perturbation request: model, dimensionless strength, seed.
///
/// `strength` is calibrated against the native second-moment scale: the
/// generated operator has sqrt(M2) = strength / T2 with T2 the unperturbed
/// spreading time of the system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    pub model: PerturbationModel,
    pub strength: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(model: PerturbationModel, strength: f64, seed: u64) -> Result<Self> {
        if strength < 0.0 || !strength.is_finite() {
            return Err(Error::Domain {
                what: "strength",
                value: strength,
                domain: "[0, inf)",
            });
        }
        Ok(Self {
            model,
            strength,
            seed,
        })
    }
}

/// Generate the Hermitian, traceless perturbation operator Sigma.
///
/// Deterministic in (model, strength, seed). Calibrated so that its own
/// second moment against I^y equals (strength / T2)^2.
pub fn perturbation_sigma(system: &SpinSystem, spec: &PerturbationSpec) -> Result<Operator> {
    let dim = system.dim();
    if spec.strength == 0.0 {
        return Ok(Operator::from_dense(Array2::zeros((dim, dim))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let raw = match spec.model {
        PerturbationModel::RandomDipolar => {
            let n = system.n_sites();
            let mut table = Array2::zeros((n, n));
            for i in 0..n {
                for j in (i + 1)..n {
                    let g = standard_normal(&mut rng);
                    table[[i, j]] = g;
                    table[[j, i]] = g;
                }
            }
            dipolar_from_table(system, &table, Axis::X.unit())
        }
        PerturbationModel::ZeemanDisorder => {
            let n = system.n_sites();
            let fields: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
            let mut builder = OperatorBuilder::new(system);
            for idx in 0..dim {
                let mut sum = 0.0;
                for (site, h) in fields.iter().enumerate() {
                    let m = if idx & (1 << site) == 0 { 0.5 } else { -0.5 };
                    sum += h * m;
                }
                builder.push(idx, idx, C64::new(sum, 0.0));
            }
            builder.finish()
        }
        PerturbationModel::NonsecularResidual => nonsecular_residual(system)?,
    };

    let t2 = native_t2(system)?;
    let iy = collective_operator(system, Axis::Y);
    let m2_raw = second_moment(&raw, &iy)?;
    if m2_raw == 0.0 {
        return Err(Error::Domain {
            what: "strength",
            value: spec.strength,
            domain: "generated operator commutes with I^y; cannot calibrate",
        });
    }
    let target_rate = spec.strength / t2;
    Ok(raw.scale(target_rate / m2_raw.sqrt()))
}

/// Non-secular remainder of H_d^z after truncation along the magic-angle
/// tilted axis. Requires dense storage.
fn nonsecular_residual(system: &SpinSystem) -> Result<Operator> {
    if !system.prefers_dense() {
        return Err(Error::Linalg(
            "nonsecular_residual requires dense storage".into(),
        ));
    }
    let theta_m = ((1.0f64 / 3.0).sqrt()).acos();
    let h = secular_dipolar(system, Axis::Z).to_dense();
    let iy = collective_operator(system, Axis::Y).to_dense();
    let rot = EigenBasis::of_hermitian(&iy)
        .expect("I^y eigenbasis")
        .unitary(theta_m);
    // express H in the I^Z eigenbasis, drop the Delta-m = 0 blocks, map back
    let h_tilted = linalg::adjoint(&rot).dot(&h).dot(&rot);
    let dim = system.dim();
    let mut nonsec = h_tilted.clone();
    for r in 0..dim {
        for c in 0..dim {
            // same popcount means same total magnetization
            if r.count_ones() == c.count_ones() {
                nonsec[[r, c]] = C64::new(0.0, 0.0);
            }
        }
    }
    let back = rot.dot(&nonsec).dot(&linalg::adjoint(&rot));
    // symmetrize away the rotation rounding; the operator is Hermitian by
    // construction
    let sym = (&back + &linalg::adjoint(&back)).mapv(|z| z * 0.5);
    Ok(Operator::from_dense(sym))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple and seedable
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Van Vleck second moment `Tr[[h, obs]† [h, obs]] / Tr[obs obs]` in
/// rad^2/s^2. Nonnegative; the spreading time is its inverse square root.
pub fn second_moment(h: &Operator, observable: &Operator) -> Result<f64> {
    if h.dim() != observable.dim() {
        return Err(Error::DimensionMismatch {
            a: h.dim(),
            b: observable.dim(),
        });
    }
    let denom = crate::spin::trace_product_op(observable, observable).re;
    if denom == 0.0 {
        return Err(Error::ZeroObservable);
    }
    let num = if let (Some(hd), Some(od)) = (h.dense(), observable.dense()) {
        let comm = hd.dot(od) - od.dot(hd);
        comm.iter().map(|z| z.norm_sqr()).sum::<f64>()
    } else {
        // column probing: ||[h, obs] e_j||^2 summed over the basis
        let dim = h.dim();
        let mut acc = 0.0;
        let mut e = ndarray::Array1::zeros(dim);
        for j in 0..dim {
            e[j] = C64::new(1.0, 0.0);
            let ho = h.matvec(&observable.matvec(&e));
            let oh = observable.matvec(&h.matvec(&e));
            acc += ho
                .iter()
                .zip(oh.iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>();
            e[j] = C64::new(0.0, 0.0);
        }
        acc
    };
    Ok(num / denom)
}

/// Spreading time T2 = M2^(-1/2).
pub fn t2_from_second_moment(m2: f64) -> f64 {
    m2.powf(-0.5)
}

/// Native spreading time of the system: T2 of H_d^z against I^y.
pub fn native_t2(system: &SpinSystem) -> Result<f64> {
    let h = secular_dipolar(system, Axis::Z);
    let iy = collective_operator(system, Axis::Y);
    let m2 = second_moment(&h, &iy)?;
    if m2 == 0.0 {
        return Err(Error::Domain {
            what: "second moment",
            value: 0.0,
            domain: "system has vanishing dipolar dynamics",
        });
    }
    Ok(t2_from_second_moment(m2))
}
