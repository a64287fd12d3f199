//! Nonlinear least-squares fitting and time-scale extraction.
//!
//! A damped Gauss-Newton (Levenberg-Marquardt) core drives four models: the
//! Abragam free-induction shape for T2, the logistic echo decay for T3, the
//! linear rate-vs-k law, and the sqrt(A + x^2) relation between decoherence
//! and perturbation rates. Everything is deterministic for identical inputs.

use crate::error::{Error, Result};
use crate::protocols::EchoCurve;

/// Model tags carried by fit results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    Abragam,
    Logistic,
    Linear,
    SqrtRate,
}

impl FitModel {
    pub fn name(&self) -> &'static str {
        match self {
            FitModel::Abragam => "abragam",
            FitModel::Logistic => "logistic",
            FitModel::Linear => "linear",
            FitModel::SqrtRate => "sqrt_rate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "abragam" => Some(FitModel::Abragam),
            "logistic" => Some(FitModel::Logistic),
            "linear" => Some(FitModel::Linear),
            "sqrt_rate" => Some(FitModel::SqrtRate),
            _ => None,
        }
    }
}

/// One fitted parameter with its linearized uncertainty.
#[derive(Debug, Clone)]
pub struct FitParam {
    pub name: &'static str,
    pub value: f64,
    pub stderr: f64,
}

/// Outcome of a least-squares fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: FitModel,
    pub params: Vec<FitParam>,
    pub residual_rms: f64,
    pub converged: bool,
    pub n_iter: usize,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }
}

const MAX_ITER: usize = 200;
const FTOL: f64 = 1e-14;
const XTOL: f64 = 1e-14;
const GTOL: f64 = 1e-12;

/// Damped Gauss-Newton minimization of `sum_i (f(x_i; p) - y_i)^2`.
///
/// `scales` gives the natural magnitude of each parameter and sets the
/// finite-difference steps, which keeps the fit equivariant under unit
/// rescaling. Non-convergence is reported through the `converged` flag; a
/// singular Jacobian is an error.
#[allow(clippy::needless_range_loop)]
pub fn least_squares<F>(
    model: F,
    xs: &[f64],
    ys: &[f64],
    initial: &[f64],
    scales: &[f64],
    names: &[&'static str],
    tag: FitModel,
) -> Result<FitResult>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let n = xs.len();
    let p = initial.len();
    assert_eq!(names.len(), p);
    assert_eq!(scales.len(), p);
    if n < p {
        return Err(Error::TooFewPoints {
            needed: p,
            got: n,
            params: p,
        });
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain {
            what: "data",
            value: f64::NAN,
            domain: "finite",
        });
    }

    let residuals = |params: &[f64]| -> Vec<f64> {
        xs.iter()
            .zip(ys.iter())
            .map(|(&x, &y)| model(x, params) - y)
            .collect()
    };
    let cost = |r: &[f64]| -> f64 { r.iter().map(|v| v * v).sum() };

    let mut params = initial.to_vec();
    let mut r = residuals(&params);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut n_iter = 0;

    while n_iter < MAX_ITER {
        n_iter += 1;
        let jac = numeric_jacobian(&model, xs, &params, scales);
        // normal equations J^T J and gradient J^T r
        let mut jtj = vec![vec![0.0; p]; p];
        let mut jtr = vec![0.0; p];
        for i in 0..n {
            for a in 0..p {
                jtr[a] += jac[i][a] * r[i];
                for b in a..p {
                    jtj[a][b] += jac[i][a] * jac[i][b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        let grad_inf = jtr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if grad_inf < GTOL * (1.0 + c) {
            converged = true;
            break;
        }
        if jtj.iter().enumerate().all(|(a, row)| row[a] == 0.0) {
            return Err(Error::SingularJacobian);
        }

        // Marquardt damping on the diagonal
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj.clone();
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-300);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Some(step) = solve_dense(&damped, &rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(a, d)| a + d).collect();
            let r_trial = residuals(&trial);
            let c_trial = cost(&r_trial);
            if c_trial.is_finite() && c_trial <= c {
                let step_small = step
                    .iter()
                    .zip(params.iter())
                    .all(|(d, v)| d.abs() <= XTOL * (v.abs() + XTOL));
                let cost_small = (c - c_trial) <= FTOL * c.max(1e-300);
                params = trial;
                r = r_trial;
                c = c_trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if step_small || cost_small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !improved {
            // damping saturated; accept the current point as stationary
            converged = true;
            break;
        }
    }

    let dof = n.saturating_sub(p);
    let variance = if dof > 0 { c / dof as f64 } else { 0.0 };
    let jac = numeric_jacobian(&model, xs, &params, scales);
    let mut jtj = vec![vec![0.0; p]; p];
    for row in &jac {
        for a in 0..p {
            for b in 0..p {
                jtj[a][b] += row[a] * row[b];
            }
        }
    }
    let cov_diag = invert_diagonal(&jtj).unwrap_or_else(|| vec![f64::NAN; p]);
    let fitted = params
        .iter()
        .zip(names.iter())
        .zip(cov_diag.iter())
        .map(|((&value, &name), &cv)| FitParam {
            name,
            value,
            stderr: (cv * variance).max(0.0).sqrt(),
        })
        .collect();
    Ok(FitResult {
        model: tag,
        params: fitted,
        residual_rms: (c / n as f64).sqrt(),
        converged,
        n_iter,
    })
}

fn numeric_jacobian<F>(model: &F, xs: &[f64], params: &[f64], scales: &[f64]) -> Vec<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let p = params.len();
    let mut jac = vec![vec![0.0; p]; xs.len()];
    let mut work = params.to_vec();
    for a in 0..p {
        let h = 1e-7 * params[a].abs().max(scales[a].abs()).max(1e-300);
        work[a] = params[a] + h;
        for (i, &x) in xs.iter().enumerate() {
            let plus = model(x, &work);
            work[a] = params[a] - h;
            let minus = model(x, &work);
            work[a] = params[a] + h;
            jac[i][a] = (plus - minus) / (2.0 * h);
        }
        work[a] = params[a];
    }
    jac
}

/// Gaussian elimination with partial pivoting for the small normal systems.
#[allow(clippy::needless_range_loop)]
fn solve_dense(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            m[i][col]
                .abs()
                .partial_cmp(&m[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for k in (col + 1)..n {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    Some(x)
}

/// Diagonal of the inverse of a symmetric positive matrix, or None.
fn invert_diagonal(a: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve_dense(a, &e)?;
        out[j] = col[j];
    }
    Some(out)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Abragam free-induction model `sinc(w t) exp(-(h t)^2 / 2)`.
pub fn abragam_model(t: f64, params: &[f64]) -> f64 {
    let (w, h) = (params[0], params[1]);
    sinc(w * t) * (-0.5 * (h * t).powi(2)).exp()
}

/// Logistic echo decay `C / (1 + exp(lambda (t - T3)))`.
pub fn logistic_model(t: f64, params: &[f64]) -> f64 {
    let (c, lambda, t3) = (params[0], params[1], params[2]);
    c / (1.0 + (lambda * (t - t3)).exp())
}

/// Rate relation `sqrt(A + x^2)` parameterized by s with A = s^2 so the
/// fitted A can never go negative.
pub fn sqrt_rate_model(x: f64, params: &[f64]) -> f64 {
    (params[0] * params[0] + x * x).sqrt()
}

/// Abragam fit with the derived spreading time.
#[derive(Debug, Clone)]
pub struct AbragamFit {
    pub fit: FitResult,
    pub w: f64,
    pub h: f64,
    /// 1/T2 = sqrt(h^2 + w^2/3).
    pub t2: f64,
}

/// Fit the Abragam shape to a decay starting near 1.
pub fn fit_abragam(times: &[f64], values: &[f64]) -> Result<AbragamFit> {
    check_lengths(times, values)?;
    let t_scale = times.last().copied().unwrap_or(1.0).abs().max(1e-300);
    // h from the 1/e time, w from the first zero crossing if any
    let h0 = match crossing_time(times, values, (-1.0f64).exp()) {
        Some(te) if te > 0.0 => 2.0f64.sqrt() / te,
        _ => 1.0 / t_scale,
    };
    let w0 = match crossing_time(times, values, 0.0) {
        Some(tz) if tz > 0.0 => std::f64::consts::PI / tz,
        _ => 0.0,
    };
    let fit = least_squares(
        abragam_model,
        times,
        values,
        &[w0, h0],
        &[1.0 / t_scale, 1.0 / t_scale],
        &["w", "h"],
        FitModel::Abragam,
    )?;
    let w = fit.value("w").unwrap().abs();
    let h = fit.value("h").unwrap().abs();
    let rate = (h * h + w * w / 3.0).sqrt();
    Ok(AbragamFit {
        fit,
        w,
        h,
        t2: 1.0 / rate,
    })
}

/// Logistic fit with both the fitted T3 and the model-free half-height time.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub fit: FitResult,
    pub c: f64,
    pub lambda: f64,
    pub t3: f64,
    /// Interpolated time of the first downward crossing of value(0)/2.
    pub half_height: Option<f64>,
}

/// Fit the logistic (Fermi-function) decay.
pub fn fit_logistic(times: &[f64], values: &[f64]) -> Result<LogisticFit> {
    check_lengths(times, values)?;
    let t_scale = times.last().copied().unwrap_or(1.0).abs().max(1e-300);
    let c0 = values[0].max(1e-12);
    let half = half_height_time(times, values);
    let t3_0 = half.unwrap_or(0.5 * t_scale);
    // steepest descent of the logistic is c*lambda/4 at the inflection
    let max_slope = times
        .windows(2)
        .zip(values.windows(2))
        .map(|(tw, vw)| (vw[0] - vw[1]) / (tw[1] - tw[0]))
        .fold(0.0f64, f64::max);
    let lambda_0 = if max_slope > 0.0 {
        4.0 * max_slope / c0
    } else {
        1.0 / t_scale
    };
    let fit = least_squares(
        logistic_model,
        times,
        values,
        &[c0, lambda_0, t3_0],
        &[1.0, 1.0 / t_scale, t_scale],
        &["c", "lambda", "t3"],
        FitModel::Logistic,
    )?;
    Ok(LogisticFit {
        c: fit.value("c").unwrap(),
        lambda: fit.value("lambda").unwrap(),
        t3: fit.value("t3").unwrap(),
        half_height: half,
        fit,
    })
}

/// First downward crossing of `values[0] / 2`, linearly interpolated;
/// `None` when the curve never crosses.
pub fn half_height_time(times: &[f64], values: &[f64]) -> Option<f64> {
    if times.is_empty() || values.is_empty() || values[0] <= 0.0 {
        return None;
    }
    let half = values[0] / 2.0;
    crossing_time(times, values, half / values[0])
}

/// Half-height time of a curve, skipping invalidated points.
pub fn half_height_time_curve(curve: &EchoCurve) -> Option<f64> {
    let pts: (Vec<f64>, Vec<f64>) = curve
        .times
        .iter()
        .zip(curve.values.iter())
        .zip(curve.valid.iter())
        .filter(|(_, &ok)| ok)
        .map(|((t, v), _)| (*t, *v))
        .unzip();
    half_height_time(&pts.0, &pts.1)
}

/// First downward crossing of `frac * values[0]`, interpolated.
fn crossing_time(times: &[f64], values: &[f64], frac: f64) -> Option<f64> {
    let target = values[0] * frac;
    for i in 0..values.len().saturating_sub(1) {
        if values[i] >= target && values[i + 1] < target {
            let span = values[i] - values[i + 1];
            if span <= 0.0 {
                return Some(times[i]);
            }
            let w = (values[i] - target) / span;
            return Some(times[i] + w * (times[i + 1] - times[i]));
        }
    }
    None
}

/// Linear fit of (k, 1/T2) points, overall and per sign region.
#[derive(Debug, Clone)]
pub struct LinearRateFit {
    pub overall: FitResult,
    pub positive: Option<FitResult>,
    pub negative: Option<FitResult>,
}

/// Closed-form least-squares line through rate points.
pub fn fit_linear_rate(points: &[(f64, f64)]) -> Result<LinearRateFit> {
    let overall = linear_fit(points)?;
    let pos: Vec<_> = points.iter().copied().filter(|(x, _)| *x > 0.0).collect();
    let neg: Vec<_> = points.iter().copied().filter(|(x, _)| *x < 0.0).collect();
    let has_both = !pos.is_empty() && !neg.is_empty();
    Ok(LinearRateFit {
        overall,
        positive: (has_both && pos.len() >= 2)
            .then(|| linear_fit(&pos))
            .transpose()?,
        negative: (has_both && neg.len() >= 2)
            .then(|| linear_fit(&neg))
            .transpose()?,
    })
}

fn linear_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: n,
            params: 2,
        });
    }
    let sx: f64 = points.iter().map(|(x, _)| x).sum();
    let sy: f64 = points.iter().map(|(_, y)| y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let det = n as f64 * sxx - sx * sx;
    if det.abs() < 1e-300 * sxx.max(1.0) {
        return Err(Error::DegenerateAbscissae);
    }
    let slope = (n as f64 * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n as f64;
    let ssr: f64 = points
        .iter()
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = n.saturating_sub(2);
    let variance = if dof > 0 { ssr / dof as f64 } else { 0.0 };
    let slope_var = variance * n as f64 / det;
    let intercept_var = variance * sxx / det;
    Ok(FitResult {
        model: FitModel::Linear,
        params: vec![
            FitParam {
                name: "intercept",
                value: intercept,
                stderr: intercept_var.max(0.0).sqrt(),
            },
            FitParam {
                name: "slope",
                value: slope,
                stderr: slope_var.max(0.0).sqrt(),
            },
        ],
        residual_rms: (ssr / n as f64).sqrt(),
        converged: true,
        n_iter: 1,
    })
}

/// Rate-relation fit `y = sqrt(A + x^2)`.
#[derive(Debug, Clone)]
pub struct RateRelationFit {
    pub fit: FitResult,
    pub a: f64,
    pub sqrt_a: f64,
    pub a_stderr: f64,
}

/// Single-parameter fit of the decoherence-vs-perturbation relation.
pub fn fit_rate_relation(points: &[(f64, f64)]) -> Result<RateRelationFit> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: points.len(),
            params: 1,
        });
    }
    if points.iter().any(|(x, _)| *x < 0.0) {
        return Err(Error::Domain {
            what: "x",
            value: points.iter().map(|(x, _)| *x).fold(0.0, f64::min),
            domain: "[0, inf)",
        });
    }
    let xs: Vec<f64> = points.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| *y).collect();
    let y_scale = ys.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    // seed from the intercept suggested by the smallest-x point
    let (x0, y0) = points
        .iter()
        .fold((f64::INFINITY, 0.0), |acc, &(x, y)| {
            if x < acc.0 {
                (x, y)
            } else {
                acc
            }
        });
    let s0 = (y0 * y0 - x0 * x0).max(1e-4 * y_scale * y_scale).sqrt();
    let fit = least_squares(
        sqrt_rate_model,
        &xs,
        &ys,
        &[s0],
        &[y_scale],
        &["s"],
        FitModel::SqrtRate,
    )?;
    let s = fit.value("s").unwrap();
    let s_err = fit.params[0].stderr;
    Ok(RateRelationFit {
        a: s * s,
        sqrt_a: s.abs(),
        a_stderr: 2.0 * s.abs() * s_err,
        fit,
    })
}

fn check_lengths(times: &[f64], values: &[f64]) -> Result<()> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            a: times.len(),
            b: values.len(),
        });
    }
    if times.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(())
}

/// Time and rate scales measured on adamantane at laboratory scale, kept for
/// report annotations; desk-scale simulations are not expected to reproduce
/// them.
pub mod lab_reference {
    /// Slope of 1/T2 vs k for positive k, in ms^-1.
    pub const RATE_SLOPE_POSITIVE_K_PER_MS: f64 = 23.0;
    /// Slope of 1/T2 vs k for negative k, in ms^-1.
    pub const RATE_SLOPE_NEGATIVE_K_PER_MS: f64 = 26.5;
    /// Rate-relation parameter A, Scheme 1.
    pub const RATE_RELATION_A_SCHEME1: f64 = 0.020;
    /// Rate-relation parameter A, Scheme 2.
    pub const RATE_RELATION_A_SCHEME2: f64 = 0.026;
    /// Asymptotic irreversibility ratio T2/T3.
    pub const T2_OVER_T3: f64 = 0.15;
    /// Exponential-tail time constant over T2.
    pub const LYAPUNOV_TIME_OVER_T2: f64 = 1.7;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn constant_model_recovers_mean() {
        let xs = grid(7, 1.0);
        let ys = [1.0, 1.2, 0.8, 1.1, 0.9, 1.05, 0.95];
        let fit = least_squares(
            |_x, p| p[0],
            &xs,
            &ys,
            &[0.0],
            &[1.0],
            &["c"],
            FitModel::Linear,
        )
        .unwrap();
        let mean: f64 = ys.iter().sum::<f64>() / ys.len() as f64;
        assert!((fit.value("c").unwrap() - mean).abs() < 1e-10);
        assert!(fit.converged);
    }

    #[test]
    fn too_few_points_rejected() {
        let err = least_squares(
            |x, p| p[0] + p[1] * x + p[2] * x * x,
            &[0.0, 1.0],
            &[1.0, 2.0],
            &[0.0; 3],
            &[1.0; 3],
            &["a", "b", "c"],
            FitModel::Linear,
        );
        assert!(matches!(err, Err(Error::TooFewPoints { .. })));
    }

    // Oracle: synthetic data generated from the model itself with frozen
    // parameters; the fit must round-trip them.
    #[test]
    fn abragam_round_trip() {
        let w = 2.1e4;
        let h = 1.3e4;
        let times = grid(60, 5.0e-6);
        let values: Vec<f64> = times.iter().map(|&t| abragam_model(t, &[w, h])).collect();
        let fit = fit_abragam(&times, &values).unwrap();
        assert!(fit.fit.converged);
        assert!((fit.w - w).abs() < 1e-6 * w, "w {} vs {}", fit.w, w);
        assert!((fit.h - h).abs() < 1e-6 * h, "h {} vs {}", fit.h, h);
        let want_rate = (h * h + w * w / 3.0).sqrt();
        assert!((1.0 / fit.t2 - want_rate).abs() < 1e-6 * want_rate);
    }

    #[test]
    fn abragam_pure_gaussian_and_pure_sinc() {
        let times = grid(50, 4.0e-6);
        let h = 9.0e3;
        let gauss: Vec<f64> = times.iter().map(|&t| abragam_model(t, &[0.0, h])).collect();
        let fit = fit_abragam(&times, &gauss).unwrap();
        assert!((1.0 / fit.t2 - h).abs() < 1e-5 * h);

        let w = 2.5e4;
        let sinc_only: Vec<f64> = times.iter().map(|&t| abragam_model(t, &[w, 0.0])).collect();
        let fit = fit_abragam(&times, &sinc_only).unwrap();
        let want = w / 3.0f64.sqrt();
        assert!((1.0 / fit.t2 - want).abs() < 1e-5 * want);
    }

    // Oracle: the frozen logistic parameters of the round trip.
    #[test]
    fn logistic_round_trip() {
        let c = 1.0;
        // lambda t3 = 8 keeps the analytic half-height offset
        // ln(1 + 2 exp(-lambda t3)) / lambda below the grid step
        let lambda = 2.0e4;
        let t3 = 4.0e-4;
        let times = grid(50, 2.0e-5);
        let values: Vec<f64> = times
            .iter()
            .map(|&t| logistic_model(t, &[c, lambda, t3]))
            .collect();
        let fit = fit_logistic(&times, &values).unwrap();
        assert!(fit.fit.converged);
        assert!((fit.c - c).abs() < 1e-6 * c);
        assert!((fit.lambda - lambda).abs() < 1e-6 * lambda);
        assert!((fit.t3 - t3).abs() < 1e-6 * t3);
        // and the model-free half-height agrees within the grid resolution
        let hh = fit.half_height.unwrap();
        assert!((hh - t3).abs() < 2.0e-5);
    }

    #[test]
    fn logistic_fit_is_fixed_point() {
        let times = grid(40, 3.0e-5);
        let values: Vec<f64> = times
            .iter()
            .map(|&t| logistic_model(t, &[0.97, 3.3e3, 5.5e-4]))
            .collect();
        let first = fit_logistic(&times, &values).unwrap();
        let regen: Vec<f64> = times
            .iter()
            .map(|&t| logistic_model(t, &[first.c, first.lambda, first.t3]))
            .collect();
        let second = fit_logistic(&times, &regen).unwrap();
        assert!((first.c - second.c).abs() < 1e-8);
        assert!((first.lambda - second.lambda).abs() < 1e-8 * first.lambda);
        assert!((first.t3 - second.t3).abs() < 1e-8 * first.t3);
    }

    #[test]
    fn constant_curve_has_no_half_height() {
        let times = grid(10, 1.0);
        let values = vec![0.8; 10];
        assert!(half_height_time(&times, &values).is_none());
    }

    #[test]
    fn half_height_interpolates() {
        assert!((half_height_time(&[0.0, 1.0], &[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);

        // crossing between samples 3 and 4
        let times = grid(6, 1.0);
        let values = [1.0, 0.9, 0.8, 0.7, 0.3, 0.1];
        let hh = half_height_time(&times, &values).unwrap();
        assert!(hh > 3.0 && hh < 4.0);
        assert!((hh - 3.5).abs() < 1e-12);
    }

    #[test]
    fn half_height_ignores_value_scale() {
        let times = grid(6, 0.1);
        let values = [2.0, 1.8, 1.4, 0.9, 0.4, 0.2];
        let a = half_height_time(&times, &values).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| v * 7.3).collect();
        let b = half_height_time(&times, &scaled).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_fit_exact_line() {
        let points: Vec<(f64, f64)> = (1..=6).map(|i| (i as f64, 3.0 * i as f64)).collect();
        let fit = fit_linear_rate(&points).unwrap();
        assert!((fit.overall.value("slope").unwrap() - 3.0).abs() < 1e-12);
        assert!(fit.overall.value("intercept").unwrap().abs() < 1e-12);
        // single-sign data: no region fits
        assert!(fit.positive.is_none() && fit.negative.is_none());
    }

    #[test]
    fn linear_fit_splits_sign_regions() {
        let mut points: Vec<(f64, f64)> = (1..=5).map(|i| (0.1 * i as f64, 2.0 * 0.1 * i as f64)).collect();
        points.extend((1..=5).map(|i| (-0.1 * i as f64, 2.5 * 0.1 * i as f64)));
        let fit = fit_linear_rate(&points).unwrap();
        let pos = fit.positive.unwrap();
        let neg = fit.negative.unwrap();
        assert!((pos.value("slope").unwrap() - 2.0).abs() < 1e-10);
        assert!((neg.value("slope").unwrap() + 2.5).abs() < 1e-10);
    }

    #[test]
    fn linear_fit_degenerate_abscissae() {
        let points = vec![(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)];
        assert!(matches!(
            fit_linear_rate(&points),
            Err(Error::DegenerateAbscissae)
        ));
    }

    // Oracle: frozen A = 0.02 round trip.
    #[test]
    fn rate_relation_round_trip() {
        let a = 0.02;
        let points: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let x = 0.05 + 0.3 * i as f64;
                (x, (a + x * x).sqrt())
            })
            .collect();
        let fit = fit_rate_relation(&points).unwrap();
        assert!(fit.fit.converged);
        assert!((fit.a - a).abs() < 1e-8, "A = {}", fit.a);
        assert!((fit.sqrt_a - a.sqrt()).abs() < 1e-8);
    }

    #[test]
    fn rate_relation_handles_zero_intercept() {
        let points: Vec<(f64, f64)> = (1..10).map(|i| (0.5 * i as f64, 0.5 * i as f64)).collect();
        let fit = fit_rate_relation(&points).unwrap();
        assert!(fit.a >= 0.0);
        assert!(fit.a < 1e-6, "A = {}", fit.a);
        // the fitted curve is the unit-slope line to within sqrt(A)
        for i in 1..10 {
            let x = 0.5 * i as f64;
            assert!((sqrt_rate_model(x, &[fit.sqrt_a]) - x).abs() <= fit.sqrt_a + 1e-12);
        }
    }

    #[test]
    fn rate_relation_fitted_curve_properties() {
        let points: Vec<(f64, f64)> = (0..10)
            .map(|i| {
                let x = 0.1 + 0.5 * i as f64;
                (x, (0.05 + x * x).sqrt())
            })
            .collect();
        let fit = fit_rate_relation(&points).unwrap();
        // y(0) = sqrt(A) and y(x) - x decreasing toward zero
        let y0 = sqrt_rate_model(0.0, &[fit.sqrt_a]);
        assert!((y0 - fit.sqrt_a).abs() < 1e-14);
        let mut last_gap = f64::INFINITY;
        for i in 1..40 {
            let x = i as f64;
            let gap = sqrt_rate_model(x, &[fit.sqrt_a]) - x;
            assert!(gap >= 0.0 && gap <= last_gap);
            last_gap = gap;
        }
    }

    // Fitting (t, y) against (c t, y) must scale rate-like parameters by
    // exactly 1/c.
    #[test]
    fn fits_are_time_unit_equivariant() {
        let c = 1000.0;
        let times = grid(60, 5.0e-6);
        let slow: Vec<f64> = times.iter().map(|&t| t * c).collect();

        let ab: Vec<f64> = times
            .iter()
            .map(|&t| abragam_model(t, &[2.1e4, 1.3e4]))
            .collect();
        let f1 = fit_abragam(&times, &ab).unwrap();
        let f2 = fit_abragam(&slow, &ab).unwrap();
        assert!((f1.w / c - f2.w).abs() < 1e-8 * f2.w.max(1e-30));
        assert!((f1.h / c - f2.h).abs() < 1e-8 * f2.h);
        assert!((f1.t2 * c - f2.t2).abs() < 1e-8 * f2.t2);

        let lg: Vec<f64> = times
            .iter()
            .map(|&t| logistic_model(t, &[1.0, 2.0e4, 1.2e-4]))
            .collect();
        let g1 = fit_logistic(&times, &lg).unwrap();
        let g2 = fit_logistic(&slow, &lg).unwrap();
        assert!((g1.lambda / c - g2.lambda).abs() < 1e-8 * g2.lambda);
        assert!((g1.t3 * c - g2.t3).abs() < 1e-8 * g2.t3);
    }

    #[test]
    fn stderr_is_zero_for_exact_data() {
        let times = grid(30, 1.0e-5);
        let values: Vec<f64> = times
            .iter()
            .map(|&t| logistic_model(t, &[1.0, 8.0e3, 1.5e-4]))
            .collect();
        let fit = fit_logistic(&times, &values).unwrap();
        for p in &fit.fit.params {
            assert!(p.stderr.abs() < 1e-6, "{}: stderr {}", p.name, p.stderr);
        }
    }
}
