//! Wire formats: the curve CSV schema, fit JSON records, and the sweep
//! summary document. All floats are written with 17 significant digits so
//! golden files are stable.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spinecho_core::analysis::{FitResult, RateRelationFit};
use spinecho_core::protocols::EchoCurve;

/// Round-trip float formatting: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write one curve as `time_s,value,scheme,k,mode,sigma_strength,seed`,
/// one row per valid point. `seed` is the run's system seed.
pub fn write_curve_csv(path: &Path, curve: &EchoCurve, seed: u64) -> anyhow::Result<()> {
    let mut out = String::from("time_s,value,scheme,k,mode,sigma_strength,seed\n");
    let strength = curve
        .meta
        .perturbation
        .map(|p| p.strength)
        .unwrap_or(0.0);
    for ((t, v), ok) in curve
        .times
        .iter()
        .zip(curve.values.iter())
        .zip(curve.valid.iter())
    {
        if !ok {
            continue;
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(*t),
            fmt_f64(*v),
            curve.meta.kind.name(),
            fmt_f64(curve.meta.k),
            curve.meta.mode.name(),
            fmt_f64(strength),
            seed
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Read the first two columns (time/x, value/y) of a curve CSV, skipping
/// the header row.
pub fn read_xy_csv(path: &Path) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let x = cols
            .next()
            .ok_or_else(|| anyhow::anyhow!("{}:{}: missing x column", path.display(), i + 1))?;
        let y = cols
            .next()
            .ok_or_else(|| anyhow::anyhow!("{}:{}: missing y column", path.display(), i + 1))?;
        xs.push(x.trim().parse::<f64>().map_err(|e| {
            anyhow::anyhow!("{}:{}: bad x value {x:?}: {e}", path.display(), i + 1)
        })?);
        ys.push(y.trim().parse::<f64>().map_err(|e| {
            anyhow::anyhow!("{}:{}: bad y value {y:?}: {e}", path.display(), i + 1)
        })?);
    }
    if xs.is_empty() {
        anyhow::bail!("{}: no data rows", path.display());
    }
    Ok((xs, ys))
}

/// Serializable mirror of a fit outcome.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitRecord {
    pub model: String,
    pub params: serde_json::Map<String, serde_json::Value>,
    pub stderr: serde_json::Map<String, serde_json::Value>,
    pub residual_rms: f64,
    pub converged: bool,
    pub n_iter: usize,
    /// Model-specific derived quantities (t2_s, t3_s, half_height_s, ...).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub derived: serde_json::Map<String, serde_json::Value>,
}

fn json_num(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

impl FitRecord {
    pub fn from_fit(fit: &FitResult) -> Self {
        let mut params = serde_json::Map::new();
        let mut stderr = serde_json::Map::new();
        for p in &fit.params {
            params.insert(p.name.to_string(), json_num(p.value));
            stderr.insert(p.name.to_string(), json_num(p.stderr));
        }
        Self {
            model: fit.model.name().to_string(),
            params,
            stderr,
            residual_rms: fit.residual_rms,
            converged: fit.converged,
            n_iter: fit.n_iter,
            derived: serde_json::Map::new(),
        }
    }

    pub fn with_derived(mut self, key: &str, value: Option<f64>) -> Self {
        self.derived.insert(
            key.to_string(),
            value.map(json_num).unwrap_or(serde_json::Value::Null),
        );
        self
    }
}

/// One curve's bookkeeping entry in the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRecord {
    pub file: String,
    pub kind: String,
    pub k: f64,
    pub mode: String,
    pub sigma_model: Option<String>,
    pub sigma_strength: f64,
    pub n_points: usize,
    pub half_height_s: Option<f64>,
    /// Whether this curve is the normalization reference of its scheme.
    pub reference: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemRecord {
    pub n_sites: usize,
    pub seed: u64,
    pub positions_nm: Vec<[f64; 3]>,
    pub field_direction: [f64; 3],
    pub coupling_prefactor: f64,
    pub coupling_cutoff_nm: Option<f64>,
    pub t2_s: f64,
    pub tau_e_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatePoint {
    pub scheme: String,
    pub k: f64,
    pub x: f64,
    pub y: f64,
    pub t2k_s: f64,
    pub t3k_s: f64,
    pub t_sigma_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRelationRecord {
    pub a: f64,
    pub sqrt_a: f64,
    pub a_stderr: f64,
    pub residual_rms: f64,
    pub converged: bool,
    pub points: Vec<RatePoint>,
}

impl RateRelationRecord {
    pub fn from_fit(fit: &RateRelationFit, points: Vec<RatePoint>) -> Self {
        Self {
            a: fit.a,
            sqrt_a: fit.sqrt_a,
            a_stderr: fit.a_stderr,
            residual_rms: fit.fit.residual_rms,
            converged: fit.fit.converged,
            points,
        }
    }
}

/// The sweep summary document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub system: SystemRecord,
    pub mode: String,
    pub omega_e_rad_s: f64,
    pub curves: Vec<CurveRecord>,
    pub fits: Vec<NamedFit>,
    pub rate_relation: Option<RateRelationRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedFit {
    pub curve: String,
    #[serde(flatten)]
    pub record: FitRecord,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Write through a temp file so failures never leave partial output.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
