//! Run configuration: TOML schema, defaults, validation, and the
//! flag/env/file override chain.

use serde::{Deserialize, Serialize};
use spinecho_core::hamiltonian::{PerturbationModel, PerturbationSpec};
use spinecho_core::propagation::EvolutionMode;
use spinecho_core::protocols::{Scheme, SigmaPlacement, DEFAULT_NORMALIZATION_FLOOR};
use spinecho_core::spin::SpinSystem;

/// Environment variables with this prefix override config values
/// (SEED, MODE, WORKERS, OUT).
pub const ENV_PREFIX: &str = "SPINECHO_";

pub const DEFAULT_OMEGA_E: f64 = spinecho_core::protocols::DEFAULT_OMEGA_E;
pub const DEFAULT_PREFACTOR: f64 = 1.5e3; // rad/s nm^3: T2 of order 100 us

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for the geometry generator; also echoed into output rows.
    pub seed: u64,
    /// "effective" or "microscopic".
    pub mode: String,
    /// Effective frequency in rad/s; tau_e = 2 pi / omega_e.
    pub omega_e_rad_s: f64,
    /// Worker threads for sweeps; 0 means all cores.
    pub workers: usize,
    pub out_dir: String,
    pub system: SystemConfig,
    pub time_grid: TimeGridConfig,
    pub schemes: Vec<SchemeConfig>,
    pub perturbation: PerturbationConfig,
    pub echo: EchoConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: "effective".into(),
            omega_e_rad_s: DEFAULT_OMEGA_E,
            workers: 0,
            out_dir: "out".into(),
            system: SystemConfig::default(),
            time_grid: TimeGridConfig::default(),
            schemes: vec![
                SchemeConfig {
                    scheme: 1,
                    k_values: (1..=10).map(|i| 0.05 * i as f64).collect(),
                },
                SchemeConfig {
                    scheme: 2,
                    k_values: (1..=9).map(|i| 0.1 * i as f64).collect(),
                },
            ],
            perturbation: PerturbationConfig::default(),
            echo: EchoConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Number of sites for the seeded generator.
    pub n_sites: usize,
    pub box_nm: f64,
    pub min_distance_nm: f64,
    /// Explicit positions override the generator when present.
    pub positions_nm: Option<Vec<[f64; 3]>>,
    pub field_direction: [f64; 3],
    /// rad/s nm^3.
    pub coupling_prefactor: f64,
    pub coupling_cutoff_nm: Option<f64>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_sites: 8,
            box_nm: 2.0,
            min_distance_nm: 0.35,
            positions_nm: None,
            field_direction: [0.0, 0.0, 1.0],
            coupling_prefactor: DEFAULT_PREFACTOR,
            coupling_cutoff_nm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeGridConfig {
    pub start_s: f64,
    pub stop_s: f64,
    pub steps: usize,
}

impl Default for TimeGridConfig {
    fn default() -> Self {
        // 2 tau_e up to 1.9 ms, the experimental evolution-time window
        Self {
            start_s: 2.506e-5,
            stop_s: 1.9e-3,
            steps: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub scheme: u8,
    pub k_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    pub model: String,
    pub strength: f64,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            model: "random_dipolar".into(),
            strength: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EchoConfig {
    /// "variable_segment" (backward in Scheme 1, forward in Scheme 2) or
    /// "both".
    pub sigma_placement: String,
    pub normalization_floor: f64,
    pub interpolate_reference: bool,
}

impl Default for EchoConfig {
    fn default() -> Self {
        Self {
            sigma_placement: "variable_segment".into(),
            normalization_floor: DEFAULT_NORMALIZATION_FLOOR,
            interpolate_reference: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub formats: Vec<String>,
    /// Also sweep P^k curves and their Abragam fits.
    pub pcurves: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            formats: vec!["csv".into(), "json".into()],
            pcurves: true,
        }
    }
}

/// Flag-level overrides applied on top of file and environment values.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub workers: Option<usize>,
    pub out: Option<String>,
}

impl RunConfig {
    /// Load from an optional TOML file, then apply environment and flag
    /// overrides (flags win).
    pub fn load(path: Option<&std::path::Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                toml::from_str(&text)
                    .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", p.display()))?
            }
            None => RunConfig::default(),
        };

        if let Ok(v) = std::env::var(format!("{ENV_PREFIX}SEED")) {
            cfg.seed = v.parse().map_err(|_| anyhow::anyhow!("{ENV_PREFIX}SEED: not an integer"))?;
        }
        if let Ok(v) = std::env::var(format!("{ENV_PREFIX}MODE")) {
            cfg.mode = v;
        }
        if let Ok(v) = std::env::var(format!("{ENV_PREFIX}WORKERS")) {
            cfg.workers = v
                .parse()
                .map_err(|_| anyhow::anyhow!("{ENV_PREFIX}WORKERS: not an integer"))?;
        }
        if let Ok(v) = std::env::var(format!("{ENV_PREFIX}OUT")) {
            cfg.out_dir = v;
        }

        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(m) = &overrides.mode {
            cfg.mode = m.clone();
        }
        if let Some(w) = overrides.workers {
            cfg.workers = w;
        }
        if let Some(o) = &overrides.out {
            cfg.out_dir = o.clone();
        }

        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every field, naming the offender in the error.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.mode()?;
        if self.omega_e_rad_s <= 0.0 {
            anyhow::bail!("omega_e_rad_s: must be positive, got {}", self.omega_e_rad_s);
        }
        if self.system.n_sites == 0 && self.system.positions_nm.is_none() {
            anyhow::bail!("system.n_sites: must be at least 1");
        }
        if self.time_grid.steps == 0 {
            anyhow::bail!("time_grid.steps: must be at least 1");
        }
        if self.time_grid.stop_s <= self.time_grid.start_s {
            anyhow::bail!(
                "time_grid: stop_s ({}) must exceed start_s ({})",
                self.time_grid.stop_s,
                self.time_grid.start_s
            );
        }
        if self.schemes.is_empty() {
            anyhow::bail!("schemes: at least one scheme block is required");
        }
        for (i, sc) in self.schemes.iter().enumerate() {
            let scheme = Scheme::parse(&sc.scheme.to_string())
                .ok_or_else(|| anyhow::anyhow!("schemes[{i}].scheme: must be 1 or 2, got {}", sc.scheme))?;
            if sc.k_values.is_empty() {
                anyhow::bail!("schemes[{i}].k_values: must not be empty");
            }
            for (j, &k) in sc.k_values.iter().enumerate() {
                scheme.validate_k(k).map_err(|e| {
                    anyhow::anyhow!("schemes[{i}].k_values[{j}]: {e}")
                })?;
            }
        }
        self.perturbation_spec()?;
        self.placement()?;
        if !(0.0..1.0).contains(&self.echo.normalization_floor) {
            anyhow::bail!(
                "echo.normalization_floor: must be in [0, 1), got {}",
                self.echo.normalization_floor
            );
        }
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                anyhow::bail!("output.formats: unknown format {f:?} (expected \"csv\" or \"json\")");
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> anyhow::Result<EvolutionMode> {
        EvolutionMode::parse(&self.mode)
            .ok_or_else(|| anyhow::anyhow!("mode: expected \"effective\" or \"microscopic\", got {:?}", self.mode))
    }

    pub fn placement(&self) -> anyhow::Result<SigmaPlacement> {
        match self.echo.sigma_placement.as_str() {
            "variable_segment" => Ok(SigmaPlacement::VariableSegment),
            "both" => Ok(SigmaPlacement::Both),
            other => anyhow::bail!(
                "echo.sigma_placement: expected \"variable_segment\" or \"both\", got {other:?}"
            ),
        }
    }

    pub fn perturbation_spec(&self) -> anyhow::Result<PerturbationSpec> {
        let model = PerturbationModel::parse(&self.perturbation.model).ok_or_else(|| {
            anyhow::anyhow!(
                "perturbation.model: unknown model {:?} (expected random_dipolar, nonsecular_residual, or zeeman_disorder)",
                self.perturbation.model
            )
        })?;
        PerturbationSpec::new(model, self.perturbation.strength, self.perturbation.seed)
            .map_err(|e| anyhow::anyhow!("perturbation.strength: {e}"))
    }

    pub fn build_system(&self) -> anyhow::Result<SpinSystem> {
        let sys = match &self.system.positions_nm {
            Some(positions) => SpinSystem::new(
                positions.clone(),
                self.system.field_direction,
                self.system.coupling_prefactor,
                self.system.coupling_cutoff_nm,
            )?,
            None => SpinSystem::random(
                self.system.n_sites,
                self.seed,
                self.system.box_nm,
                self.system.min_distance_nm,
                self.system.coupling_prefactor,
            )?,
        };
        Ok(sys)
    }

    pub fn time_grid(&self) -> Vec<f64> {
        let g = &self.time_grid;
        if g.steps == 1 {
            return vec![g.start_s];
        }
        let dt = (g.stop_s - g.start_s) / (g.steps - 1) as f64;
        (0..g.steps).map(|i| g.start_s + i as f64 * dt).collect()
    }

    pub fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }
}
