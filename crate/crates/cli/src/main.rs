//! Batch front end: define a spin system, run FID / polarization /
//! Loschmidt-echo / OTOC sweeps, fit the decays, and emit machine-readable
//! results.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "spinecho",
    about = "Scaled dipolar dynamics, Loschmidt echoes, and time-scale extraction",
    version
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the geometry seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the evolution mode: effective | microscopic.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Free induction decay under the z-quantized dipolar Hamiltonian.
    Fid,
    /// Polarization P^k(t) under the scaled Hamiltonian.
    Pcurve {
        #[arg(long)]
        k: f64,
    },
    /// Loschmidt echo curve for one scheme and scale factor.
    Echo {
        #[arg(long)]
        scheme: u8,
        #[arg(long)]
        k: f64,
    },
    /// Out-of-time-order signal at fixed rotation angle theta (rad).
    Otoc {
        #[arg(long)]
        k: f64,
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
    },
    /// Fit a model to a two-column CSV curve.
    Fit {
        /// abragam | logistic | linear | sqrt_rate
        #[arg(long)]
        model: String,
        #[arg(long)]
        input: PathBuf,
        /// Write the fit JSON here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the configured echo/polarization sweep and write the bundle.
    Sweep,
    /// Assemble figure-analog tables from a sweep directory.
    Report {
        /// Sweep output directory (defaults to the config's out_dir).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        mode: cli.mode.clone(),
        workers: cli.workers,
        out: cli.out.clone(),
    };
    // `fit` and `report` read existing files; the rest need a full config
    match &cli.command {
        Command::Fit {
            model,
            input,
            output,
        } => commands::cmd_fit(model, input, output.as_deref()),
        Command::Report { dir } => {
            let dir = match dir {
                Some(d) => d.clone(),
                None => {
                    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
                    PathBuf::from(cfg.out_dir)
                }
            };
            commands::cmd_report(&dir)
        }
        other => {
            let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
            match other {
                Command::Fid => commands::cmd_fid(&cfg),
                Command::Pcurve { k } => commands::cmd_pcurve(&cfg, *k),
                Command::Echo { scheme, k } => commands::cmd_echo(&cfg, *scheme, *k),
                Command::Otoc { k, theta } => commands::cmd_otoc(&cfg, *k, *theta),
                Command::Sweep => commands::cmd_sweep(&cfg),
                Command::Fit { .. } | Command::Report { .. } => unreachable!(),
            }
        }
    }
}
