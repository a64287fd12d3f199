//! Subcommand implementations. `sweep` is the batch driver; the other
//! compute commands are single-curve conveniences over the same engine.

use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use spinecho_core::analysis::{
    fit_abragam, fit_linear_rate, fit_logistic, fit_rate_relation, half_height_time_curve,
    lab_reference, FitModel,
};
use spinecho_core::hamiltonian::second_moment;
use spinecho_core::hamiltonian::secular_dipolar;
use spinecho_core::protocols::{
    normalize_to_reference, EchoCurve, EchoEngine, Scheme, DEFAULT_NORMALIZATION_FLOOR,
};
use spinecho_core::spin::{collective_operator, Axis};

use crate::config::RunConfig;
use crate::output::{
    self, fmt_f64, CurveRecord, FitRecord, NamedFit, RatePoint, RateRelationRecord, Summary,
    SystemRecord,
};

fn build_engine(cfg: &RunConfig) -> anyhow::Result<(EchoEngine, f64)> {
    let system = cfg.build_system()?;
    let engine = EchoEngine::new(
        &system,
        cfg.mode()?,
        cfg.omega_e_rad_s,
        spinecho_core::propagation::StroboscopicPolicy::RoundNearest,
    )?;
    let t2 = engine.t2()?;
    Ok((engine, t2))
}

fn curves_dir(cfg: &RunConfig) -> PathBuf {
    Path::new(&cfg.out_dir).join("curves")
}

fn fits_dir(cfg: &RunConfig) -> PathBuf {
    Path::new(&cfg.out_dir).join("fits")
}

fn k_tag(k: f64) -> String {
    format!("{k:.3}")
}

pub fn cmd_fid(cfg: &RunConfig) -> anyhow::Result<()> {
    let (engine, t2) = build_engine(cfg)?;
    let curve = engine.fid_curve(&cfg.time_grid())?;
    let path = curves_dir(cfg).join("fid.csv");
    output::write_curve_csv(&path, &curve, cfg.seed)?;
    println!(
        "fid: {} points, T2 (trace) = {} s -> {}",
        curve.len(),
        fmt_f64(t2),
        path.display()
    );
    Ok(())
}

pub fn cmd_pcurve(cfg: &RunConfig, k: f64) -> anyhow::Result<()> {
    let (engine, _) = build_engine(cfg)?;
    let curve = engine.polarization_curve(k, &cfg.time_grid())?;
    let path = curves_dir(cfg).join(format!("pcurve_k{}.csv", k_tag(k)));
    output::write_curve_csv(&path, &curve, cfg.seed)?;
    println!("pcurve k = {k}: {} points -> {}", curve.len(), path.display());
    Ok(())
}

pub fn cmd_echo(cfg: &RunConfig, scheme_id: u8, k: f64) -> anyhow::Result<()> {
    let scheme = Scheme::parse(&scheme_id.to_string())
        .ok_or_else(|| anyhow::anyhow!("--scheme: must be 1 or 2, got {scheme_id}"))?;
    let (engine, _) = build_engine(cfg)?;
    let spec = cfg.perturbation_spec()?;
    let perturbation = (spec.strength > 0.0).then_some(&spec);
    let curve = engine.echo_curve(scheme, k, &cfg.time_grid(), perturbation, cfg.placement()?)?;
    for (t, v) in curve.times.iter().zip(curve.values.iter()) {
        println!("t_e = {t:.6e} s  M = {v:.6}");
    }
    let path = curves_dir(cfg).join(format!("echo_scheme{}_k{}.csv", scheme.id(), k_tag(k)));
    output::write_curve_csv(&path, &curve, cfg.seed)?;
    println!("echo scheme {} k = {k} -> {}", scheme.id(), path.display());
    Ok(())
}

pub fn cmd_otoc(cfg: &RunConfig, k: f64, theta: f64) -> anyhow::Result<()> {
    let (engine, _) = build_engine(cfg)?;
    let times = cfg.time_grid();
    let mut values = Vec::with_capacity(times.len());
    for &t in &times {
        values.push(engine.otoc(k, theta, t)?);
    }
    let meta = spinecho_core::protocols::CurveMeta {
        kind: spinecho_core::protocols::CurveKind::Otoc,
        k,
        mode: engine.mode(),
        perturbation: None,
        time_axis: spinecho_core::protocols::TimeAxis::Lab,
    };
    let curve = EchoCurve::new(times, values, meta);
    let path = curves_dir(cfg).join(format!("otoc_k{}_theta{theta:.4}.csv", k_tag(k)));
    output::write_curve_csv(&path, &curve, cfg.seed)?;
    println!("otoc k = {k} theta = {theta} -> {}", path.display());
    Ok(())
}

pub fn cmd_fit(model: &str, input: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let model = FitModel::parse(model)
        .ok_or_else(|| anyhow::anyhow!("--model: expected abragam|logistic|linear|sqrt_rate, got {model:?}"))?;
    let (xs, ys) = output::read_xy_csv(input)?;
    let record = match model {
        FitModel::Abragam => {
            let fit = fit_abragam(&xs, &ys)?;
            FitRecord::from_fit(&fit.fit).with_derived("t2_s", Some(fit.t2))
        }
        FitModel::Logistic => {
            let fit = fit_logistic(&xs, &ys)?;
            FitRecord::from_fit(&fit.fit).with_derived("half_height_s", fit.half_height)
        }
        FitModel::Linear => {
            let points: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
            FitRecord::from_fit(&fit_linear_rate(&points)?.overall)
        }
        FitModel::SqrtRate => {
            let points: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
            let fit = fit_rate_relation(&points)?;
            FitRecord::from_fit(&fit.fit)
                .with_derived("a", Some(fit.a))
                .with_derived("sqrt_a", Some(fit.sqrt_a))
        }
    };
    let text = serde_json::to_string_pretty(&record)?;
    match out {
        Some(path) => {
            output::write_json(path, &record)?;
            println!("fit {} on {} -> {}", record.model, input.display(), path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

/// One unit of sweep work.
enum Task {
    Echo { scheme: Scheme, k: f64, reference: bool },
    PCurve { k: f64 },
    Fid,
}

struct TaskOutput {
    curve: EchoCurve,
    file: String,
    reference: bool,
    fits: Vec<NamedFit>,
}

pub fn cmd_sweep(cfg: &RunConfig) -> anyhow::Result<()> {
    let started = std::time::Instant::now();
    let system = cfg.build_system()?;
    let mode = cfg.mode()?;
    let engine = EchoEngine::new(
        &system,
        mode,
        cfg.omega_e_rad_s,
        spinecho_core::propagation::StroboscopicPolicy::RoundNearest,
    )?;
    let t2 = engine.t2()?;
    let spec = cfg.perturbation_spec()?;
    let perturbation = (spec.strength > 0.0).then_some(spec);
    let placement = cfg.placement()?;
    let grid = cfg.time_grid();

    // assemble the task list in deterministic order
    let mut tasks: Vec<Task> = Vec::new();
    for sc in &cfg.schemes {
        let scheme = Scheme::parse(&sc.scheme.to_string()).expect("validated");
        let ref_k = scheme.reference_k();
        if !sc.k_values.iter().any(|&k| (k - ref_k).abs() < 1e-12) {
            tasks.push(Task::Echo {
                scheme,
                k: ref_k,
                reference: true,
            });
        }
        for &k in &sc.k_values {
            tasks.push(Task::Echo {
                scheme,
                k,
                reference: (k - ref_k).abs() < 1e-12,
            });
        }
    }
    if cfg.output.pcurves {
        let mut ks: Vec<f64> = cfg
            .schemes
            .iter()
            .flat_map(|sc| sc.k_values.iter().copied())
            .collect();
        ks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        for k in ks {
            tasks.push(Task::PCurve { k });
        }
        tasks.push(Task::Fid);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .context("building worker pool")?;
    let results: Vec<anyhow::Result<TaskOutput>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| run_task(task, &engine, t2, perturbation.as_ref(), placement, &grid))
            .collect()
    });

    let mut outputs = Vec::with_capacity(results.len());
    for r in results {
        outputs.push(r?);
    }

    // reference curves per scheme for normalization
    let reference_of = |scheme: Scheme| -> Option<&EchoCurve> {
        outputs.iter().find_map(|o| {
            (o.reference
                && o.curve.meta.kind.name() == scheme.id().to_string())
            .then_some(&o.curve)
        })
    };

    let want_csv = cfg.wants("csv");
    let want_json = cfg.wants("json");
    let mut curve_records = Vec::new();
    let mut fit_records: Vec<NamedFit> = Vec::new();
    for out in &outputs {
        let path = curves_dir(cfg).join(&out.file);
        if want_csv {
            output::write_curve_csv(&path, &out.curve, cfg.seed)?;
        }
        curve_records.push(CurveRecord {
            file: format!("curves/{}", out.file),
            kind: out.curve.meta.kind.name().to_string(),
            k: out.curve.meta.k,
            mode: out.curve.meta.mode.name().to_string(),
            sigma_model: out
                .curve
                .meta
                .perturbation
                .map(|p| p.model.name().to_string()),
            sigma_strength: out
                .curve
                .meta
                .perturbation
                .map(|p| p.strength)
                .unwrap_or(0.0),
            n_points: out.curve.len(),
            half_height_s: half_height_time_curve(&out.curve),
            reference: out.reference,
        });
        fit_records.extend(out.fits.iter().cloned());

        // normalized companion for echo curves
        if let Some(scheme) = Scheme::parse(out.curve.meta.kind.name()) {
            if let Some(reference) = reference_of(scheme) {
                if !out.reference {
                    let normalized = normalize_to_reference(
                        &out.curve,
                        reference,
                        cfg.echo.normalization_floor,
                        cfg.echo.interpolate_reference,
                    )?;
                    if want_csv {
                        let norm_file = out.file.replace(".csv", "_norm.csv");
                        output::write_curve_csv(
                            &curves_dir(cfg).join(&norm_file),
                            &normalized,
                            cfg.seed,
                        )?;
                    }
                }
            }
        }
    }

    // rate-relation table: trace-route T2^k against the reference and echo
    // half-heights
    let mut rate_points = Vec::new();
    for sc in &cfg.schemes {
        let scheme = Scheme::parse(&sc.scheme.to_string()).expect("validated");
        let Some(reference) = reference_of(scheme) else {
            continue;
        };
        let Some(t_sigma) = half_height_time_curve(reference) else {
            continue;
        };
        for rec in &curve_records {
            if rec.kind != scheme.id().to_string() || rec.reference || rec.k == 0.0 {
                continue;
            }
            let Some(t3) = rec.half_height_s else {
                continue;
            };
            let t2k = t2 / rec.k;
            rate_points.push(RatePoint {
                scheme: rec.kind.clone(),
                k: rec.k,
                x: t2k / t_sigma,
                y: t2k / t3,
                t2k_s: t2k,
                t3k_s: t3,
                t_sigma_s: t_sigma,
            });
        }
    }
    let rate_relation = if rate_points.len() >= 2 {
        let pts: Vec<(f64, f64)> = rate_points.iter().map(|p| (p.x, p.y)).collect();
        match fit_rate_relation(&pts) {
            Ok(fit) => Some(RateRelationRecord::from_fit(&fit, rate_points)),
            Err(_) => None,
        }
    } else {
        None
    };

    if want_json {
        for nf in &fit_records {
            let name = nf
                .curve
                .replace("curves/", "")
                .replace(".csv", format!("_{}.json", nf.record.model).as_str());
            output::write_json(&fits_dir(cfg).join(name), &nf.record)?;
        }
    }

    let summary = Summary {
        system: SystemRecord {
            n_sites: system.n_sites(),
            seed: cfg.seed,
            positions_nm: system.positions().to_vec(),
            field_direction: system.field_direction(),
            coupling_prefactor: system.coupling_prefactor(),
            coupling_cutoff_nm: system.coupling_cutoff(),
            t2_s: t2,
            tau_e_s: engine.tau_e(),
        },
        mode: mode.name().to_string(),
        omega_e_rad_s: cfg.omega_e_rad_s,
        curves: curve_records,
        fits: fit_records,
        rate_relation,
    };
    output::write_json(&Path::new(&cfg.out_dir).join("summary.json"), &summary)?;

    println!(
        "sweep: {} curves, {} fits, T2 = {} s, wrote {} in {:.1?}",
        summary.curves.len(),
        summary.fits.len(),
        fmt_f64(t2),
        cfg.out_dir,
        started.elapsed()
    );
    Ok(())
}

fn run_task(
    task: &Task,
    engine: &EchoEngine,
    t2: f64,
    perturbation: Option<&spinecho_core::hamiltonian::PerturbationSpec>,
    placement: spinecho_core::protocols::SigmaPlacement,
    grid: &[f64],
) -> anyhow::Result<TaskOutput> {
    match task {
        Task::Echo {
            scheme,
            k,
            reference,
        } => {
            let curve = engine.echo_curve(*scheme, *k, grid, perturbation, placement)?;
            let file = format!("echo_scheme{}_k{}.csv", scheme.id(), k_tag(*k));
            let fit = fit_logistic(&curve.times, &curve.values)?;
            let fits = vec![NamedFit {
                curve: format!("curves/{file}"),
                record: FitRecord::from_fit(&fit.fit)
                    .with_derived("t3_s", Some(fit.t3))
                    .with_derived("half_height_s", fit.half_height),
            }];
            Ok(TaskOutput {
                curve,
                file,
                reference: *reference,
                fits,
            })
        }
        Task::PCurve { k } => {
            let curve = engine.polarization_curve(*k, grid)?;
            let file = format!("pcurve_k{}.csv", k_tag(*k));
            // fit the initial decay only; finite systems revive later
            let window = 1.5 * t2 / k.abs().max(1e-12);
            let n_window = curve
                .times
                .iter()
                .take_while(|&&t| t <= window)
                .count()
                .max(6)
                .min(curve.len());
            let fit = fit_abragam(&curve.times[..n_window], &curve.values[..n_window])?;
            let trace_rate = k.abs() / t2;
            let fits = vec![NamedFit {
                curve: format!("curves/{file}"),
                record: FitRecord::from_fit(&fit.fit)
                    .with_derived("t2_s", Some(fit.t2))
                    .with_derived("inv_t2_fit", Some(1.0 / fit.t2))
                    .with_derived("inv_t2_trace", Some(trace_rate)),
            }];
            Ok(TaskOutput {
                curve,
                file,
                reference: false,
                fits,
            })
        }
        Task::Fid => {
            let curve = engine.fid_curve(grid)?;
            let system = engine.system();
            let m2 = second_moment(
                &secular_dipolar(system, Axis::Z),
                &collective_operator(system, Axis::Y),
            )?;
            let window = 1.5 / m2.sqrt();
            let n_window = curve
                .times
                .iter()
                .take_while(|&&t| t <= window)
                .count()
                .max(6)
                .min(curve.len());
            let fit = fit_abragam(&curve.times[..n_window], &curve.values[..n_window])?;
            let fits = vec![NamedFit {
                curve: "curves/fid.csv".into(),
                record: FitRecord::from_fit(&fit.fit)
                    .with_derived("t2_s", Some(fit.t2))
                    .with_derived("inv_t2_trace", Some(m2.sqrt())),
            }];
            Ok(TaskOutput {
                curve,
                file: "fid.csv".into(),
                reference: false,
                fits,
            })
        }
    }
}

/// Assemble the figure-analog tables from a sweep directory.
pub fn cmd_report(dir: &Path) -> anyhow::Result<()> {
    let summary_path = dir.join("summary.json");
    if !summary_path.exists() {
        anyhow::bail!(
            "nothing to report: no summary.json in {} (run `spinecho sweep` first)",
            dir.display()
        );
    }
    let text = std::fs::read_to_string(&summary_path)?;
    let summary: Summary = serde_json::from_str(&text)
        .map_err(|e| anyhow::anyhow!("{}: {e}", summary_path.display()))?;
    if summary.curves.is_empty() {
        anyhow::bail!("nothing to report: summary lists no curves");
    }

    // rates vs k, both routes
    let mut rate_rows = Vec::new();
    for fit in &summary.fits {
        if fit.record.model != "abragam" {
            continue;
        }
        let Some(k) = summary
            .curves
            .iter()
            .find(|c| c.file == fit.curve && c.kind == "p-curve")
            .map(|c| c.k)
        else {
            continue;
        };
        let fit_rate = fit.record.derived.get("inv_t2_fit").and_then(|v| v.as_f64());
        let trace_rate = fit
            .record
            .derived
            .get("inv_t2_trace")
            .and_then(|v| v.as_f64());
        rate_rows.push(serde_json::json!({
            "k": k,
            "inv_t2_trace": trace_rate,
            "inv_t2_abragam": fit_rate,
        }));
    }
    let mut linear_fits = serde_json::Map::new();
    let trace_points: Vec<(f64, f64)> = rate_rows
        .iter()
        .filter_map(|r| Some((r["k"].as_f64()?, r["inv_t2_trace"].as_f64()?)))
        .collect();
    if trace_points.len() >= 2 {
        if let Ok(fit) = fit_linear_rate(&trace_points) {
            linear_fits.insert(
                "trace_route".into(),
                serde_json::to_value(FitRecord::from_fit(&fit.overall))?,
            );
        }
    }
    let fit_points: Vec<(f64, f64)> = rate_rows
        .iter()
        .filter_map(|r| Some((r["k"].as_f64()?, r["inv_t2_abragam"].as_f64()?)))
        .collect();
    if fit_points.len() >= 2 {
        if let Ok(fit) = fit_linear_rate(&fit_points) {
            linear_fits.insert(
                "abragam_route".into(),
                serde_json::to_value(FitRecord::from_fit(&fit.overall))?,
            );
        }
    }

    // echo decay table
    let mut echo_rows = Vec::new();
    for c in &summary.curves {
        if c.kind != "1" && c.kind != "2" {
            continue;
        }
        let logistic = summary
            .fits
            .iter()
            .find(|f| f.curve == c.file && f.record.model == "logistic");
        echo_rows.push(serde_json::json!({
            "scheme": c.kind,
            "k": c.k,
            "reference": c.reference,
            "half_height_s": c.half_height_s,
            "logistic": logistic.map(|f| &f.record),
        }));
    }

    // normalized echoes against scaled time t_s = k t_e
    let mut collapse_rows = Vec::new();
    for c in &summary.curves {
        if (c.kind != "1" && c.kind != "2") || c.reference {
            continue;
        }
        let norm_file = c.file.replace(".csv", "_norm.csv");
        let path = dir.join(&norm_file);
        if !path.exists() {
            continue;
        }
        let (ts, vs) = output::read_xy_csv(&path)?;
        let scaled: Vec<[f64; 2]> = ts
            .iter()
            .zip(vs.iter())
            .map(|(t, v)| [c.k * t, *v])
            .collect();
        collapse_rows.push(serde_json::json!({
            "scheme": c.kind,
            "k": c.k,
            "points_scaled_time": scaled,
        }));
    }

    let report = serde_json::json!({
        "source": summary_path.display().to_string(),
        "system": summary.system,
        "rates_vs_k": { "rows": rate_rows, "linear_fits": linear_fits },
        "echo_decays": echo_rows,
        "scaled_time_collapse": collapse_rows,
        "rate_relation": summary.rate_relation,
        "lab_scale_reference": {
            "rate_slope_positive_k_per_ms": lab_reference::RATE_SLOPE_POSITIVE_K_PER_MS,
            "rate_slope_negative_k_per_ms": lab_reference::RATE_SLOPE_NEGATIVE_K_PER_MS,
            "rate_relation_a_scheme1": lab_reference::RATE_RELATION_A_SCHEME1,
            "rate_relation_a_scheme2": lab_reference::RATE_RELATION_A_SCHEME2,
            "t2_over_t3": lab_reference::T2_OVER_T3,
            "lyapunov_time_over_t2": lab_reference::LYAPUNOV_TIME_OVER_T2,
        },
    });
    let out = dir.join("report.json");
    output::write_json(&out, &report)?;
    println!(
        "report: {} rate rows, {} echo rows, {} collapse curves -> {}",
        report["rates_vs_k"]["rows"].as_array().map(|a| a.len()).unwrap_or(0),
        report["echo_decays"].as_array().map(|a| a.len()).unwrap_or(0),
        report["scaled_time_collapse"].as_array().map(|a| a.len()).unwrap_or(0),
        out.display()
    );
    let _ = DEFAULT_NORMALIZATION_FLOOR;
    Ok(())
}
