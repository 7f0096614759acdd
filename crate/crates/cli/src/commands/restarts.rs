//! Repeated estimation from distinct random initialisations. Runs execute
//! in parallel worker threads; each run is internally deterministic, so the
//! per-run outputs depend only on the structure, stream, and seed.

use std::fs;

use tenshape_core::estimator::{align_poses, EstimationTrace, Estimator};
use tenshape_core::kinematics::{nodes_from_pose, NodeSet};
use tenshape_core::model::build_connectivity;
use tenshape_core::sensing::{FilterParams, StreamAngleSource};

use crate::commands::run::{load_structure, push_inputs, push_length_and_error};
use crate::error::CliError;
use crate::outputs::{write_frame_file, REPORT_FILE, TRACE_FILE};
use crate::report::{wall_stats, Report};
use crate::settings::{CommonArgs, Settings};
use crate::sources::load_sensor_stream;

pub fn run(common: &CommonArgs, runs: usize) -> Result<(), CliError> {
    if runs < 2 {
        return Err(CliError::Config(format!(
            "--runs must be at least 2, got {runs}"
        )));
    }
    let settings = Settings::resolve(common, None)?;
    let spec = load_structure(&common.structure)?;
    let stream = load_sensor_stream(&common.sensors)?;
    let connectivity = build_connectivity(&spec);
    let refreshes = settings.expected_refreshes();

    // Restart k reseeds the initial pose with base seed + k; everything
    // else, including the sensor stream, is shared.
    let mut results: Vec<Option<Result<(EstimationTrace, NodeSet), CliError>>> =
        (0..runs).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut pending = Vec::with_capacity(runs);
        for k in 0..runs {
            let config = settings.to_config(None, 0);
            let samples = stream.samples.clone();
            let spec = &spec;
            let connectivity = &connectivity;
            pending.push(scope.spawn(move || {
                let config = tenshape_core::estimator::EstimatorConfig {
                    seed: config.seed.wrapping_add(k as u64),
                    ..config
                };
                let mut source = StreamAngleSource::new(
                    samples,
                    spec.strut_count(),
                    FilterParams::default(),
                    refreshes,
                );
                let mut estimator = Estimator::new(spec, connectivity, config)?;
                let trace = estimator.run(&mut source)?;
                let nodes = nodes_from_pose(spec, &trace.final_pose)?;
                Ok((trace, nodes))
            }));
        }
        for (k, handle) in pending.into_iter().enumerate() {
            results[k] = Some(handle.join().expect("restart worker panicked"));
        }
    });
    let mut traces = Vec::with_capacity(runs);
    for (k, slot) in results.into_iter().enumerate() {
        let (trace, nodes) = slot
            .expect("every restart produces a result")
            .map_err(|e| match e {
                CliError::Diverged(msg) => CliError::Diverged(format!("restart {k}: {msg}")),
                other => other,
            })?;
        traces.push((trace, nodes));
    }

    let out = &common.out_dir;
    for (k, (trace, nodes)) in traces.iter().enumerate() {
        let run_dir = out.join("runs").join(k.to_string());
        fs::create_dir_all(&run_dir).map_err(|e| CliError::io_at(&run_dir, e))?;
        let trace_path = run_dir.join(TRACE_FILE);
        let file = fs::File::create(&trace_path).map_err(|e| CliError::io_at(&trace_path, e))?;
        trace
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| CliError::io_at(&trace_path, e))?;
        write_frame_file(&run_dir.join("final.csv"), nodes)?;
    }

    let energies: Vec<f64> = traces.iter().map(|(t, _)| t.final_energy()).collect();
    let stats = EnergyStats::from(&energies);
    let (mae_mean, mae_max) = pairwise_mae(&traces)?;

    let mut report = Report::new();
    report.push("command", "restarts");
    report.push(
        "run_id",
        format!(
            "restarts-{}-seed{}",
            spec.name.as_deref().unwrap_or("unnamed"),
            settings.seed
        ),
    );
    push_inputs(&mut report, &common.structure, &spec, &common.sensors, &stream);
    settings.echo(&mut report, None, 0);
    report.push("restarts.count", runs);
    report.push("restarts.energy.mean", stats.mean);
    report.push("restarts.energy.sigma", stats.sigma);
    report.push("restarts.energy.cv", stats.cv);
    report.push("restarts.energy.min", stats.min);
    report.push("restarts.energy.max", stats.max);
    report.push("restarts.mae.mean", mae_mean);
    report.push("restarts.mae.max", mae_max);
    for (k, (trace, nodes)) in traces.iter().enumerate() {
        report.push(format!("run.{k}.seed"), settings.seed.wrapping_add(k as u64));
        report.push(format!("run.{k}.energy.final"), trace.final_energy());
        report.push(
            format!("run.{k}.converged_at"),
            trace
                .converged_at
                .map_or("none".to_string(), |s| s.to_string()),
        );
        let wall = wall_stats(trace.steps.iter().map(|r| r.wall_seconds));
        report.push(format!("run.{k}.wall.step_mean_ms"), wall.step_mean_ms);
        report.push(format!("run.{k}.trace"), format!("runs/{k}/trace.csv"));
        report.push(format!("run.{k}.final"), format!("runs/{k}/final.csv"));
        // Length metric per run, for fixtures that declare markers.
        let mut sub = Report::new();
        push_length_and_error(&mut sub, &spec, nodes, None)?;
        for (key, value) in sub.entries() {
            report.push(format!("run.{k}.{key}"), value);
        }
    }
    report.write_to(&out.join(REPORT_FILE))?;

    println!(
        "restarts: {runs} runs, energy mean {} sigma {} (cv {})",
        stats.mean, stats.sigma, stats.cv
    );
    println!("pairwise aligned MAE mean {mae_mean} max {mae_max}");
    println!("report: {}", out.join(REPORT_FILE).display());
    Ok(())
}

pub struct EnergyStats {
    pub mean: f64,
    pub sigma: f64,
    pub cv: f64,
    pub min: f64,
    pub max: f64,
}

impl EnergyStats {
    pub fn from(energies: &[f64]) -> EnergyStats {
        let n = energies.len() as f64;
        let mean = energies.iter().sum::<f64>() / n;
        let var = energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sigma = var.sqrt();
        EnergyStats {
            mean,
            sigma,
            cv: sigma / mean.abs().max(f64::MIN_POSITIVE),
            min: energies.iter().copied().fold(f64::INFINITY, f64::min),
            max: energies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Mean and max of the aligned node MAE over all run pairs.
pub fn pairwise_mae(traces: &[(EstimationTrace, NodeSet)]) -> Result<(f64, f64), CliError> {
    pairwise_mae_nodes(traces.iter().map(|(_, n)| n).collect::<Vec<_>>().as_slice())
}

pub fn pairwise_mae_nodes(nodes: &[&NodeSet]) -> Result<(f64, f64), CliError> {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut count = 0usize;
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let mae = align_poses(nodes[j], nodes[i])?.mae;
            sum += mae;
            max = max.max(mae);
            count += 1;
        }
    }
    Ok((sum / count.max(1) as f64, max))
}
