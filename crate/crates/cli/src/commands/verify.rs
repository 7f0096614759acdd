//! Re-derive every recomputable report number from the trace files it
//! references and fail on the first disagreement. Wall-clock entries are
//! exempt: traces deliberately carry no timing so identical runs stay
//! byte-identical, which makes timings unrecoverable by design.

use std::path::{Path, PathBuf};

use clap::Args;
use tenshape_core::estimator::align_poses;
use tenshape_core::kinematics::manipulator_length;
use tenshape_core::model::StructureSpec;
use tenshape_core::sensing::parse_sensor_stream;

use crate::commands::bench::TARGET_STEP_MS;
use crate::commands::restarts::{pairwise_mae_nodes, EnergyStats};
use crate::commands::run::{frame_energy, load_structure};
use crate::error::CliError;
use crate::outputs::{
    read_frame_file, read_frame_index, read_trace, TraceRow, HEATMAP_FILE, REPORT_FILE, TRACE_FILE,
};
use crate::report::Report;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Directory holding the report and its trace files.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Structure file override when the path recorded in the report is no
    /// longer reachable from the current directory.
    #[arg(long)]
    pub structure: Option<PathBuf>,
}

pub fn run(args: &VerifyArgs) -> Result<(), CliError> {
    let report = Report::read_from(&args.out_dir.join(REPORT_FILE))?;
    let mut checker = Checker::default();
    match report.require("command")? {
        "estimate" | "perturb" => verify_run(args, &report, &mut checker)?,
        "restarts" => verify_restarts(args, &report, &mut checker)?,
        "bench" => verify_bench(&report, &mut checker)?,
        "gen" => verify_gen(args, &report, &mut checker)?,
        other => {
            return Err(CliError::Mismatch(format!(
                "report has unknown command {other:?}"
            )))
        }
    }
    println!(
        "verified: {} checks against {}",
        checker.passed,
        args.out_dir.display()
    );
    Ok(())
}

/// Running tally of passed consistency checks; any failure aborts with a
/// mismatch error naming the offending report key.
#[derive(Default)]
struct Checker {
    passed: usize,
}

impl Checker {
    fn close(&mut self, key: &str, reported: f64, recomputed: f64) -> Result<(), CliError> {
        let scale = reported.abs().max(recomputed.abs()).max(1e-300);
        if (reported - recomputed).abs() > 1e-9 * scale {
            return Err(CliError::Mismatch(format!(
                "{key}: report says {reported}, trace files give {recomputed}"
            )));
        }
        self.passed += 1;
        Ok(())
    }

    fn equal<T: PartialEq + std::fmt::Display>(
        &mut self,
        key: &str,
        reported: T,
        recomputed: T,
    ) -> Result<(), CliError> {
        if reported != recomputed {
            return Err(CliError::Mismatch(format!(
                "{key}: report says {reported}, trace files give {recomputed}"
            )));
        }
        self.passed += 1;
        Ok(())
    }

    fn claim(&mut self, key: &str, holds: bool, detail: String) -> Result<(), CliError> {
        if !holds {
            return Err(CliError::Mismatch(format!("{key}: {detail}")));
        }
        self.passed += 1;
        Ok(())
    }
}

fn structure_for(args: &VerifyArgs, report: &Report) -> Result<StructureSpec, CliError> {
    let path = match &args.structure {
        Some(path) => path.clone(),
        None => PathBuf::from(report.require("structure").map_err(|_| {
            CliError::Mismatch("report records no structure path; pass --structure".to_string())
        })?),
    };
    load_structure(&path)
}

fn trace_tail<'a>(rows: &'a [TraceRow], path: &Path) -> Result<&'a TraceRow, CliError> {
    rows.last().ok_or_else(|| {
        CliError::Mismatch(format!("{}: trace has no steps", path.display()))
    })
}

fn verify_run(args: &VerifyArgs, report: &Report, checker: &mut Checker) -> Result<(), CliError> {
    let out = &args.out_dir;
    let spec = structure_for(args, report)?;
    let trace_path = out.join(TRACE_FILE);
    let rows = read_trace(&trace_path)?;
    let last = trace_tail(&rows, &trace_path)?;

    checker.equal("steps_run", report.require_usize("steps_run")?, rows.len())?;
    checker.close("energy.final", report.require_f64("energy.final")?, last.energy)?;

    let initial = report.require_f64("energy.initial")?;
    let peak = rows.iter().map(|r| r.energy).fold(initial, f64::max);
    checker.close("energy.peak", report.require_f64("energy.peak")?, peak)?;

    match report.require("converged_at")? {
        "none" => checker.claim(
            "converged_at",
            rows.len() == report.require_usize("config.steps")?,
            "run claims budget exhaustion but the trace stops early".to_string(),
        )?,
        step => {
            let step: usize = step.parse().map_err(|_| {
                CliError::Mismatch(format!("converged_at={step} is not an integer"))
            })?;
            checker.equal("converged_at", step, last.step)?;
            let tol_p = report.require_f64("config.tol_p")?;
            let tol_theta = report.require_f64("config.tol_theta")?;
            checker.claim(
                "converged_at",
                last.grad_p_norm < tol_p && last.grad_theta_norm < tol_theta,
                format!(
                    "final gradients ({}, {}) do not meet the tolerances ({tol_p}, {tol_theta})",
                    last.grad_p_norm, last.grad_theta_norm
                ),
            )?;
        }
    }

    let frames = read_frame_index(out)?;
    checker.equal("frames.count", report.require_usize("frames.count")?, frames.len())?;
    let (first_path, first_label) = frames.first().ok_or_else(|| {
        CliError::Mismatch("frames/index.csv lists no frames".to_string())
    })?;
    checker.claim(
        "frames",
        first_label == "init",
        format!("frame 0 is labelled {first_label:?}, expected init"),
    )?;
    let initial_nodes = read_frame_file(first_path)?;
    checker.close("energy.initial", initial, frame_energy(&spec, &initial_nodes))?;

    let (final_path, final_label) = frames.last().expect("non-empty checked above");
    let final_nodes = read_frame_file(final_path)?;
    checker.equal("frames.final_step", final_label.as_str(), &last.step.to_string())?;
    checker.close(
        "energy.final(frame)",
        report.require_f64("energy.final")?,
        frame_energy(&spec, &final_nodes),
    )?;

    if let Some(reported) = report.get("length.d") {
        let markers = spec.length_markers.as_ref().ok_or_else(|| {
            CliError::Mismatch("report has length.d but the structure has no markers".to_string())
        })?;
        let d = manipulator_length(&final_nodes, &markers.top, &markers.base)
            .map_err(|e| CliError::Mismatch(e.to_string()))?;
        let reported: f64 = reported
            .parse()
            .map_err(|_| CliError::Mismatch("length.d is not a number".to_string()))?;
        checker.close("length.d", reported, d)?;
        if let Some(truth_path) = report.get("truth") {
            let truth = read_frame_file(Path::new(truth_path))?;
            let d_truth = manipulator_length(&truth, &markers.top, &markers.base)
                .map_err(|e| CliError::Mismatch(e.to_string()))?;
            checker.close("length.d_truth", report.require_f64("length.d_truth")?, d_truth)?;
            checker.close(
                "length.error_percent",
                report.require_f64("length.error_percent")?,
                100.0 * (d - d_truth) / d_truth,
            )?;
            checker.close(
                "align.mae",
                report.require_f64("align.mae")?,
                align_poses(&final_nodes, &truth)?.mae,
            )?;
        }
    }

    if report.get("files.heatmap").is_some() {
        verify_heatmap_table(out, report, checker)?;
    }
    Ok(())
}

/// The report's per-strut gradient table must be the last block of the
/// emitted heatmap file, byte for byte.
fn verify_heatmap_table(
    out: &Path,
    report: &Report,
    checker: &mut Checker,
) -> Result<(), CliError> {
    let path = out.join(HEATMAP_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io_at(&path, e))?;
    let step = report.require_usize("heatmap.step")?;
    let prefix = format!("{step},");
    let block: Vec<&str> = text
        .lines()
        .skip(1)
        .filter(|line| line.starts_with(&prefix))
        .collect();
    checker.claim(
        "heatmap.step",
        !block.is_empty(),
        format!("heatmap.csv has no rows for step {step}"),
    )?;
    for (i, line) in block.iter().enumerate() {
        let key = format!("heatmap.s{:02}", i + 1);
        let reported = report.require(&key)?;
        let expected = format!("{step},{},{reported}", i + 1);
        checker.equal(&key, line.to_string(), expected)?;
    }
    Ok(())
}

fn verify_restarts(
    args: &VerifyArgs,
    report: &Report,
    checker: &mut Checker,
) -> Result<(), CliError> {
    let out = &args.out_dir;
    let spec = structure_for(args, report)?;
    let count = report.require_usize("restarts.count")?;
    let tol_p = report.require_f64("config.tol_p")?;
    let tol_theta = report.require_f64("config.tol_theta")?;
    let budget = report.require_usize("config.steps")?;

    let mut energies = Vec::with_capacity(count);
    let mut finals = Vec::with_capacity(count);
    for k in 0..count {
        let run_dir = out.join("runs").join(k.to_string());
        let trace_path = run_dir.join(TRACE_FILE);
        let rows = read_trace(&trace_path)?;
        let last = trace_tail(&rows, &trace_path)?;
        let key = format!("run.{k}.energy.final");
        checker.close(&key, report.require_f64(&key)?, last.energy)?;
        match report.require(&format!("run.{k}.converged_at"))? {
            "none" => checker.claim(
                &format!("run.{k}.converged_at"),
                rows.len() == budget,
                "claims budget exhaustion but the trace stops early".to_string(),
            )?,
            _ => checker.claim(
                &format!("run.{k}.converged_at"),
                last.grad_p_norm < tol_p && last.grad_theta_norm < tol_theta,
                "claims convergence the final gradients do not support".to_string(),
            )?,
        }
        energies.push(last.energy);
        let nodes = read_frame_file(&run_dir.join("final.csv"))?;
        if let Some(markers) = &spec.length_markers {
            let key = format!("run.{k}.length.d");
            if report.get(&key).is_some() {
                let d = manipulator_length(&nodes, &markers.top, &markers.base)
                    .map_err(|e| CliError::Mismatch(e.to_string()))?;
                checker.close(&key, report.require_f64(&key)?, d)?;
            }
        }
        finals.push(nodes);
    }

    let stats = EnergyStats::from(&energies);
    checker.close("restarts.energy.mean", report.require_f64("restarts.energy.mean")?, stats.mean)?;
    checker.close("restarts.energy.sigma", report.require_f64("restarts.energy.sigma")?, stats.sigma)?;
    checker.close("restarts.energy.cv", report.require_f64("restarts.energy.cv")?, stats.cv)?;
    checker.close("restarts.energy.min", report.require_f64("restarts.energy.min")?, stats.min)?;
    checker.close("restarts.energy.max", report.require_f64("restarts.energy.max")?, stats.max)?;

    let refs: Vec<&tenshape_core::kinematics::NodeSet> = finals.iter().collect();
    let (mae_mean, mae_max) = pairwise_mae_nodes(&refs)?;
    checker.close("restarts.mae.mean", report.require_f64("restarts.mae.mean")?, mae_mean)?;
    checker.close("restarts.mae.max", report.require_f64("restarts.mae.max")?, mae_max)?;
    Ok(())
}

fn verify_bench(report: &Report, checker: &mut Checker) -> Result<(), CliError> {
    let mean = report.require_f64("bench.step_mean_ms")?;
    let target = report.require_f64("bench.target_step_ms")?;
    checker.close("bench.target_step_ms", target, TARGET_STEP_MS)?;
    checker.equal(
        "bench.within_target",
        report.require("bench.within_target")?,
        if mean <= target { "true" } else { "false" },
    )?;
    checker.claim(
        "bench.steps_timed",
        report.require_usize("bench.steps_timed")? >= 100,
        "fewer than 100 timed steps".to_string(),
    )?;
    Ok(())
}

fn verify_gen(args: &VerifyArgs, report: &Report, checker: &mut Checker) -> Result<(), CliError> {
    let out = &args.out_dir;
    let structure_path = out.join(report.require("files.structure")?);
    let spec = load_structure(&structure_path)?;
    checker.equal("struts", report.require_usize("struts")?, spec.strut_count())?;
    checker.equal("nodes", report.require_usize("nodes")?, spec.node_count())?;
    checker.equal("cables", report.require_usize("cables")?, spec.cable_count())?;

    let stream_path = out.join(report.require("files.stream")?);
    let file = std::fs::File::open(&stream_path).map_err(|e| CliError::io_at(&stream_path, e))?;
    let stream = parse_sensor_stream(std::io::BufReader::new(file))
        .map_err(|e| CliError::Io(format!("{}: {e}", stream_path.display())))?;
    checker.equal("stream.samples", report.require_usize("stream.samples")?, stream.samples.len())?;
    checker.equal("stream.malformed", 0usize, stream.malformed)?;

    let truth = read_frame_file(&out.join(report.require("files.truth")?))?;
    checker.equal("truth nodes", spec.node_count(), truth.node_count())?;
    if let Some(reported) = report.get("truth.length") {
        let markers = spec.length_markers.as_ref().ok_or_else(|| {
            CliError::Mismatch("report has truth.length but no markers in structure".to_string())
        })?;
        let d = manipulator_length(&truth, &markers.top, &markers.base)
            .map_err(|e| CliError::Mismatch(e.to_string()))?;
        let reported: f64 = reported
            .parse()
            .map_err(|_| CliError::Mismatch("truth.length is not a number".to_string()))?;
        checker.close("truth.length", reported, d)?;
    }
    Ok(())
}
