//! Shared implementation of the estimate and perturb subcommands. Perturb
//! is the same pipeline pointed at a time-varying stream; it only defaults
//! to snapshotting a frame at every sensor refresh so the tracked shape can
//! be replayed.

use std::fs;
use std::path::Path;

use tenshape_core::energy::evaluate_energy;
use tenshape_core::estimator::{
    align_poses, initialize_pose, AngleSource, EstimationTrace, Estimator, StrutGradientRow,
};
use tenshape_core::kinematics::{manipulator_length, nodes_from_pose, NodeSet};
use tenshape_core::model::{build_connectivity, parse_structure, StructureSpec};
use tenshape_core::sensing::{FilterParams, SensorStream, StreamAngleSource};

use crate::error::CliError;
use crate::outputs::{
    read_frame_file, write_frames, write_heatmap, write_trace, HEATMAP_FILE, REPORT_FILE,
    TRACE_FILE,
};
use crate::report::{wall_stats, Report};
use crate::settings::{CommonArgs, RunExtras, Settings};
use crate::sources::load_sensor_stream;

pub fn run(command: &'static str, common: &CommonArgs, extras: &RunExtras) -> Result<(), CliError> {
    let settings = Settings::resolve(common, Some(extras))?;

    // Read every input before creating anything, so a missing file leaves
    // no partial output directory behind.
    let spec = load_structure(&common.structure)?;
    let truth = extras
        .truth
        .as_ref()
        .map(|path| read_frame_file(path))
        .transpose()?;
    if let Some(truth) = &truth {
        if truth.node_count() != spec.node_count() {
            return Err(CliError::Config(format!(
                "truth file has {} nodes but the structure has {}",
                truth.node_count(),
                spec.node_count()
            )));
        }
    }
    let stream = load_sensor_stream(&common.sensors)?;

    let snapshot = settings.effective_snapshot(command == "perturb");
    let heatmap = settings.effective_heatmap();
    let config = settings.to_config(snapshot, heatmap);
    let connectivity = build_connectivity(&spec);

    // The initial pose is re-derived with a throwaway angle source so the
    // run itself still sees the stream from its beginning.
    let refreshes = settings.expected_refreshes();
    let angle_source = |s: &SensorStream| {
        StreamAngleSource::new(
            s.samples.clone(),
            spec.strut_count(),
            FilterParams::default(),
            refreshes,
        )
    };
    let first_angles = angle_source(&stream)
        .angles()
        .map_err(|m| CliError::Io(format!("sensor stream: {m}")))?;
    let initial_pose = initialize_pose(&spec, &config, &first_angles)?;
    let initial_nodes = nodes_from_pose(&spec, &initial_pose)?;

    let mut source = angle_source(&stream);
    let mut estimator = Estimator::new(&spec, &connectivity, config)?;
    let trace = estimator.run(&mut source)?;

    let out = &common.out_dir;
    fs::create_dir_all(out).map_err(|e| CliError::io_at(out, e))?;
    write_trace(out, &trace)?;
    if heatmap > 0 {
        write_heatmap(out, &trace)?;
    }
    let frame_count = write_frames(out, &initial_nodes, &trace.snapshots)?;

    let mut report = Report::new();
    report.push("command", command);
    report.push(
        "run_id",
        format!(
            "{command}-{}-seed{}",
            spec.name.as_deref().unwrap_or("unnamed"),
            settings.seed
        ),
    );
    push_inputs(&mut report, &common.structure, &spec, &common.sensors, &stream);
    if let Some(path) = &extras.truth {
        report.push("truth", path.display());
    }
    settings.echo(&mut report, snapshot, heatmap);
    push_outcome(&mut report, &trace);

    let final_nodes = nodes_from_pose(&spec, &trace.final_pose)?;
    push_length_and_error(&mut report, &spec, &final_nodes, truth.as_ref())?;
    if let Some((step, rows)) = last_per_strut(&trace) {
        push_heatmap_table(&mut report, step, rows);
    }
    report.push("files.trace", TRACE_FILE);
    if heatmap > 0 {
        report.push("files.heatmap", HEATMAP_FILE);
    }
    report.push("files.frames", "frames");
    report.push("frames.count", frame_count);
    report.write_to(&out.join(REPORT_FILE))?;

    println!(
        "{command}: {} steps, energy {} -> {}, {}",
        trace.steps.len(),
        trace.initial_energy,
        trace.final_energy(),
        match trace.converged_at {
            Some(s) => format!("converged at step {s}"),
            None => "budget exhausted".to_string(),
        }
    );
    println!("report: {}", out.join(REPORT_FILE).display());
    Ok(())
}

pub fn load_structure(path: &Path) -> Result<StructureSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    parse_structure(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn push_inputs(
    report: &mut Report,
    structure: &Path,
    spec: &StructureSpec,
    sensors: &str,
    stream: &SensorStream,
) {
    report.push("structure", structure.display());
    report.push("structure_name", spec.name.as_deref().unwrap_or("unnamed"));
    report.push("struts", spec.strut_count());
    report.push("nodes", spec.node_count());
    report.push("cables", spec.cable_count());
    report.push("sensors", sensors);
    report.push("sensor.samples", stream.samples.len());
    report.push("sensor.malformed", stream.malformed);
    report.push("sensor.out_of_order", stream.out_of_order);
}

pub fn push_outcome(report: &mut Report, trace: &EstimationTrace) {
    report.push("energy.initial", trace.initial_energy);
    report.push("energy.peak", trace.peak_energy());
    report.push("energy.final", trace.final_energy());
    report.push("steps_run", trace.steps.len());
    report.push(
        "converged_at",
        trace
            .converged_at
            .map_or("none".to_string(), |s| s.to_string()),
    );
    let wall = wall_stats(trace.steps.iter().map(|r| r.wall_seconds));
    report.push("wall.total_s", wall.total_s);
    report.push("wall.step_mean_ms", wall.step_mean_ms);
    report.push("wall.step_median_ms", wall.step_median_ms);
    report.push("wall.block20_mean_ms", wall.block20_mean_ms);
}

/// Report the length metric when markers exist, and errors against the true
/// node positions when the caller supplied them.
pub fn push_length_and_error(
    report: &mut Report,
    spec: &StructureSpec,
    final_nodes: &NodeSet,
    truth: Option<&NodeSet>,
) -> Result<(), CliError> {
    if let Some(markers) = &spec.length_markers {
        let d = manipulator_length(final_nodes, &markers.top, &markers.base)
            .map_err(|e| CliError::Config(e.to_string()))?;
        report.push("length.d", d);
        if let Some(truth) = truth {
            let d_truth = manipulator_length(truth, &markers.top, &markers.base)
                .map_err(|e| CliError::Config(e.to_string()))?;
            report.push("length.d_truth", d_truth);
            report.push("length.error_percent", 100.0 * (d - d_truth) / d_truth);
        }
    }
    if let Some(truth) = truth {
        let alignment = align_poses(final_nodes, truth)?;
        report.push("align.mae", alignment.mae);
        report.push("align.reflected", alignment.reflected);
    }
    Ok(())
}

fn last_per_strut(trace: &EstimationTrace) -> Option<(usize, &[StrutGradientRow])> {
    trace
        .steps
        .iter()
        .rev()
        .find_map(|r| r.per_strut.as_ref().map(|rows| (r.step, rows.as_slice())))
}

fn push_heatmap_table(report: &mut Report, step: usize, rows: &[StrutGradientRow]) {
    report.push("heatmap.step", step);
    for (i, row) in rows.iter().enumerate() {
        report.push(
            format!("heatmap.s{:02}", i + 1),
            format!("{},{},{},{}", row.x, row.y, row.z, row.yaw),
        );
    }
}

/// Recompute the energy of an exported frame; verify uses this to tie the
/// report numbers back to the emitted node positions.
pub fn frame_energy(spec: &StructureSpec, nodes: &NodeSet) -> f64 {
    let connectivity = build_connectivity(spec);
    evaluate_energy(spec, &connectivity, nodes).total
}
