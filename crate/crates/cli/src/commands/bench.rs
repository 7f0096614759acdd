//! Wall-clock timing of descent steps. One bench step is a full-batch
//! update of every strut, the unit the reference step-time target counts.

use std::f64::consts::FRAC_PI_3;
use std::path::PathBuf;

use clap::Args;
use tenshape_core::estimator::{
    Estimator, EstimatorConfig, FixedAngles, InitMode, Schedule, SweepMode,
};
use tenshape_core::model::build_connectivity;

use crate::commands::run::load_structure;
use crate::error::CliError;
use crate::report::{wall_stats, Report};
use crate::outputs::REPORT_FILE;

/// Reference per-step budget in milliseconds. Exceeding it is reported as a
/// warning, not a failure, since CI boxes vary widely.
pub const TARGET_STEP_MS: f64 = 7.36;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Structure description file.
    #[arg(long)]
    pub structure: PathBuf,
    /// Number of steps to time; at least 100.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Optional directory for a timing report.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    if args.steps < 100 {
        return Err(CliError::Config(format!(
            "bench needs at least 100 steps for stable statistics, got {}",
            args.steps
        )));
    }
    let spec = load_structure(&args.structure)?;
    let connectivity = build_connectivity(&spec);
    // Fixed mid-range inclinations; step cost does not depend on the values.
    let mut source = FixedAngles(vec![FRAC_PI_3; spec.strut_count()]);
    let config = EstimatorConfig {
        alpha: 1e-4,
        beta: 1e-4,
        max_steps: args.steps,
        // Never converge early: the point is to time exactly `steps` steps.
        tol_center: 1e-300,
        tol_yaw: 1e-300,
        schedule: Schedule::FullBatch,
        sweep: SweepMode::GaussSeidel,
        sensor_refresh_period: usize::MAX,
        init: InitMode::Collapsed,
        seed: 1,
        snapshot_every: None,
        per_strut_every: 0,
        ..EstimatorConfig::default()
    };
    let mut estimator = Estimator::new(&spec, &connectivity, config)?;
    let trace = estimator.run(&mut source)?;
    let wall = wall_stats(trace.steps.iter().map(|r| r.wall_seconds));

    let name = spec.name.as_deref().unwrap_or("unnamed");
    println!(
        "bench: {name}, {} struts, {} full-batch steps",
        spec.strut_count(),
        trace.steps.len()
    );
    println!(
        "per step: mean {:.4} ms, median {:.4} ms",
        wall.step_mean_ms, wall.step_median_ms
    );
    println!("per 20-step block: mean {:.4} ms", wall.block20_mean_ms);
    let within = wall.step_mean_ms <= TARGET_STEP_MS;
    println!(
        "target {TARGET_STEP_MS} ms per step: {}",
        if within { "within target" } else { "exceeded" }
    );
    if !within {
        eprintln!(
            "warning: mean step time {:.4} ms exceeds the {TARGET_STEP_MS} ms target",
            wall.step_mean_ms
        );
    }

    if let Some(out) = &args.out_dir {
        std::fs::create_dir_all(out).map_err(|e| CliError::io_at(out, e))?;
        let mut report = Report::new();
        report.push("command", "bench");
        report.push("run_id", format!("bench-{name}-{}steps", args.steps));
        report.push("structure", args.structure.display());
        report.push("structure_name", name);
        report.push("struts", spec.strut_count());
        report.push("bench.steps_timed", trace.steps.len());
        report.push("bench.schedule", "full-batch");
        report.push("bench.step_mean_ms", wall.step_mean_ms);
        report.push("bench.step_median_ms", wall.step_median_ms);
        report.push("bench.block20_mean_ms", wall.block20_mean_ms);
        report.push("bench.target_step_ms", TARGET_STEP_MS);
        report.push("bench.within_target", within);
        report.write_to(&out.join(REPORT_FILE))?;
        println!("report: {}", out.join(REPORT_FILE).display());
    }
    Ok(())
}
