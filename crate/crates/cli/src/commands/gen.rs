//! Fixture generation: structure files, virtual IMU streams, and the true
//! node positions the other subcommands can score against.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use tenshape_core::model::serialize_structure;
use tenshape_core::synth::{
    emit_imu_stream, make_prism, make_tm40_default, Motion, NoiseModel, SyntheticScenario,
};
use tenshape_core::sensing::write_sensor_stream;

use crate::error::CliError;
use crate::outputs::{write_frame_file, REPORT_FILE};
use crate::report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureKind {
    /// Single-layer prism, 3 to 6 struts.
    Prism,
    /// The 20-strut five-module stack.
    Tm40,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MotionKind {
    Static,
    /// All struts tilt together on a sine.
    Sway,
    /// Tilt grows with height, so the tip swings most.
    TipBend,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Which fixture to generate.
    #[arg(value_enum)]
    pub fixture: FixtureKind,
    /// Directory for the structure, stream, and truth files.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Prism strut count (prism only).
    #[arg(long, default_value_t = 3)]
    pub struts: usize,
    /// Prism ring radius in meters (prism only).
    #[arg(long, default_value_t = 0.2)]
    pub radius: f64,
    /// Prism height in meters (prism only).
    #[arg(long, default_value_t = 0.35)]
    pub height: f64,
    /// Prism twist in radians; defaults to the balanced pi/2 + pi/n.
    #[arg(long)]
    pub twist: Option<f64>,
    /// Overlaid inclination trajectory.
    #[arg(long, value_enum, default_value_t = MotionKind::Static)]
    pub motion: MotionKind,
    /// Motion amplitude in radians.
    #[arg(long, default_value_t = 0.1)]
    pub amplitude: f64,
    /// Sway frequency in Hz.
    #[arg(long, default_value_t = 0.5)]
    pub frequency: f64,
    /// Tip-bend period in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub period: f64,
    /// Accelerometer noise sigma in m/s^2.
    #[arg(long, default_value_t = 0.0)]
    pub noise_accel: f64,
    /// Gyroscope noise sigma in rad/s.
    #[arg(long, default_value_t = 0.0)]
    pub noise_gyro: f64,
    /// Sample rate per strut in Hz.
    #[arg(long, default_value_t = 80.0)]
    pub rate: f64,
    /// Stream duration in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub duration: f64,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &GenArgs) -> Result<(), CliError> {
    for (name, value) in [
        ("--rate", args.rate),
        ("--amplitude", args.amplitude),
        ("--frequency", args.frequency),
        ("--period", args.period),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(CliError::Config(format!(
                "{name} must be positive and finite, got {value}"
            )));
        }
    }
    if !(args.duration >= 0.0 && args.duration.is_finite()) {
        return Err(CliError::Config(format!(
            "--duration must be non-negative, got {}",
            args.duration
        )));
    }
    for (name, value) in [("--noise-accel", args.noise_accel), ("--noise-gyro", args.noise_gyro)] {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(CliError::Config(format!(
                "{name} must be non-negative, got {value}"
            )));
        }
    }

    let scenario = build_scenario(args)?;
    let spec = &scenario.spec;
    let name = spec.name.clone().unwrap_or_else(|| "structure".to_string());

    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| CliError::io_at(out, e))?;
    let structure_file = format!("{name}.structure");
    let structure_path = out.join(&structure_file);
    fs::write(&structure_path, serialize_structure(spec))
        .map_err(|e| CliError::io_at(&structure_path, e))?;

    let samples = emit_imu_stream(&scenario, args.rate, args.duration);
    let stream_path = out.join("stream.csv");
    let file = fs::File::create(&stream_path).map_err(|e| CliError::io_at(&stream_path, e))?;
    write_sensor_stream(std::io::BufWriter::new(file), &samples)
        .map_err(|e| CliError::io_at(&stream_path, e))?;

    write_frame_file(&out.join("truth.csv"), &scenario.truth_nodes)?;

    let mut report = Report::new();
    report.push("command", "gen");
    report.push("run_id", format!("gen-{name}-seed{}", args.seed));
    report.push("fixture", &name);
    report.push("struts", spec.strut_count());
    report.push("nodes", spec.node_count());
    report.push("cables", spec.cable_count());
    report.push("files.structure", &structure_file);
    report.push("files.stream", "stream.csv");
    report.push("files.truth", "truth.csv");
    report.push("stream.samples", samples.len());
    report.push("stream.rate", args.rate);
    report.push("stream.duration", args.duration);
    report.push("stream.motion", motion_name(args.motion));
    report.push("stream.seed", args.seed);
    if let Some(d) = scenario.truth_length() {
        report.push("truth.length", d);
    }
    report.write_to(&out.join(REPORT_FILE))?;

    println!(
        "gen: {name} ({} struts), {} samples at {} Hz",
        spec.strut_count(),
        samples.len(),
        args.rate
    );
    println!("wrote {}", structure_path.display());
    Ok(())
}

fn build_scenario(args: &GenArgs) -> Result<SyntheticScenario, CliError> {
    let base = match args.fixture {
        FixtureKind::Prism => {
            let twist = args
                .twist
                .unwrap_or(PI / 2.0 + PI / args.struts.max(1) as f64);
            make_prism(args.struts, args.radius, args.height, twist)
        }
        FixtureKind::Tm40 => make_tm40_default(),
    }
    .map_err(|e| CliError::Config(e.to_string()))?;
    let motion = match args.motion {
        MotionKind::Static => Motion::Static,
        MotionKind::Sway => Motion::Sway {
            amplitude: args.amplitude,
            frequency: args.frequency,
        },
        MotionKind::TipBend => Motion::TipBend {
            amplitude: args.amplitude,
            period: args.period,
        },
    };
    Ok(base
        .with_motion(motion)
        .with_noise(NoiseModel {
            accel_sigma: args.noise_accel,
            gyro_sigma: args.noise_gyro,
        })
        .with_seed(args.seed))
}

fn motion_name(kind: MotionKind) -> &'static str {
    match kind {
        MotionKind::Static => "static",
        MotionKind::Sway => "sway",
        MotionKind::TipBend => "tip-bend",
    }
}
