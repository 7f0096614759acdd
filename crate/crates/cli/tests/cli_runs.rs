//! The command-line harness end to end: exit codes, reproducibility,
//! sensor sources, report verification, and motion tracking.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread;
use std::time::Duration;

use tenshape_core::kinematics::{manipulator_length, nodes_from_pose, NodeSet};
use tenshape_core::synth::{make_tm40_default, Motion};
use tenshape_core::Vec3;

fn tenshape() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tenshape"))
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("process not killed by signal")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read_report(dir: &Path) -> HashMap<String, String> {
    let text = fs::read_to_string(dir.join("report.txt")).expect("report exists");
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (k, v) = l.split_once('=').expect("key=value line");
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn report_f64(report: &HashMap<String, String>, key: &str) -> f64 {
    report
        .get(key)
        .unwrap_or_else(|| panic!("report missing {key}"))
        .parse()
        .unwrap_or_else(|_| panic!("report {key} is not a number"))
}

/// Generate the static prism fixture into `dir` and return the structure
/// file path.
fn gen_prism(dir: &Path) -> PathBuf {
    let output = tenshape()
        .args(["gen", "prism", "--out-dir"])
        .arg(dir)
        .output()
        .unwrap();
    assert_eq!(code(&output), 0, "gen failed: {}", stderr_of(&output));
    let report = read_report(dir);
    dir.join(&report["files.structure"])
}

fn estimate_args(structure: &Path, sensors: &Path, out: &Path) -> Vec<String> {
    [
        "estimate",
        "--structure",
        structure.to_str().unwrap(),
        "--sensors",
        sensors.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn missing_inputs_exit_with_io_code_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");

    let output = tenshape()
        .args(estimate_args(
            &dir.path().join("nope.structure"),
            &dir.path().join("stream.csv"),
            &out,
        ))
        .output()
        .unwrap();
    assert_eq!(code(&output), 3, "stderr: {}", stderr_of(&output));
    assert!(stderr_of(&output).contains("nope.structure"));
    assert!(!out.exists(), "failed run must not leave an output directory");

    // Structure present but the sensor file missing is the same story.
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let output = tenshape()
        .args(estimate_args(&structure, &fixture.path().join("missing.csv"), &out))
        .output()
        .unwrap();
    assert_eq!(code(&output), 3, "stderr: {}", stderr_of(&output));
    assert!(!out.exists());
}

#[test]
fn invalid_settings_exit_with_config_code() {
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let stream = fixture.path().join("stream.csv");
    let out = fixture.path().join("run");

    // Learning rates must be positive; caught after parsing, before running.
    let mut args = estimate_args(&structure, &stream, &out);
    args.push("--alpha=-0.5".to_string());
    let output = tenshape().args(&args).output().unwrap();
    assert_eq!(code(&output), 2, "stderr: {}", stderr_of(&output));
    assert!(!out.exists());

    // Unknown config-file keys name the offending line.
    let config = fixture.path().join("settings.conf");
    fs::write(&config, "steps=500\nbogus=3\n").unwrap();
    let mut args = estimate_args(&structure, &stream, &out);
    args.push("--config".to_string());
    args.push(config.to_str().unwrap().to_string());
    let output = tenshape().args(&args).output().unwrap();
    assert_eq!(code(&output), 2);
    let err = stderr_of(&output);
    assert!(err.contains("bogus") && err.contains("2"), "stderr: {err}");

    // Bench refuses statistically meaningless step counts.
    let output = tenshape()
        .args(["bench", "--steps", "50", "--structure"])
        .arg(&structure)
        .output()
        .unwrap();
    assert_eq!(code(&output), 2);

    // Gen validates scenario parameters before building anything.
    let output = tenshape()
        .args(["gen", "prism", "--rate", "0", "--out-dir"])
        .arg(fixture.path().join("fx2"))
        .output()
        .unwrap();
    assert_eq!(code(&output), 2);
}

#[test]
fn identical_seeds_reproduce_traces_bit_for_bit() {
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let stream = fixture.path().join("stream.csv");

    let run = |name: &str, seed: &str| -> PathBuf {
        let out = fixture.path().join(name);
        let mut args = estimate_args(&structure, &stream, &out);
        args.extend(
            ["--steps", "2000", "--init", "random", "--seed", seed]
                .iter()
                .map(|s| s.to_string()),
        );
        let output = tenshape().args(&args).output().unwrap();
        assert_eq!(code(&output), 0, "stderr: {}", stderr_of(&output));
        out
    };

    let first = run("a", "5");
    let second = run("b", "5");
    let other = run("c", "6");
    let trace_a = fs::read(first.join("trace.csv")).unwrap();
    let trace_b = fs::read(second.join("trace.csv")).unwrap();
    let trace_c = fs::read(other.join("trace.csv")).unwrap();
    assert_eq!(trace_a, trace_b, "same seed must reproduce the trace exactly");
    assert_ne!(trace_a, trace_c, "a different seed must move a random start");
    // Final frames agree bitwise too.
    assert_eq!(
        fs::read(first.join("frames/0001.csv")).unwrap(),
        fs::read(second.join("frames/0001.csv")).unwrap()
    );
}

#[test]
fn restart_batches_are_reproducible_and_summarised() {
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let stream = fixture.path().join("stream.csv");

    let run = |name: &str| -> PathBuf {
        let out = fixture.path().join(name);
        let output = tenshape()
            .args([
                "restarts",
                "--structure",
                structure.to_str().unwrap(),
                "--sensors",
                stream.to_str().unwrap(),
                "--runs",
                "3",
                "--seed",
                "4",
                "--steps",
                "2000",
                "--init",
                "random",
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(code(&output), 0, "stderr: {}", stderr_of(&output));
        out
    };

    let first = run("batch1");
    let second = run("batch2");
    for k in 0..3 {
        assert_eq!(
            fs::read(first.join(format!("runs/{k}/trace.csv"))).unwrap(),
            fs::read(second.join(format!("runs/{k}/trace.csv"))).unwrap(),
            "restart {k} must reproduce bit for bit"
        );
    }
    let report = read_report(&first);
    for key in [
        "restarts.energy.mean",
        "restarts.energy.cv",
        "restarts.mae.max",
        "run.0.energy.final",
        "run.2.seed",
    ] {
        assert!(report.contains_key(key), "report missing {key}");
    }
    let verify = tenshape().args(["verify", "--out-dir"]).arg(&first).output().unwrap();
    assert_eq!(code(&verify), 0, "stderr: {}", stderr_of(&verify));
}

#[test]
fn static_stream_estimate_recovers_truth_and_verifies() {
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let out = fixture.path().join("run");
    let mut args = estimate_args(&structure, &fixture.path().join("stream.csv"), &out);
    args.extend(
        [
            "--steps", "200000", "--alpha", "0.005", "--beta", "0.005", "--truth",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    args.push(fixture.path().join("truth.csv").to_str().unwrap().to_string());
    let output = tenshape().args(&args).output().unwrap();
    assert_eq!(code(&output), 0, "stderr: {}", stderr_of(&output));

    let report = read_report(&out);
    assert_ne!(report["converged_at"], "none", "static run should converge");
    assert!(report_f64(&report, "align.mae") < 1e-3);
    assert!(report_f64(&report, "length.error_percent").abs() < 0.5);

    let verify = tenshape().args(["verify", "--out-dir"]).arg(&out).output().unwrap();
    assert_eq!(code(&verify), 0, "stderr: {}", stderr_of(&verify));
}

#[test]
fn perturb_on_a_static_stream_matches_estimate() {
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let stream = fixture.path().join("stream.csv");

    let run = |command: &str| -> Vec<u8> {
        let out = fixture.path().join(command);
        let output = tenshape()
            .args([
                command,
                "--structure",
                structure.to_str().unwrap(),
                "--sensors",
                stream.to_str().unwrap(),
                "--steps",
                "3000",
                "--snapshot-every",
                "500",
                "--out-dir",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_eq!(code(&output), 0, "{command} stderr: {}", stderr_of(&output));
        fs::read(out.join("trace.csv")).unwrap()
    };

    // Perturb differs from estimate only in snapshot defaults; with the
    // interval pinned the descent is the same computation.
    assert_eq!(run("estimate"), run("perturb"));
}

#[test]
fn tampered_reports_fail_verification() {
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let out = fixture.path().join("run");
    let mut args = estimate_args(&structure, &fixture.path().join("stream.csv"), &out);
    args.extend(["--steps", "300"].iter().map(|s| s.to_string()));
    let output = tenshape().args(&args).output().unwrap();
    assert_eq!(code(&output), 0, "stderr: {}", stderr_of(&output));

    let verify = tenshape().args(["verify", "--out-dir"]).arg(&out).output().unwrap();
    assert_eq!(code(&verify), 0, "clean run must verify: {}", stderr_of(&verify));

    let report_path = out.join("report.txt");
    let tampered: String = fs::read_to_string(&report_path)
        .unwrap()
        .lines()
        .map(|line| {
            if let Some(value) = line.strip_prefix("energy.final=") {
                let bumped: f64 = value.parse::<f64>().unwrap() + 0.125;
                format!("energy.final={bumped}\n")
            } else {
                format!("{line}\n")
            }
        })
        .collect();
    fs::write(&report_path, tampered).unwrap();

    let verify = tenshape().args(["verify", "--out-dir"]).arg(&out).output().unwrap();
    assert_eq!(code(&verify), 5, "tampered energy must be caught");
}

#[test]
fn tcp_stream_matches_file_input() {
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let stream = fixture.path().join("stream.csv");

    let file_out = fixture.path().join("from-file");
    let mut args = estimate_args(&structure, &stream, &file_out);
    args.extend(["--steps", "2000"].iter().map(|s| s.to_string()));
    let output = tenshape().args(&args).output().unwrap();
    assert_eq!(code(&output), 0, "stderr: {}", stderr_of(&output));

    // Grab a port the OS considers free, then hand it to the CLI to listen
    // on while a writer thread delivers the same stream bytes.
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let bytes = fs::read(&stream).unwrap();
    let writer = thread::spawn(move || {
        for _ in 0..200 {
            if let Ok(mut socket) = TcpStream::connect(("127.0.0.1", port)) {
                socket.write_all(&bytes).unwrap();
                return;
            }
            thread::sleep(Duration::from_millis(25));
        }
        panic!("estimate never started listening on {port}");
    });

    let tcp_out = fixture.path().join("from-tcp");
    let output = tenshape()
        .args([
            "estimate",
            "--structure",
            structure.to_str().unwrap(),
            "--sensors",
            &format!("tcp:{port}"),
            "--steps",
            "2000",
            "--out-dir",
            tcp_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    writer.join().unwrap();
    assert_eq!(code(&output), 0, "stderr: {}", stderr_of(&output));

    assert_eq!(
        fs::read(file_out.join("trace.csv")).unwrap(),
        fs::read(tcp_out.join("trace.csv")).unwrap(),
        "transport must not change the descent"
    );
}

#[test]
fn config_file_applies_under_flags() {
    let fixture = tempfile::tempdir().unwrap();
    let structure = gen_prism(fixture.path());
    let config = fixture.path().join("settings.conf");
    fs::write(&config, "# tuned defaults\nsteps=1500\nalpha=0.004\n").unwrap();

    let out = fixture.path().join("run");
    let mut args = estimate_args(&structure, &fixture.path().join("stream.csv"), &out);
    args.extend(["--config"].iter().map(|s| s.to_string()));
    args.push(config.to_str().unwrap().to_string());
    args.extend(["--steps", "800"].iter().map(|s| s.to_string()));
    let output = tenshape().args(&args).output().unwrap();
    assert_eq!(code(&output), 0, "stderr: {}", stderr_of(&output));

    let report = read_report(&out);
    assert_eq!(report["config.steps"], "800", "flag beats config file");
    assert_eq!(report["config.alpha"], "0.004", "config file beats default");
    assert_eq!(report["config.beta"], "0.001", "untouched keys keep defaults");
}

fn parse_frame(path: &Path) -> NodeSet {
    let text = fs::read_to_string(path).unwrap();
    let mut rows: Vec<(usize, Vec3)> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let fields: Vec<&str> = l.split(',').collect();
            (
                fields[0].parse().unwrap(),
                Vec3::new(
                    fields[1].parse().unwrap(),
                    fields[2].parse().unwrap(),
                    fields[3].parse().unwrap(),
                ),
            )
        })
        .collect();
    rows.sort_by_key(|(id, _)| *id);
    NodeSet {
        positions: rows.into_iter().map(|(_, p)| p).collect(),
    }
}

/// A slow tip-bend on the 20-strut stack, tracked live through perturb. The
/// recovered manipulator length must move in the same direction as the true
/// one at every sampled frame once the cold start has burned in, measuring
/// displacement against the frame nearest the trajectory's zero crossing so
/// the estimator's own length bias cancels.
#[test]
fn tip_bend_perturbation_tracks_the_truth_direction() {
    let amplitude = 0.15;
    let period = 8.0;
    let duration = 8.0;
    let steps = 160_000usize;
    let refresh = 2_000usize;

    let fixture = tempfile::tempdir().unwrap();
    let output = tenshape()
        .args([
            "gen",
            "tm40",
            "--motion",
            "tip-bend",
            "--amplitude",
            "0.15",
            "--period",
            "8",
            "--duration",
            "8",
            "--rate",
            "40",
            "--out-dir",
        ])
        .arg(fixture.path())
        .output()
        .unwrap();
    assert_eq!(code(&output), 0, "gen stderr: {}", stderr_of(&output));
    let gen_report = read_report(fixture.path());
    let structure = fixture.path().join(&gen_report["files.structure"]);

    let out = fixture.path().join("tracked");
    let output = tenshape()
        .args([
            "perturb",
            "--structure",
            structure.to_str().unwrap(),
            "--sensors",
            fixture.path().join("stream.csv").to_str().unwrap(),
            "--steps",
            &steps.to_string(),
            "--refresh",
            &refresh.to_string(),
            "--snapshot-every",
            &refresh.to_string(),
            "--alpha",
            "0.005",
            "--beta",
            "0.005",
            "--seed",
            "2",
            "--tol-p",
            "1e-12",
            "--tol-theta",
            "1e-12",
            "--heatmap-every",
            "0",
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&output), 0, "perturb stderr: {}", stderr_of(&output));

    // Rebuild the generating scenario to score against.
    let scenario = make_tm40_default()
        .unwrap()
        .with_motion(Motion::TipBend { amplitude, period });
    let markers = scenario.spec.length_markers.as_ref().unwrap().clone();
    let d_truth_at = |t: f64| {
        let nodes = nodes_from_pose(&scenario.spec, &scenario.pose_at(t)).unwrap();
        manipulator_length(&nodes, &markers.top, &markers.base).unwrap()
    };
    let d_rest = d_truth_at(0.0);

    // Each frame at step s reflects the stream slice up to
    // duration * (s / refresh + 1) / refreshes.
    let refreshes = 1 + (steps - 1) / refresh;
    let index = fs::read_to_string(out.join("frames/index.csv")).unwrap();
    let mut frames: Vec<(f64, f64)> = Vec::new();
    for line in index.lines().skip(1) {
        let (frame, step) = line.split_once(',').unwrap();
        if step == "init" {
            continue;
        }
        let step: usize = step.parse().unwrap();
        let t = (duration * (step / refresh + 1) as f64 / refreshes as f64).min(duration);
        let nodes = parse_frame(&out.join(format!("frames/{:04}.csv", frame.parse::<usize>().unwrap())));
        let d_est = manipulator_length(&nodes, &markers.top, &markers.base).unwrap();
        frames.push((t, d_est));
    }
    assert!(frames.len() >= refreshes - 1, "expected one frame per refresh");

    let reference = frames
        .iter()
        .min_by(|a, b| (a.0 - period / 2.0).abs().total_cmp(&(b.0 - period / 2.0).abs()))
        .copied()
        .unwrap();
    let peak = frames
        .iter()
        .map(|(t, _)| (d_truth_at(*t) - d_rest).abs())
        .fold(0.0f64, f64::max);
    assert!(peak > 0.01, "trajectory too shallow to score: peak {peak}");

    let mut checked = 0usize;
    for (t, d_est) in &frames {
        // First half is the cold-start burn-in; near the crossing the sign
        // is noise, so only clearly displaced instants count.
        let truth_disp = d_truth_at(*t) - d_rest;
        if *t <= period / 2.0 || truth_disp.abs() < 0.25 * peak {
            continue;
        }
        let est_disp = d_est - reference.1;
        assert_eq!(
            est_disp.signum(),
            truth_disp.signum(),
            "t {t:.2}: estimated displacement {est_disp:+.4} against truth {truth_disp:+.4}"
        );
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} frames qualified for the sign check");
}
