//! Trace, heatmap, and frame emission plus the readers verify uses to load
//! them back. Floats are written with the shortest round-tripping form, so
//! reading a file back reproduces the exact values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tenshape_core::estimator::EstimationTrace;
use tenshape_core::kinematics::NodeSet;
use tenshape_core::Vec3;

use crate::error::CliError;

pub const TRACE_FILE: &str = "trace.csv";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const FRAMES_DIR: &str = "frames";

pub fn write_trace(dir: &Path, trace: &EstimationTrace) -> Result<(), CliError> {
    let path = dir.join(TRACE_FILE);
    let file = fs::File::create(&path).map_err(|e| CliError::io_at(&path, e))?;
    trace
        .write_csv(BufWriter::new(file))
        .map_err(|e| CliError::io_at(&path, e))
}

pub fn write_heatmap(dir: &Path, trace: &EstimationTrace) -> Result<(), CliError> {
    let path = dir.join(HEATMAP_FILE);
    let file = fs::File::create(&path).map_err(|e| CliError::io_at(&path, e))?;
    trace
        .write_heatmap_csv(BufWriter::new(file))
        .map_err(|e| CliError::io_at(&path, e))
}

/// Write one frame per node snapshot under `dir/frames`, plus an index
/// mapping frame number to the step it was taken after. Frame 0 is always
/// the initial pose, marked `init` in the index.
pub fn write_frames(
    dir: &Path,
    initial: &NodeSet,
    snapshots: &[(usize, NodeSet)],
) -> Result<usize, CliError> {
    let frames = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames).map_err(|e| CliError::io_at(&frames, e))?;
    let index_path = frames.join("index.csv");
    let mut index = String::from("frame,step\n");
    write_frame_file(&frames.join("0000.csv"), initial)?;
    index.push_str("0,init\n");
    for (i, (step, nodes)) in snapshots.iter().enumerate() {
        let name = format!("{:04}.csv", i + 1);
        write_frame_file(&frames.join(&name), nodes)?;
        index.push_str(&format!("{},{step}\n", i + 1));
    }
    fs::write(&index_path, index).map_err(|e| CliError::io_at(&index_path, e))?;
    Ok(snapshots.len() + 1)
}

pub fn write_frame_file(path: &Path, nodes: &NodeSet) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| CliError::io_at(path, e);
    writeln!(w, "id,x,y,z").map_err(io)?;
    for (id, p) in nodes.positions.iter().enumerate() {
        writeln!(w, "{id},{},{},{}", p.x, p.y, p.z).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Read an `id,x,y,z` file back into a node set. Rows may arrive in any
/// order but the ids must form a complete 0..n range.
pub fn read_frame_file(path: &Path) -> Result<NodeSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    let bad = |line: &str, why: &str| {
        CliError::Io(format!("{}: bad node row {line:?}: {why}", path.display()))
    };
    let mut rows: Vec<(usize, Vec3)> = Vec::new();
    for line in text.lines().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(line, "expected id,x,y,z"));
        }
        let id: usize = fields[0].parse().map_err(|_| bad(line, "bad id"))?;
        let mut coords = [0.0f64; 3];
        for (slot, raw) in coords.iter_mut().zip(&fields[1..]) {
            *slot = raw.parse().map_err(|_| bad(line, "bad coordinate"))?;
        }
        rows.push((id, Vec3::new(coords[0], coords[1], coords[2])));
    }
    rows.sort_by_key(|(id, _)| *id);
    for (want, (id, _)) in rows.iter().enumerate() {
        if *id != want {
            return Err(CliError::Io(format!(
                "{}: node ids are not a complete 0..{} range",
                path.display(),
                rows.len()
            )));
        }
    }
    Ok(NodeSet {
        positions: rows.into_iter().map(|(_, p)| p).collect(),
    })
}

/// Frame paths listed by a frames index, in frame order, with the recorded
/// step labels.
pub fn read_frame_index(dir: &Path) -> Result<Vec<(PathBuf, String)>, CliError> {
    let index_path = dir.join(FRAMES_DIR).join("index.csv");
    let text = fs::read_to_string(&index_path).map_err(|e| CliError::io_at(&index_path, e))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (frame, step) = line.split_once(',').ok_or_else(|| {
            CliError::Io(format!("{}: bad index row {line:?}", index_path.display()))
        })?;
        let frame: usize = frame.parse().map_err(|_| {
            CliError::Io(format!("{}: bad frame number {frame:?}", index_path.display()))
        })?;
        out.push((
            dir.join(FRAMES_DIR).join(format!("{frame:04}.csv")),
            step.to_string(),
        ));
    }
    Ok(out)
}

/// One parsed trace row; per-strut columns are kept raw since only the
/// leading four are recomputed.
pub struct TraceRow {
    pub step: usize,
    pub energy: f64,
    pub grad_p_norm: f64,
    pub grad_theta_norm: f64,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header.starts_with("step,energy,grad_p_norm,grad_theta_norm") => {}
        _ => {
            return Err(CliError::Mismatch(format!(
                "{}: missing trace header",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |what: &str| {
            fields
                .next()
                .ok_or_else(|| CliError::Mismatch(format!("{}: row missing {what}", path.display())))
        };
        let step = next("step")?
            .parse()
            .map_err(|_| CliError::Mismatch(format!("{}: bad step column", path.display())))?;
        let mut nums = [0.0f64; 3];
        for (slot, what) in nums.iter_mut().zip(["energy", "grad_p_norm", "grad_theta_norm"]) {
            *slot = next(what)?.parse().map_err(|_| {
                CliError::Mismatch(format!("{}: bad {what} column", path.display()))
            })?;
        }
        rows.push(TraceRow {
            step,
            energy: nums[0],
            grad_p_norm: nums[1],
            grad_theta_norm: nums[2],
        });
    }
    Ok(rows)
}
