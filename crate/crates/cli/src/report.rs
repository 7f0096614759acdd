//! Structured-text reports: ordered `key=value` lines, written next to the
//! traces they summarise and re-read by the verify subcommand.

use std::fmt::Display;
use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Report {
        Report::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Mismatch(format!("report is missing the {key} entry")))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, CliError> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| CliError::Mismatch(format!("report entry {key}={raw} is not a number")))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize, CliError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            CliError::Mismatch(format!("report entry {key}={raw} is not an integer"))
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn write_to(&self, path: &Path) -> Result<(), CliError> {
        let mut text = String::new();
        for (key, value) in &self.entries {
            text.push_str(key);
            text.push('=');
            text.push_str(value);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| CliError::io_at(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Report, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
        let mut report = Report::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                report.push(key, value);
            }
        }
        Ok(report)
    }
}

/// Wall-clock statistics over per-step timings, in milliseconds.
pub struct WallStats {
    pub total_s: f64,
    pub step_mean_ms: f64,
    pub step_median_ms: f64,
    /// Mean wall time of consecutive 20-step blocks.
    pub block20_mean_ms: f64,
}

pub fn wall_stats(step_seconds: impl Iterator<Item = f64>) -> WallStats {
    let mut times: Vec<f64> = step_seconds.collect();
    if times.is_empty() {
        return WallStats {
            total_s: 0.0,
            step_mean_ms: 0.0,
            step_median_ms: 0.0,
            block20_mean_ms: 0.0,
        };
    }
    let total: f64 = times.iter().sum();
    let mean = total / times.len() as f64;
    let blocks: Vec<f64> = times.chunks(20).map(|c| c.iter().sum()).collect();
    let block_mean = blocks.iter().sum::<f64>() / blocks.len() as f64;
    times.sort_by(|a, b| a.total_cmp(b));
    let median = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2.0
    };
    WallStats {
        total_s: total,
        step_mean_ms: mean * 1e3,
        step_median_ms: median * 1e3,
        block20_mean_ms: block_mean * 1e3,
    }
}
