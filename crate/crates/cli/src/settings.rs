//! Run settings with three-level precedence: command-line flags override
//! config-file entries, which override built-in defaults. The merged values
//! are echoed into every report so a run can be reproduced from its output.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use tenshape_core::estimator::{EstimatorConfig, InitMode, Schedule, SweepMode};

use crate::error::CliError;
use crate::report::Report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleChoice {
    /// One gradient evaluation updates every strut at once.
    FullBatch,
    /// Per-strut updates that read the freshest neighbour values.
    GaussSeidel,
    /// Per-strut updates against the pose frozen at sweep start.
    Jacobi,
}

impl ScheduleChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleChoice::FullBatch => "full-batch",
            ScheduleChoice::GaussSeidel => "gauss-seidel",
            ScheduleChoice::Jacobi => "jacobi",
        }
    }

    fn to_estimator(self) -> (Schedule, SweepMode) {
        match self {
            ScheduleChoice::FullBatch => (Schedule::FullBatch, SweepMode::GaussSeidel),
            ScheduleChoice::GaussSeidel => (Schedule::PerStrut, SweepMode::GaussSeidel),
            ScheduleChoice::Jacobi => (Schedule::PerStrut, SweepMode::Jacobi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitChoice {
    /// Centres packed in a small ball around the anchor.
    Collapsed,
    /// Centres scattered in a ball of twice the nominal structure length.
    Expanded,
    /// Centres uniform in a box of the nominal structure length.
    Random,
}

impl InitChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            InitChoice::Collapsed => "collapsed",
            InitChoice::Expanded => "expanded",
            InitChoice::Random => "random",
        }
    }

    fn to_estimator(self) -> InitMode {
        match self {
            InitChoice::Collapsed => InitMode::Collapsed,
            InitChoice::Expanded => InitMode::Expanded,
            InitChoice::Random => InitMode::Random,
        }
    }
}

/// Flags shared by every run-style subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Structure description file.
    #[arg(long)]
    pub structure: PathBuf,
    /// Sensor source: a CSV path, `-` for stdin, or `tcp:PORT`.
    #[arg(long)]
    pub sensors: String,
    /// Config file with one `key=value` per line; flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Descent step budget.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Centre learning rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Yaw learning rate.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Update schedule.
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleChoice>,
    /// Steps between sensor refreshes.
    #[arg(long)]
    pub refresh: Option<usize>,
    /// Initial pose distribution.
    #[arg(long, value_enum)]
    pub init: Option<InitChoice>,
    /// Seed for the initial pose.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the report and trace files.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Convergence tolerance on the centre gradient norm.
    #[arg(long = "tol-p")]
    pub tol_p: Option<f64>,
    /// Convergence tolerance on the yaw gradient norm.
    #[arg(long = "tol-theta")]
    pub tol_theta: Option<f64>,
}

/// Extra knobs for estimate and perturb runs.
#[derive(Debug, Args)]
pub struct RunExtras {
    /// Node snapshot interval in steps; 0 keeps only the final frame.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Per-strut gradient recording interval; 0 disables the heatmap.
    #[arg(long)]
    pub heatmap_every: Option<usize>,
    /// True node positions (`id,x,y,z` CSV) for error reporting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub steps: usize,
    pub alpha: f64,
    pub beta: f64,
    pub schedule: ScheduleChoice,
    pub refresh: usize,
    pub init: InitChoice,
    pub seed: u64,
    pub tol_p: f64,
    pub tol_theta: f64,
    /// None when neither flag nor config file set it.
    pub snapshot_every: Option<usize>,
    pub heatmap_every: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        let base = EstimatorConfig::default();
        Settings {
            steps: base.max_steps,
            alpha: base.alpha,
            beta: base.beta,
            schedule: ScheduleChoice::GaussSeidel,
            refresh: base.sensor_refresh_period,
            init: InitChoice::Collapsed,
            seed: base.seed,
            tol_p: base.tol_center,
            tol_theta: base.tol_yaw,
            snapshot_every: None,
            heatmap_every: None,
        }
    }
}

impl Settings {
    pub fn resolve(common: &CommonArgs, extras: Option<&RunExtras>) -> Result<Settings, CliError> {
        let mut settings = Settings::default();
        if let Some(path) = &common.config {
            settings.apply_file(path)?;
        }
        settings.apply_flags(common, extras);
        Ok(settings)
    }

    fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io_at(path, e))?;
        for (index, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{} line {}: expected key=value, got {line:?}",
                    path.display(),
                    index + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let context = |what: &str| {
                CliError::Config(format!(
                    "{} line {}: {key} must be {what}, got {value:?}",
                    path.display(),
                    index + 1
                ))
            };
            match key {
                "steps" => self.steps = value.parse().map_err(|_| context("an integer"))?,
                "alpha" => self.alpha = value.parse().map_err(|_| context("a number"))?,
                "beta" => self.beta = value.parse().map_err(|_| context("a number"))?,
                "schedule" => {
                    self.schedule = ScheduleChoice::from_str(value, false)
                        .map_err(|_| context("full-batch, gauss-seidel, or jacobi"))?
                }
                "refresh" => self.refresh = value.parse().map_err(|_| context("an integer"))?,
                "init" => {
                    self.init = InitChoice::from_str(value, false)
                        .map_err(|_| context("collapsed, expanded, or random"))?
                }
                "seed" => self.seed = value.parse().map_err(|_| context("an integer"))?,
                "tol-p" => self.tol_p = value.parse().map_err(|_| context("a number"))?,
                "tol-theta" => self.tol_theta = value.parse().map_err(|_| context("a number"))?,
                "snapshot-every" => {
                    self.snapshot_every = Some(value.parse().map_err(|_| context("an integer"))?)
                }
                "heatmap-every" => {
                    self.heatmap_every = Some(value.parse().map_err(|_| context("an integer"))?)
                }
                other => {
                    return Err(CliError::Config(format!(
                        "{} line {}: unknown setting {other:?}",
                        path.display(),
                        index + 1
                    )))
                }
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, common: &CommonArgs, extras: Option<&RunExtras>) {
        if let Some(v) = common.steps {
            self.steps = v;
        }
        if let Some(v) = common.alpha {
            self.alpha = v;
        }
        if let Some(v) = common.beta {
            self.beta = v;
        }
        if let Some(v) = common.schedule {
            self.schedule = v;
        }
        if let Some(v) = common.refresh {
            self.refresh = v;
        }
        if let Some(v) = common.init {
            self.init = v;
        }
        if let Some(v) = common.seed {
            self.seed = v;
        }
        if let Some(v) = common.tol_p {
            self.tol_p = v;
        }
        if let Some(v) = common.tol_theta {
            self.tol_theta = v;
        }
        if let Some(extras) = extras {
            if let Some(v) = extras.snapshot_every {
                self.snapshot_every = Some(v);
            }
            if let Some(v) = extras.heatmap_every {
                self.heatmap_every = Some(v);
            }
        }
    }

    /// Snapshot interval a run actually uses. Perturb runs default to one
    /// frame per sensor refresh so the tracked shape can be plotted; plain
    /// estimates default to the final frame only. 0 means final only.
    pub fn effective_snapshot(&self, default_to_refresh: bool) -> Option<usize> {
        match self.snapshot_every {
            Some(0) => None,
            Some(v) => Some(v),
            None if default_to_refresh => Some(self.refresh.max(1)),
            None => None,
        }
    }

    /// Per-strut gradient recording interval in force, 0 when disabled.
    /// The default aims at roughly a thousand heatmap rows per run.
    pub fn effective_heatmap(&self) -> usize {
        match self.heatmap_every {
            Some(v) => v,
            None => (self.steps / 1000).max(1),
        }
    }

    pub fn to_config(&self, snapshot: Option<usize>, heatmap: usize) -> EstimatorConfig {
        let (schedule, sweep) = self.schedule.to_estimator();
        EstimatorConfig {
            alpha: self.alpha,
            beta: self.beta,
            max_steps: self.steps,
            tol_center: self.tol_p,
            tol_yaw: self.tol_theta,
            schedule,
            sweep,
            sensor_refresh_period: self.refresh,
            init: self.init.to_estimator(),
            seed: self.seed,
            snapshot_every: snapshot,
            per_strut_every: heatmap,
            ..EstimatorConfig::default()
        }
    }

    /// Angle-source refreshes a run of `steps` steps will request: one to
    /// initialise plus one at every refresh boundary.
    pub fn expected_refreshes(&self) -> usize {
        1 + self.steps.saturating_sub(1) / self.refresh.max(1)
    }

    pub fn echo(&self, report: &mut Report, snapshot: Option<usize>, heatmap: usize) {
        report.push("config.steps", self.steps);
        report.push("config.alpha", self.alpha);
        report.push("config.beta", self.beta);
        report.push("config.schedule", self.schedule.as_str());
        report.push("config.refresh", self.refresh);
        report.push("config.init", self.init.as_str());
        report.push("config.seed", self.seed);
        report.push("config.tol_p", self.tol_p);
        report.push("config.tol_theta", self.tol_theta);
        report.push(
            "config.snapshot_every",
            snapshot.map_or("none".to_string(), |v| v.to_string()),
        );
        report.push("config.heatmap_every", heatmap);
    }
}
