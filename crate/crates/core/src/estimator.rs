//! Shape estimation by gradient descent on cable energy.
//!
//! The estimator walks strut centres and yaws downhill while inclinations
//! stay pinned to their latest measured values, refreshed from an
//! [`AngleSource`] every `sensor_refresh_period` steps. Two schedules are
//! supported: a full-batch step over all struts, and the per-strut
//! round-robin used by the reference hardware, where one step touches one
//! strut and a full sweep visits every strut once.
//!
//! The energy is invariant under global translation and rotation about the
//! gravity axis, so minima are gauge orbits. Anchors declared in the
//! structure pin the gauge during descent; [`align_poses`] quotients it out
//! when comparing node sets. Mirror images through a vertical plane also
//! leave all inclinations and cable lengths unchanged, which makes chirality
//! unobservable to the sensors; alignment therefore considers reflected
//! candidates too and reports when one was used.

use std::io::{self, Write};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::energy::{evaluate_gradients, strut_gradient, EnergyGradients};
use crate::kinematics::{nodes_from_pose, KinematicsError, NodeSet, PoseState};
use crate::model::{ConnectivityMatrix, StructureSpec};
use crate::Vec3;

/// Radius of the centre cloud drawn by collapsed initialisation, meters.
pub const COLLAPSED_RADIUS: f64 = 0.05;

/// Supplies per-strut inclination measurements on demand.
pub trait AngleSource {
    /// Current fused inclinations, one per strut, radians in `[0, pi]`.
    fn angles(&mut self) -> Result<Vec<f64>, String>;
}

/// An angle source that always reports the same measurement.
#[derive(Debug, Clone)]
pub struct FixedAngles(pub Vec<f64>);

impl AngleSource for FixedAngles {
    fn angles(&mut self) -> Result<Vec<f64>, String> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Update every strut from one gradient evaluation per step.
    FullBatch,
    /// Update one strut per step, visiting struts in a round robin.
    PerStrut,
}

/// How per-strut sweeps read the pose they differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Each strut sees the freshest values written earlier in the sweep.
    GaussSeidel,
    /// Every strut in a sweep differentiates the pose frozen at sweep start.
    Jacobi,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitMode {
    /// Centres in a small ball around the anchor origin.
    Collapsed,
    /// Centres scattered in a ball of twice the nominal structure length.
    Expanded,
    /// Centres uniform in a box of the nominal structure length.
    Random,
    /// Warm start from a caller-provided pose; inclinations are still taken
    /// from the sensors.
    Given(PoseState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    /// Centre learning rate.
    pub alpha: f64,
    /// Yaw learning rate.
    pub beta: f64,
    pub max_steps: usize,
    /// Convergence tolerance on the centre gradient norm.
    pub tol_center: f64,
    /// Convergence tolerance on the yaw gradient norm.
    pub tol_yaw: f64,
    pub schedule: Schedule,
    pub sweep: SweepMode,
    /// Shuffle the per-strut visiting order once per sweep.
    pub randomize_order: bool,
    /// Steps between sensor refreshes.
    pub sensor_refresh_period: usize,
    pub init: InitMode,
    pub seed: u64,
    /// Record a node snapshot every this many steps (None: final only).
    pub snapshot_every: Option<usize>,
    /// Record per-strut gradient rows every this many steps (0: never).
    pub per_strut_every: usize,
    /// Halve the rates when a step raises the energy, creep back after a
    /// stretch of clean steps.
    pub adaptive_rates: bool,
    /// Abort when the energy exceeds this multiple of the initial energy.
    pub divergence_factor: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            alpha: 1e-3,
            beta: 1e-3,
            max_steps: 1000,
            tol_center: 1e-6,
            tol_yaw: 1e-6,
            schedule: Schedule::PerStrut,
            sweep: SweepMode::GaussSeidel,
            randomize_order: false,
            sensor_refresh_period: 20,
            init: InitMode::Collapsed,
            seed: 0,
            snapshot_every: None,
            per_strut_every: 1,
            adaptive_rates: false,
            divergence_factor: 1e6,
        }
    }
}

impl EstimatorConfig {
    // Negated comparisons reject NaN along with out-of-range values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |msg: &str| Err(EstimatorError::Config(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive and finite");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive and finite");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(self.tol_center > 0.0 && self.tol_yaw > 0.0) {
            return bad("convergence tolerances must be positive");
        }
        if self.sensor_refresh_period == 0 {
            return bad("sensor_refresh_period must be at least 1");
        }
        if !(self.divergence_factor > 1.0) {
            return bad("divergence_factor must exceed 1");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("estimator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("sensor source failed at step {step}: {message}")]
    SensorSource { step: usize, message: String },
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    #[error(
        "diverged at step {step}: energy {energy:.6e} exceeds {factor:.1e} x initial {initial:.6e}"
    )]
    Diverged {
        step: usize,
        energy: f64,
        initial: f64,
        factor: f64,
    },
    #[error("alignment needs two equally sized non-empty node sets")]
    AlignmentShape,
}

/// Absolute per-strut gradient magnitudes for one step (heatmap row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrutGradientRow {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

/// Post-update measurements of one descent step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub energy: f64,
    pub grad_center_norm: f64,
    pub grad_yaw_norm: f64,
    pub per_strut: Option<Vec<StrutGradientRow>>,
    pub wall_seconds: f64,
}

/// Full history of one estimation run.
#[derive(Debug, Clone)]
pub struct EstimationTrace {
    /// Energy at the initial pose, before any update.
    pub initial_energy: f64,
    pub steps: Vec<StepRecord>,
    /// Node snapshots taken after the recorded step index.
    pub snapshots: Vec<(usize, NodeSet)>,
    pub final_pose: PoseState,
    /// Step index at which the convergence check first passed.
    pub converged_at: Option<usize>,
}

impl EstimationTrace {
    pub fn final_energy(&self) -> f64 {
        self.steps.last().map_or(self.initial_energy, |r| r.energy)
    }

    /// Largest energy seen, including the initial pose.
    pub fn peak_energy(&self) -> f64 {
        self.steps
            .iter()
            .map(|r| r.energy)
            .fold(self.initial_energy, f64::max)
    }

    pub fn converged(&self) -> bool {
        self.converged_at.is_some()
    }

    /// Write the trace table. Per-strut gradient columns are included only
    /// when every step carries them, so the table stays rectangular.
    /// Wall-clock timings are deliberately left out to keep traces of
    /// identical runs byte-identical.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let with_per_strut = !self.steps.is_empty()
            && self.steps.iter().all(|r| r.per_strut.is_some());
        write!(w, "step,energy,grad_p_norm,grad_theta_norm")?;
        if with_per_strut {
            let m_b = self.final_pose.strut_count();
            for i in 1..=m_b {
                write!(w, ",s{i}_gx,s{i}_gy,s{i}_gz,s{i}_gt")?;
            }
        }
        writeln!(w)?;
        for rec in &self.steps {
            write!(
                w,
                "{},{},{},{}",
                rec.step, rec.energy, rec.grad_center_norm, rec.grad_yaw_norm
            )?;
            if with_per_strut {
                for row in rec.per_strut.as_ref().unwrap() {
                    write!(w, ",{},{},{},{}", row.x, row.y, row.z, row.yaw)?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Long-format per-strut gradient magnitudes for heatmap plotting.
    pub fn write_heatmap_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "step,strut,grad_x,grad_y,grad_z,grad_yaw")?;
        for rec in &self.steps {
            if let Some(rows) = &rec.per_strut {
                for (i, row) in rows.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        rec.step,
                        i + 1,
                        row.x,
                        row.y,
                        row.z,
                        row.yaw
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Build the starting pose for a run.
///
/// Centres are drawn according to the init mode, yaws uniformly in
/// `[0, 2 pi)`; frozen centres sit at the origin and frozen yaws at zero.
/// When the structure declares a centroid anchor the whole cloud is shifted
/// so the group's centre-of-mass lands on the origin (collapsed mode samples
/// at half radius first so the documented radius still bounds every centre).
/// Inclinations always come from `measured` and are never optimised.
pub fn initialize_pose(
    spec: &StructureSpec,
    config: &EstimatorConfig,
    measured: &[f64],
) -> Result<PoseState, EstimatorError> {
    config.validate()?;
    let m_b = spec.strut_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let recenter = !spec.anchors.centroid_struts.is_empty();

    let mut pose = match &config.init {
        InitMode::Given(given) => {
            let mut pose = PoseState::new(
                spec,
                given.centers.clone(),
                measured.to_vec(),
                given.yaws.clone(),
            )?;
            pose.set_inclinations(measured)?;
            return Ok(pose);
        }
        mode => {
            let mut centers = Vec::with_capacity(m_b);
            for i in 0..m_b {
                if spec.anchors.freeze_center[i] {
                    centers.push(Vec3::zeros());
                    continue;
                }
                let p = match mode {
                    InitMode::Collapsed => {
                        let r = if recenter {
                            0.5 * COLLAPSED_RADIUS
                        } else {
                            COLLAPSED_RADIUS
                        };
                        sample_ball(&mut rng, r)
                    }
                    InitMode::Expanded => sample_ball(&mut rng, 2.0 * nominal_length(spec)),
                    InitMode::Random => {
                        let h = nominal_length(spec);
                        Vec3::new(
                            rng.gen_range(-h..h),
                            rng.gen_range(-h..h),
                            rng.gen_range(-h..h),
                        )
                    }
                    InitMode::Given(_) => unreachable!(),
                };
                centers.push(p);
            }
            let yaws = (0..m_b)
                .map(|i| {
                    if spec.anchors.freeze_yaw[i] {
                        0.0
                    } else {
                        rng.gen_range(0.0..std::f64::consts::TAU)
                    }
                })
                .collect();
            PoseState::new(spec, centers, measured.to_vec(), yaws)?
        }
    };

    recenter_on_anchor(spec, &mut pose);
    Ok(pose)
}

/// Characteristic structure extent used to scale scatter radii: the mean
/// strut length times sqrt(strut count).
fn nominal_length(spec: &StructureSpec) -> f64 {
    let mean = spec.strut_lengths.iter().sum::<f64>() / spec.strut_count() as f64;
    mean * (spec.strut_count() as f64).sqrt()
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vec3 {
    loop {
        let p = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p * radius;
        }
    }
}

/// Translate the whole pose so the centroid anchor group sits on the origin.
/// The energy is translation invariant, so this is a pure gauge fix.
fn recenter_on_anchor(spec: &StructureSpec, pose: &mut PoseState) {
    let group = &spec.anchors.centroid_struts;
    if group.is_empty() {
        return;
    }
    let mut centroid = Vec3::zeros();
    for &s in group {
        centroid += pose.centers[s];
    }
    centroid /= group.len() as f64;
    for p in &mut pose.centers {
        *p -= centroid;
    }
}

/// Gradient-descent estimator bound to one structure.
pub struct Estimator<'a> {
    spec: &'a StructureSpec,
    connectivity: &'a ConnectivityMatrix,
    config: EstimatorConfig,
    /// Cable indices attached to each strut.
    adjacency: Vec<Vec<usize>>,
    order: Vec<usize>,
    order_rng: ChaCha8Rng,
    step_index: usize,
    rate_scale: f64,
    clean_steps: usize,
    sweep_base: Option<PoseState>,
}

impl<'a> Estimator<'a> {
    pub fn new(
        spec: &'a StructureSpec,
        connectivity: &'a ConnectivityMatrix,
        config: EstimatorConfig,
    ) -> Result<Self, EstimatorError> {
        config.validate()?;
        let m_b = spec.strut_count();
        let mut adjacency = vec![Vec::new(); m_b];
        for k in 0..connectivity.cable_count() {
            let (a, b) = connectivity.endpoints(k);
            adjacency[spec.node_strut(a)].push(k);
            adjacency[spec.node_strut(b)].push(k);
        }
        Ok(Estimator {
            spec,
            connectivity,
            order: (0..m_b).collect(),
            order_rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed)),
            config,
            adjacency,
            step_index: 0,
            rate_scale: 1.0,
            clean_steps: 0,
            sweep_base: None,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    /// Apply one descent step in place and measure the result.
    ///
    /// The returned record holds the energy and masked gradient norms at the
    /// post-update pose. Fails on non-finite gradients.
    pub fn step(&mut self, pose: &mut PoseState) -> Result<StepRecord, EstimatorError> {
        let started = Instant::now();
        let step = self.step_index;
        let alpha = self.config.alpha * self.rate_scale;
        let beta = self.config.beta * self.rate_scale;

        let before = if self.config.adaptive_rates {
            Some((
                pose.clone(),
                evaluate_gradients(self.spec, self.connectivity, pose).0.total,
            ))
        } else {
            None
        };

        match self.config.schedule {
            Schedule::FullBatch => {
                let (_, grads) = evaluate_gradients(self.spec, self.connectivity, pose);
                if !grads.all_finite() {
                    return Err(EstimatorError::NonFiniteGradient { step });
                }
                for i in 0..pose.strut_count() {
                    pose.centers[i] -= alpha * grads.grad_centers[i];
                    pose.yaws[i] -= beta * grads.grad_yaws[i];
                }
            }
            Schedule::PerStrut => {
                let m_b = pose.strut_count();
                let cursor = self.step_index % m_b;
                if cursor == 0 {
                    if self.config.randomize_order {
                        shuffle(&mut self.order, &mut self.order_rng);
                    }
                    if self.config.sweep == SweepMode::Jacobi {
                        self.sweep_base = Some(pose.clone());
                    }
                }
                let strut = self.order[cursor];
                let basis = match (&self.config.sweep, &self.sweep_base) {
                    (SweepMode::Jacobi, Some(base)) => base,
                    _ => &*pose,
                };
                let (g_center, g_yaw) = strut_gradient(
                    self.spec,
                    self.connectivity,
                    basis,
                    strut,
                    &self.adjacency[strut],
                );
                if !(g_center.norm_squared().is_finite() && g_yaw.is_finite()) {
                    return Err(EstimatorError::NonFiniteGradient { step });
                }
                pose.centers[strut] -= alpha * g_center;
                pose.yaws[strut] -= beta * g_yaw;
            }
        }
        recenter_on_anchor(self.spec, pose);

        let (mut geometry, mut grads) = evaluate_gradients(self.spec, self.connectivity, pose);
        if !grads.all_finite() {
            return Err(EstimatorError::NonFiniteGradient { step });
        }

        if let Some((saved, energy_before)) = before {
            if geometry.total > energy_before {
                *pose = saved;
                self.rate_scale = (self.rate_scale * 0.5).max(1e-9);
                self.clean_steps = 0;
                let redo = evaluate_gradients(self.spec, self.connectivity, pose);
                geometry = redo.0;
                grads = redo.1;
            } else {
                self.clean_steps += 1;
                if self.clean_steps >= 50 && self.rate_scale < 1.0 {
                    self.rate_scale = (self.rate_scale * 2.0).min(1.0);
                    self.clean_steps = 0;
                }
            }
        }

        self.step_index += 1;
        Ok(StepRecord {
            step,
            energy: geometry.total,
            grad_center_norm: grads.grad_center_norm,
            grad_yaw_norm: grads.grad_yaw_norm,
            per_strut: self.per_strut_row(step, &grads),
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn per_strut_row(&self, step: usize, grads: &EnergyGradients) -> Option<Vec<StrutGradientRow>> {
        let every = self.config.per_strut_every;
        if every == 0 || !step.is_multiple_of(every) {
            return None;
        }
        Some(
            grads
                .grad_centers
                .iter()
                .zip(&grads.grad_yaws)
                .map(|(g, &t)| StrutGradientRow {
                    x: g.x.abs(),
                    y: g.y.abs(),
                    z: g.z.abs(),
                    yaw: t.abs(),
                })
                .collect(),
        )
    }

    /// Run a full estimation: initialise from the first measurement, step
    /// until convergence or the step budget, refreshing inclinations every
    /// `sensor_refresh_period` steps, and abort on divergence.
    pub fn run(&mut self, source: &mut dyn AngleSource) -> Result<EstimationTrace, EstimatorError> {
        self.step_index = 0;
        self.rate_scale = 1.0;
        self.clean_steps = 0;
        self.sweep_base = None;

        let first = source
            .angles()
            .map_err(|message| EstimatorError::SensorSource { step: 0, message })?;
        let mut pose = initialize_pose(self.spec, &self.config, &first)?;

        let initial_energy = {
            let nodes = nodes_from_pose(self.spec, &pose)?;
            crate::energy::evaluate_energy(self.spec, self.connectivity, &nodes).total
        };
        let divergence_limit = self.config.divergence_factor * initial_energy.max(1e-9);

        let mut steps = Vec::new();
        let mut snapshots = Vec::new();
        let mut converged_at = None;

        for s in 0..self.config.max_steps {
            if s > 0 && s % self.config.sensor_refresh_period == 0 {
                let fresh = source
                    .angles()
                    .map_err(|message| EstimatorError::SensorSource { step: s, message })?;
                pose.set_inclinations(&fresh)?;
            }
            let record = self.step(&mut pose)?;
            let energy = record.energy;
            let converged = record.grad_center_norm < self.config.tol_center
                && record.grad_yaw_norm < self.config.tol_yaw;
            steps.push(record);

            if let Some(every) = self.config.snapshot_every {
                if every > 0 && s % every == 0 {
                    snapshots.push((s, nodes_from_pose(self.spec, &pose)?));
                }
            }
            if converged {
                converged_at = Some(s);
                break;
            }
            if energy > divergence_limit {
                return Err(EstimatorError::Diverged {
                    step: s,
                    energy,
                    initial: initial_energy,
                    factor: self.config.divergence_factor,
                });
            }
        }

        let final_nodes = nodes_from_pose(self.spec, &pose)?;
        if snapshots.last().map(|(s, _)| *s) != steps.last().map(|r| r.step) {
            if let Some(last) = steps.last() {
                snapshots.push((last.step, final_nodes));
            }
        }

        Ok(EstimationTrace {
            initial_energy,
            steps,
            snapshots,
            final_pose: pose,
            converged_at,
        })
    }
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Result of aligning an estimated node set onto a reference.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// The estimated nodes after the fitted transform.
    pub nodes: NodeSet,
    /// Mean Euclidean node error after alignment, meters.
    pub mae: f64,
    /// Fitted rotation about the gravity axis, radians.
    pub rotation: f64,
    pub translation: Vec3,
    /// True when the better fit required mirroring the estimate through a
    /// vertical plane (the chirality the sensors cannot observe).
    pub reflected: bool,
}

/// Align `estimated` onto `reference` with the transforms the measurement
/// leaves free: translation, rotation about the gravity axis, and vertical-
/// plane reflection. The rotation and translation minimise the sum of
/// squared node distances in closed form (horizontal Procrustes plus
/// centroid shift); the reflected candidate is used only when it fits
/// strictly better.
pub fn align_poses(estimated: &NodeSet, reference: &NodeSet) -> Result<Alignment, EstimatorError> {
    if estimated.node_count() != reference.node_count() || estimated.node_count() == 0 {
        return Err(EstimatorError::AlignmentShape);
    }
    let direct = fit_z_procrustes(estimated, reference);
    let mirrored = fit_z_procrustes(&estimated.mirrored(), reference);
    if mirrored.ssd < direct.ssd {
        Ok(Alignment {
            nodes: mirrored.nodes,
            mae: mirrored.mae,
            rotation: mirrored.rotation,
            translation: mirrored.translation,
            reflected: true,
        })
    } else {
        Ok(Alignment {
            nodes: direct.nodes,
            mae: direct.mae,
            rotation: direct.rotation,
            translation: direct.translation,
            reflected: false,
        })
    }
}

struct ProcrustesFit {
    nodes: NodeSet,
    ssd: f64,
    mae: f64,
    rotation: f64,
    translation: Vec3,
}

fn fit_z_procrustes(estimated: &NodeSet, reference: &NodeSet) -> ProcrustesFit {
    let n = estimated.node_count() as f64;
    let c_est = estimated.positions.iter().sum::<Vec3>() / n;
    let c_ref = reference.positions.iter().sum::<Vec3>() / n;

    // Horizontal 2-D Procrustes on centred coordinates.
    let mut cos_acc = 0.0;
    let mut sin_acc = 0.0;
    for (e, r) in estimated.positions.iter().zip(&reference.positions) {
        let (ex, ey) = (e.x - c_est.x, e.y - c_est.y);
        let (rx, ry) = (r.x - c_ref.x, r.y - c_ref.y);
        cos_acc += ex * rx + ey * ry;
        sin_acc += ex * ry - ey * rx;
    }
    let rotation = sin_acc.atan2(cos_acc);
    let (s, c) = rotation.sin_cos();
    let rotate = |p: Vec3| Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z);
    let translation = c_ref - rotate(c_est);

    let mut ssd = 0.0;
    let mut abs_sum = 0.0;
    let positions: Vec<Vec3> = estimated
        .positions
        .iter()
        .zip(&reference.positions)
        .map(|(e, r)| {
            let aligned = rotate(*e) + translation;
            let d = (aligned - r).norm_squared();
            ssd += d;
            abs_sum += d.sqrt();
            aligned
        })
        .collect();

    ProcrustesFit {
        nodes: NodeSet { positions },
        ssd,
        mae: abs_sum / n,
        rotation,
        translation,
    }
}
