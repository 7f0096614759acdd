//! IMU-based inclination sensing.
//!
//! One IMU sits on each strut with its x axis along the strut. At rest the
//! accelerometer reads the specific-force reaction to gravity, so the angle
//! between strut and gravity axis is `arccos(a_x / |a|)`. The gyro supplies
//! an inclination rate through a projection onto the lateral axes, and a
//! complementary filter fuses the two at blend factor
//! `lambda = T_c / (T_c + T_s)`.
//!
//! Sample streams are CSV records `t,strut_id,ax,ay,az,wx,wy,wz` with
//! 1-based strut ids, `#` comments, and blank lines ignored. Malformed
//! records are skipped and counted; per-strut timestamp regressions are
//! counted but the samples are kept.

use std::io::{self, BufRead, Write};

use crate::estimator::AngleSource;
use crate::Vec3;

/// Accelerometer readings with a norm at or below this are rejected as
/// dynamically disturbed, m/s^2.
pub const MIN_ACCEL_NORM: f64 = 0.1;

/// Below this lateral accelerometer magnitude the rate projection is
/// degenerate (strut aligned with gravity), m/s^2.
pub const MIN_LATERAL_NORM: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum SensingError {
    #[error("accelerometer norm {norm} m/s^2 too small for a gravity estimate")]
    RejectedAccel { norm: f64 },
    #[error("sample for strut {strut} but the filter bank has {count} struts")]
    UnknownStrut { strut: usize, count: usize },
    #[error("no samples seen yet for strut {strut}")]
    Unseeded { strut: usize },
    #[error("sensor stream I/O: {0}")]
    Io(#[from] io::Error),
}

/// One IMU sample. `strut` is 0-based; accel in m/s^2, gyro in rad/s, both
/// in the sensor frame (x along the strut).
#[derive(Debug, Clone, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub strut: usize,
    pub accel: Vec3,
    pub gyro: Vec3,
}

/// Quasi-static inclination from the accelerometer alone.
///
/// Rejects readings with norm at or below [`MIN_ACCEL_NORM`]; otherwise
/// returns `arccos(a_x / |a|)`, which lands in `[0, pi]` by construction.
pub fn quasi_static_angle(accel: &Vec3) -> Result<f64, SensingError> {
    let norm = accel.norm();
    // Negated comparison so a NaN norm is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(norm > MIN_ACCEL_NORM) {
        return Err(SensingError::RejectedAccel { norm });
    }
    Ok((accel.x / norm).clamp(-1.0, 1.0).acos())
}

/// Inclination rate from one gyro/accel pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    /// rad/s; zero when degenerate.
    pub rate: f64,
    /// True when the lateral accelerometer components are too small to
    /// define the inclination plane (strut along gravity).
    pub degenerate: bool,
}

/// Project the gyro onto the inclination direction:
/// `(a_y w_z - a_z w_y) / sqrt(a_y^2 + a_z^2)`.
///
/// The projection is invariant to roll about the strut axis and insensitive
/// to yaw rate.
pub fn inclination_rate(accel: &Vec3, gyro: &Vec3) -> RateEstimate {
    let lateral = (accel.y * accel.y + accel.z * accel.z).sqrt();
    if lateral <= MIN_LATERAL_NORM {
        return RateEstimate {
            rate: 0.0,
            degenerate: true,
        };
    }
    RateEstimate {
        rate: (accel.y * gyro.z - accel.z * gyro.y) / lateral,
        degenerate: false,
    }
}

/// Complementary filter timing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Accelerometer cross-over time constant T_c, seconds.
    pub time_constant: f64,
    /// Nominal sampling period T_s, seconds.
    pub sample_period: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            time_constant: 0.2,
            sample_period: 0.0125,
        }
    }
}

impl FilterParams {
    /// Blend factor `lambda = T_c / (T_c + T_s)`, evaluated as
    /// `1 / (1 + T_s / T_c)` which divides out shared rounding in the two
    /// stored periods (the defaults give exactly 16/17).
    pub fn blend(&self) -> f64 {
        1.0 / (1.0 + self.sample_period / self.time_constant)
    }
}

/// Result of feeding one sample to a filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOutcome {
    /// Fused inclination after the update, radians.
    pub angle: f64,
    /// False when the accelerometer was rejected and the state kept.
    pub accepted: bool,
    /// True when the gyro projection was degenerate for this sample.
    pub degenerate_rate: bool,
}

/// Complementary filter for one strut's inclination.
///
/// The state seeds itself from the first accepted sample's accelerometer
/// estimate, so a static stream converges immediately rather than decaying
/// from an arbitrary initial angle.
#[derive(Debug, Clone)]
pub struct FilterState {
    params: FilterParams,
    fused: Option<f64>,
}

impl FilterState {
    pub fn new(params: FilterParams) -> Self {
        FilterState {
            params,
            fused: None,
        }
    }

    /// Start from a known angle instead of seeding from the stream.
    pub fn with_initial(angle: f64, params: FilterParams) -> Self {
        FilterState {
            params,
            fused: Some(angle.clamp(0.0, std::f64::consts::PI)),
        }
    }

    /// Fused angle, if any sample has been accepted.
    pub fn fused(&self) -> Option<f64> {
        self.fused
    }

    /// Fuse one sample. A rejected accelerometer reading leaves the state
    /// unchanged and reports `accepted: false`.
    pub fn update(&mut self, accel: &Vec3, gyro: &Vec3) -> FilterOutcome {
        let quasi_static = match quasi_static_angle(accel) {
            Ok(angle) => angle,
            Err(_) => {
                return FilterOutcome {
                    angle: self.fused.unwrap_or(0.0),
                    accepted: false,
                    degenerate_rate: false,
                };
            }
        };
        let rate = inclination_rate(accel, gyro);
        let fused = match self.fused {
            None => quasi_static,
            Some(previous) => {
                let lambda = self.params.blend();
                lambda * (previous + self.params.sample_period * rate.rate)
                    + (1.0 - lambda) * quasi_static
            }
        };
        let fused = fused.clamp(0.0, std::f64::consts::PI);
        self.fused = Some(fused);
        FilterOutcome {
            angle: fused,
            accepted: true,
            degenerate_rate: rate.degenerate,
        }
    }
}

/// One filter per strut, routing samples by strut id.
#[derive(Debug, Clone)]
pub struct FilterBank {
    states: Vec<FilterState>,
}

impl FilterBank {
    pub fn new(strut_count: usize, params: FilterParams) -> Self {
        FilterBank {
            states: vec![FilterState::new(params); strut_count],
        }
    }

    pub fn strut_count(&self) -> usize {
        self.states.len()
    }

    pub fn update(&mut self, sample: &ImuSample) -> Result<FilterOutcome, SensingError> {
        let count = self.states.len();
        let state = self
            .states
            .get_mut(sample.strut)
            .ok_or(SensingError::UnknownStrut {
                strut: sample.strut,
                count,
            })?;
        Ok(state.update(&sample.accel, &sample.gyro))
    }

    /// Copy of all fused angles; errs on the first strut that has not seen
    /// an accepted sample yet.
    pub fn snapshot(&self) -> Result<Vec<f64>, SensingError> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| s.fused().ok_or(SensingError::Unseeded { strut: i }))
            .collect()
    }
}

/// A parsed sensor stream with its parse diagnostics.
#[derive(Debug, Clone)]
pub struct SensorStream {
    pub samples: Vec<ImuSample>,
    /// Records skipped because they did not parse.
    pub malformed: usize,
    /// Samples whose timestamp went backwards for their strut (kept).
    pub out_of_order: usize,
}

/// Parse a CSV sensor stream.
///
/// Malformed records are skipped and counted rather than failing the whole
/// stream; I/O failures abort.
pub fn parse_sensor_stream<R: BufRead>(reader: R) -> Result<SensorStream, SensingError> {
    let mut samples = Vec::new();
    let mut malformed = 0usize;
    let mut out_of_order = 0usize;
    let mut last_t: Vec<(usize, f64)> = Vec::new();

    for line in reader.lines() {
        let line = line?;
        let body = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        }
        .trim();
        if body.is_empty() {
            continue;
        }
        match parse_record(body) {
            Some(sample) => {
                match last_t.iter_mut().find(|(s, _)| *s == sample.strut) {
                    Some((_, t)) => {
                        if sample.t < *t {
                            out_of_order += 1;
                        } else {
                            *t = sample.t;
                        }
                    }
                    None => last_t.push((sample.strut, sample.t)),
                }
                samples.push(sample);
            }
            None => malformed += 1,
        }
    }
    Ok(SensorStream {
        samples,
        malformed,
        out_of_order,
    })
}

fn parse_record(body: &str) -> Option<ImuSample> {
    let mut fields = body.split(',');
    let mut next_f64 = || fields.next()?.trim().parse::<f64>().ok();
    let t = next_f64()?;
    let strut_field = fields.next()?.trim().parse::<usize>().ok()?;
    if strut_field == 0 {
        return None;
    }
    let mut next_f64 = || fields.next()?.trim().parse::<f64>().ok();
    let ax = next_f64()?;
    let ay = next_f64()?;
    let az = next_f64()?;
    let wx = next_f64()?;
    let wy = next_f64()?;
    let wz = next_f64()?;
    if fields.next().is_some() {
        return None;
    }
    if !t.is_finite() {
        return None;
    }
    Some(ImuSample {
        t,
        strut: strut_field - 1,
        accel: Vec3::new(ax, ay, az),
        gyro: Vec3::new(wx, wy, wz),
    })
}

/// Write samples in the stream format (1-based strut ids, shortest
/// round-trip floats), one record per line.
pub fn write_sensor_stream<W: Write>(mut writer: W, samples: &[ImuSample]) -> io::Result<()> {
    for s in samples {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{}",
            s.t, s.strut + 1, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z
        )?;
    }
    Ok(())
}

/// Replays a recorded stream as an estimator angle source.
///
/// The stream's time span is split evenly over the expected number of sensor
/// refreshes; each [`AngleSource::angles`] call feeds the next slice of
/// samples to the filter bank and returns the fused inclinations. After the
/// last slice the final angles are repeated.
pub struct StreamAngleSource {
    samples: Vec<ImuSample>,
    bank: FilterBank,
    cursor: usize,
    cutoffs: Vec<f64>,
    next_refresh: usize,
}

impl StreamAngleSource {
    pub fn new(
        samples: Vec<ImuSample>,
        strut_count: usize,
        params: FilterParams,
        expected_refreshes: usize,
    ) -> Self {
        let refreshes = expected_refreshes.max(1);
        let (t0, t1) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s.t), hi.max(s.t))
            });
        let cutoffs = (0..refreshes)
            .map(|k| {
                if samples.is_empty() {
                    0.0
                } else {
                    t0 + (t1 - t0) * (k + 1) as f64 / refreshes as f64
                }
            })
            .collect();
        StreamAngleSource {
            samples,
            bank: FilterBank::new(strut_count, params),
            cursor: 0,
            cutoffs,
            next_refresh: 0,
        }
    }
}

impl AngleSource for StreamAngleSource {
    fn angles(&mut self) -> Result<Vec<f64>, String> {
        let slot = self.next_refresh.min(self.cutoffs.len() - 1);
        let cutoff = self.cutoffs[slot];
        let consume_all = self.next_refresh + 1 >= self.cutoffs.len();
        while self.cursor < self.samples.len()
            && (consume_all || self.samples[self.cursor].t <= cutoff)
        {
            self.bank
                .update(&self.samples[self.cursor])
                .map_err(|e| e.to_string())?;
            self.cursor += 1;
        }
        self.next_refresh += 1;
        self.bank.snapshot().map_err(|e| e.to_string())
    }
}
