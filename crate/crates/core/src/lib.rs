//! Shape estimation for tensegrity structures driven by per-strut inclination
//! sensing.
//!
//! A tensegrity structure is modelled as `m_b` rigid struts coupled by `m_s`
//! elastic cables. Each strut is parameterised by its centre position, an
//! inclination angle measured from the gravity axis, and a yaw angle about
//! that axis. Inclinations are observable with one IMU per strut; centres and
//! yaws are not. This crate recovers the unobserved degrees of freedom by
//! minimising total cable elastic energy with the inclinations pinned to
//! their measured values.
//!
//! Module layout:
//!
//! - [`model`]: structure definitions (struts, cables, anchors), the text
//!   file format, and the signed cable-node incidence.
//! - [`kinematics`]: strut pose to node positions, and derivatives.
//! - [`energy`]: cable elastic energy and its analytic gradients.
//! - [`estimator`]: gradient-descent shape estimation, traces, alignment.
//! - [`sensing`]: IMU sample streams and the inclination complementary filter.
//! - [`synth`]: synthetic structures, ground-truth scenarios, IMU stream
//!   synthesis, and a brute-force reference minimiser for tests.

pub mod energy;
pub mod estimator;
pub mod kinematics;
pub mod model;
pub mod sensing;
pub mod synth;

pub use nalgebra::Vector3;

/// 3-vector of f64, the coordinate type used throughout.
pub type Vec3 = Vector3<f64>;

/// Standard gravity in m/s^2, used by sensing and stream synthesis.
pub const STANDARD_GRAVITY: f64 = 9.80665;
