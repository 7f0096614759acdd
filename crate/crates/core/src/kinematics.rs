//! Strut pose parameterisation and node positions.
//!
//! A strut pose is (centre `p`, inclination `phi`, yaw `theta`). The unit
//! direction of the strut axis is
//!
//! ```text
//! q = (sin(phi) cos(theta), sin(phi) sin(theta), cos(phi))
//! ```
//!
//! with `phi` measured from the gravity axis (world +z, pointing up) and
//! `theta` measured in the horizontal plane. The two nodes of strut `i` sit
//! at `p_i +/- (L_i / 2) q_i`; the plus end is node `i`, the minus end node
//! `i + m_b`. Inclinations live in `[0, pi]`; yaws are kept unwrapped so
//! descent can cross the branch cut freely.

use crate::model::StructureSpec;
use crate::Vec3;

/// Slack tolerated when validating inclination angles, radians.
pub const ANGLE_SLACK: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum KinematicsError {
    #[error("inclination {value} outside [0, pi]")]
    AngleDomain { value: f64 },
    #[error("{what}: expected {expected} entries, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{which} node group is empty")]
    EmptyGroup { which: &'static str },
    #[error("node index {node} out of range for {count} nodes")]
    NodeOutOfRange { node: usize, count: usize },
}

/// Unit strut direction for a validated inclination/yaw pair.
///
/// Inclinations up to [`ANGLE_SLACK`] outside `[0, pi]` are clamped into
/// range; anything further out is a domain error.
pub fn direction_from_angles(inclination: f64, yaw: f64) -> Result<Vec3, KinematicsError> {
    let phi = validate_inclination(inclination)?;
    Ok(direction_raw(phi, yaw))
}

pub(crate) fn validate_inclination(value: f64) -> Result<f64, KinematicsError> {
    if !value.is_finite() || !(-ANGLE_SLACK..=std::f64::consts::PI + ANGLE_SLACK).contains(&value) {
        return Err(KinematicsError::AngleDomain { value });
    }
    Ok(value.clamp(0.0, std::f64::consts::PI))
}

/// Direction formula without domain checking; callers guarantee the range.
#[inline]
pub(crate) fn direction_raw(inclination: f64, yaw: f64) -> Vec3 {
    let (sin_phi, cos_phi) = inclination.sin_cos();
    let (sin_theta, cos_theta) = yaw.sin_cos();
    Vec3::new(sin_phi * cos_theta, sin_phi * sin_theta, cos_phi)
}

/// Derivative of the strut direction with respect to yaw:
/// `(-sin(phi) sin(theta), sin(phi) cos(theta), 0)`.
#[inline]
pub fn yaw_jacobian_column(inclination: f64, yaw: f64) -> Vec3 {
    let sin_phi = inclination.sin();
    let (sin_theta, cos_theta) = yaw.sin_cos();
    Vec3::new(-sin_phi * sin_theta, sin_phi * cos_theta, 0.0)
}

/// Per-strut pose of a whole structure.
///
/// Frozen-DOF flags are mirrored from the structure's [`AnchorSpec`] so a
/// pose carries everything a descent step needs. Inclinations always satisfy
/// the `[0, pi]` domain; constructors and setters enforce it.
///
/// [`AnchorSpec`]: crate::model::AnchorSpec
#[derive(Debug, Clone, PartialEq)]
pub struct PoseState {
    pub centers: Vec<Vec3>,
    pub inclinations: Vec<f64>,
    pub yaws: Vec<f64>,
    pub frozen_center: Vec<bool>,
    pub frozen_yaw: Vec<bool>,
}

impl PoseState {
    pub fn new(
        spec: &StructureSpec,
        centers: Vec<Vec3>,
        inclinations: Vec<f64>,
        yaws: Vec<f64>,
    ) -> Result<Self, KinematicsError> {
        let m_b = spec.strut_count();
        check_len("centers", m_b, centers.len())?;
        check_len("inclinations", m_b, inclinations.len())?;
        check_len("yaws", m_b, yaws.len())?;
        let inclinations = inclinations
            .into_iter()
            .map(validate_inclination)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PoseState {
            centers,
            inclinations,
            yaws,
            frozen_center: spec.anchors.freeze_center.clone(),
            frozen_yaw: spec.anchors.freeze_yaw.clone(),
        })
    }

    pub fn strut_count(&self) -> usize {
        self.centers.len()
    }

    /// Replace the measured inclinations, e.g. on a sensor refresh.
    pub fn set_inclinations(&mut self, inclinations: &[f64]) -> Result<(), KinematicsError> {
        check_len("inclinations", self.strut_count(), inclinations.len())?;
        let validated = inclinations
            .iter()
            .map(|&phi| validate_inclination(phi))
            .collect::<Result<Vec<_>, _>>()?;
        self.inclinations = validated;
        Ok(())
    }

    /// Strut axis direction of strut `i`.
    pub fn direction(&self, i: usize) -> Vec3 {
        direction_raw(self.inclinations[i], self.yaws[i])
    }

    /// Yaws wrapped into `(-pi, pi]` for reporting; the stored values stay
    /// unwrapped.
    pub fn normalized_yaws(&self) -> Vec<f64> {
        self.yaws
            .iter()
            .map(|&t| {
                let two_pi = std::f64::consts::TAU;
                let mut w = t.rem_euclid(two_pi);
                if w > std::f64::consts::PI {
                    w -= two_pi;
                }
                w
            })
            .collect()
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), KinematicsError> {
    if expected != got {
        return Err(KinematicsError::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Node positions of a structure, `2 m_b` entries, strut plus-ends first.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub positions: Vec<Vec3>,
}

impl NodeSet {
    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn strut_count(&self) -> usize {
        self.positions.len() / 2
    }

    pub fn translated(&self, offset: Vec3) -> NodeSet {
        NodeSet {
            positions: self.positions.iter().map(|p| p + offset).collect(),
        }
    }

    pub fn rotated_about_z(&self, angle: f64) -> NodeSet {
        let (s, c) = angle.sin_cos();
        NodeSet {
            positions: self
                .positions
                .iter()
                .map(|p| Vec3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
                .collect(),
        }
    }

    /// Mirror through the x-z plane. Flips chirality; inclinations are
    /// unchanged, so mirrored shapes are indistinguishable to the sensors.
    pub fn mirrored(&self) -> NodeSet {
        NodeSet {
            positions: self
                .positions
                .iter()
                .map(|p| Vec3::new(p.x, -p.y, p.z))
                .collect(),
        }
    }

    /// Mean position of a node subset.
    pub fn centroid_of(&self, nodes: &[usize]) -> Vec3 {
        let mut sum = Vec3::zeros();
        for &i in nodes {
            sum += self.positions[i];
        }
        sum / nodes.len() as f64
    }
}

/// Node positions implied by a pose: `n_i = p_i + (L_i/2) q_i` and
/// `n_{i+m_b} = p_i - (L_i/2) q_i`.
pub fn nodes_from_pose(spec: &StructureSpec, pose: &PoseState) -> Result<NodeSet, KinematicsError> {
    let m_b = spec.strut_count();
    check_len("pose struts", m_b, pose.strut_count())?;
    let mut positions = vec![Vec3::zeros(); 2 * m_b];
    for i in 0..m_b {
        let half = 0.5 * spec.strut_lengths[i] * pose.direction(i);
        positions[i] = pose.centers[i] + half;
        positions[i + m_b] = pose.centers[i] - half;
    }
    Ok(NodeSet { positions })
}

/// Structure length metric: distance between the mean of the `top` nodes and
/// the mean of the `base` nodes.
pub fn manipulator_length(
    nodes: &NodeSet,
    top: &[usize],
    base: &[usize],
) -> Result<f64, KinematicsError> {
    if top.is_empty() {
        return Err(KinematicsError::EmptyGroup { which: "top" });
    }
    if base.is_empty() {
        return Err(KinematicsError::EmptyGroup { which: "base" });
    }
    for &node in top.iter().chain(base) {
        if node >= nodes.node_count() {
            return Err(KinematicsError::NodeOutOfRange {
                node,
                count: nodes.node_count(),
            });
        }
    }
    Ok((nodes.centroid_of(top) - nodes.centroid_of(base)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CableClass, CableSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn two_strut_spec() -> StructureSpec {
        StructureSpec::new(
            vec![0.33, 0.33],
            vec![CableSpec {
                node_a: 0,
                node_b: 1,
                stiffness: 1.0,
                natural_length: 0.0,
                class: CableClass::Passive,
                label: None,
            }],
        )
        .unwrap()
    }

    #[test]
    fn direction_examples() {
        assert_relative_eq!(
            direction_from_angles(0.0, 1.23).unwrap(),
            Vec3::new(0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            direction_from_angles(FRAC_PI_2, 0.0).unwrap(),
            Vec3::new(1.0, 0.0, 0.0),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            direction_from_angles(FRAC_PI_2, FRAC_PI_2).unwrap(),
            Vec3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn direction_domain_is_enforced_with_slack() {
        assert!(direction_from_angles(-1e-10, 0.0).is_ok());
        assert!(direction_from_angles(PI + 1e-10, 0.0).is_ok());
        assert!(matches!(
            direction_from_angles(-1e-3, 0.0),
            Err(KinematicsError::AngleDomain { .. })
        ));
        assert!(matches!(
            direction_from_angles(PI + 1e-3, 0.0),
            Err(KinematicsError::AngleDomain { .. })
        ));
        assert!(direction_from_angles(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn yaw_jacobian_examples() {
        assert_relative_eq!(
            yaw_jacobian_column(FRAC_PI_2, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
        // Vertical strut: yaw has no effect on the direction.
        assert_relative_eq!(
            yaw_jacobian_column(0.0, 0.7),
            Vec3::zeros(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn nodes_from_pose_examples() {
        let spec = StructureSpec::new(
            vec![2.0, 0.33],
            vec![CableSpec {
                node_a: 0,
                node_b: 1,
                stiffness: 1.0,
                natural_length: 0.0,
                class: CableClass::Passive,
                label: None,
            }],
        )
        .unwrap();
        let pose = PoseState::new(
            &spec,
            vec![Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0)],
            vec![0.0, FRAC_PI_2],
            vec![0.0, 0.0],
        )
        .unwrap();
        let nodes = nodes_from_pose(&spec, &pose).unwrap();
        // Vertical strut of length 2 at the origin.
        assert_relative_eq!(nodes.positions[0], Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(nodes.positions[2], Vec3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
        // Horizontal strut of length 0.33 centred at (1, 2, 3).
        assert_relative_eq!(
            nodes.positions[1],
            Vec3::new(1.165, 2.0, 3.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            nodes.positions[3],
            Vec3::new(0.835, 2.0, 3.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn pose_validates_dimensions_and_angles() {
        let spec = two_strut_spec();
        assert!(matches!(
            PoseState::new(&spec, vec![Vec3::zeros()], vec![0.0, 0.0], vec![0.0, 0.0]),
            Err(KinematicsError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            PoseState::new(
                &spec,
                vec![Vec3::zeros(), Vec3::zeros()],
                vec![0.0, 4.0],
                vec![0.0, 0.0]
            ),
            Err(KinematicsError::AngleDomain { .. })
        ));
    }

    #[test]
    fn normalized_yaws_wrap_into_half_open_pi_interval() {
        let spec = two_strut_spec();
        let pose = PoseState::new(
            &spec,
            vec![Vec3::zeros(), Vec3::zeros()],
            vec![1.0, 1.0],
            vec![7.0 * PI + 0.25, -3.0 * PI],
        )
        .unwrap();
        let wrapped = pose.normalized_yaws();
        assert_relative_eq!(wrapped[0], -PI + 0.25, epsilon = 1e-12);
        assert_relative_eq!(wrapped[1].abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn manipulator_length_unit_case() {
        let nodes = NodeSet {
            positions: vec![
                Vec3::new(0.0, 0.0, 1.0),
                Vec3::new(1.0, 1.0, 1.0),
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
            ],
        };
        let d = manipulator_length(&nodes, &[0, 1], &[2, 3]).unwrap();
        assert_relative_eq!(d, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn manipulator_length_rejects_empty_groups() {
        let nodes = NodeSet {
            positions: vec![Vec3::zeros(), Vec3::zeros()],
        };
        assert!(matches!(
            manipulator_length(&nodes, &[], &[0]),
            Err(KinematicsError::EmptyGroup { which: "top" })
        ));
        assert!(matches!(
            manipulator_length(&nodes, &[0], &[9]),
            Err(KinematicsError::NodeOutOfRange { node: 9, .. })
        ));
    }
}
