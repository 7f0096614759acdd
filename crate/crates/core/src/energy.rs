//! Cable elastic energy and its analytic gradients.
//!
//! Each cable stores `e_k = 0.5 K_k (m_k - b_k)^2` when stretched beyond its
//! natural length `b_k` and nothing when slack; slack cables exert no force.
//! The total energy is minimised over strut centres and yaws while the
//! measured inclinations stay fixed, so gradients are taken with respect to
//! those degrees of freedom only:
//!
//! - centre: the net cable force on the strut's two nodes,
//! - yaw: that force pair contracted with the strut's yaw Jacobian column.
//!
//! Cables shorter than [`MIN_CABLE_LENGTH`] have an ill-defined direction
//! and contribute zero gradient.

use crate::kinematics::{yaw_jacobian_column, NodeSet, PoseState};
use crate::model::{ConnectivityMatrix, StructureSpec};
use crate::Vec3;

/// Below this length a cable's unit vector is numerically meaningless; the
/// cable is dropped from force computations.
pub const MIN_CABLE_LENGTH: f64 = 1e-12;

/// Per-cable geometry and energy at one configuration.
#[derive(Debug, Clone)]
pub struct CableGeometry {
    /// Cable vectors `v_k = n_b - n_a`.
    pub vectors: Vec<Vec3>,
    /// Cable lengths `m_k = |v_k|`.
    pub lengths: Vec<f64>,
    /// Tension mask: true iff `m_k - b_k > 0`.
    pub taut: Vec<bool>,
    /// Per-cable stored energies, zero for slack cables.
    pub energies: Vec<f64>,
    /// Total stored energy.
    pub total: f64,
}

/// Energy gradients over the free pose degrees of freedom.
///
/// `grad_centers` is strut-major (x, y, z per strut). Entries of frozen
/// degrees of freedom are masked to zero so a descent update can consume the
/// gradients directly; the norms are taken after masking.
#[derive(Debug, Clone)]
pub struct EnergyGradients {
    pub grad_centers: Vec<Vec3>,
    pub grad_yaws: Vec<f64>,
    pub grad_center_norm: f64,
    pub grad_yaw_norm: f64,
}

impl EnergyGradients {
    fn from_parts(grad_centers: Vec<Vec3>, grad_yaws: Vec<f64>) -> Self {
        let grad_center_norm = grad_centers
            .iter()
            .map(|g| g.norm_squared())
            .sum::<f64>()
            .sqrt();
        let grad_yaw_norm = grad_yaws.iter().map(|g| g * g).sum::<f64>().sqrt();
        EnergyGradients {
            grad_centers,
            grad_yaws,
            grad_center_norm,
            grad_yaw_norm,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grad_center_norm.is_finite() && self.grad_yaw_norm.is_finite()
    }
}

/// Evaluate all cable energies at the given node positions.
pub fn evaluate_energy(
    spec: &StructureSpec,
    connectivity: &ConnectivityMatrix,
    nodes: &NodeSet,
) -> CableGeometry {
    let vectors = connectivity.cable_vectors(&nodes.positions);
    let mut lengths = Vec::with_capacity(vectors.len());
    let mut taut = Vec::with_capacity(vectors.len());
    let mut energies = Vec::with_capacity(vectors.len());
    let mut total = 0.0;
    for (cable, v) in spec.cables.iter().zip(&vectors) {
        let m = v.norm();
        let stretch = m - cable.natural_length;
        let is_taut = stretch > 0.0;
        let e = if is_taut {
            0.5 * cable.stiffness * stretch * stretch
        } else {
            0.0
        };
        lengths.push(m);
        taut.push(is_taut);
        energies.push(e);
        total += e;
    }
    CableGeometry {
        vectors,
        lengths,
        taut,
        energies,
        total,
    }
}

/// Cable force vector along `v`, zero when slack or degenerately short.
#[inline]
fn cable_force(stiffness: f64, natural_length: f64, v: &Vec3, m: f64) -> Vec3 {
    let stretch = m - natural_length;
    if stretch > 0.0 && m >= MIN_CABLE_LENGTH {
        v * (stiffness * stretch / m)
    } else {
        Vec3::zeros()
    }
}

/// Energy and analytic gradients at a pose, frozen DOFs masked to zero.
pub fn evaluate_gradients(
    spec: &StructureSpec,
    connectivity: &ConnectivityMatrix,
    pose: &PoseState,
) -> (CableGeometry, EnergyGradients) {
    let (geometry, mut grads) = gradients_unmasked(spec, connectivity, pose);
    for i in 0..pose.strut_count() {
        if pose.frozen_center[i] {
            grads.grad_centers[i] = Vec3::zeros();
        }
        if pose.frozen_yaw[i] {
            grads.grad_yaws[i] = 0.0;
        }
    }
    let grads = EnergyGradients::from_parts(grads.grad_centers, grads.grad_yaws);
    (geometry, grads)
}

/// Same as [`evaluate_gradients`] but without anchor masking. The raw
/// gradients obey the translation identity: their per-axis sum over struts
/// vanishes.
pub fn evaluate_gradients_unmasked(
    spec: &StructureSpec,
    connectivity: &ConnectivityMatrix,
    pose: &PoseState,
) -> (CableGeometry, EnergyGradients) {
    gradients_unmasked(spec, connectivity, pose)
}

fn gradients_unmasked(
    spec: &StructureSpec,
    connectivity: &ConnectivityMatrix,
    pose: &PoseState,
) -> (CableGeometry, EnergyGradients) {
    let m_b = spec.strut_count();
    assert_eq!(pose.strut_count(), m_b, "pose/spec strut count mismatch");
    let nodes = crate::kinematics::nodes_from_pose(spec, pose)
        .expect("pose dimensions already checked");
    let geometry = evaluate_energy(spec, connectivity, &nodes);

    let forces: Vec<Vec3> = spec
        .cables
        .iter()
        .zip(geometry.vectors.iter().zip(&geometry.lengths))
        .map(|(c, (v, &m))| cable_force(c.stiffness, c.natural_length, v, m))
        .collect();
    let node_grads = connectivity.scatter_to_nodes(&forces);

    let mut grad_centers = Vec::with_capacity(m_b);
    let mut grad_yaws = Vec::with_capacity(m_b);
    for i in 0..m_b {
        let g_plus = node_grads[i];
        let g_minus = node_grads[i + m_b];
        grad_centers.push(g_plus + g_minus);
        let dq = yaw_jacobian_column(pose.inclinations[i], pose.yaws[i]);
        grad_yaws.push(0.5 * spec.strut_lengths[i] * (g_plus - g_minus).dot(&dq));
    }
    (
        geometry,
        EnergyGradients::from_parts(grad_centers, grad_yaws),
    )
}

/// Gradient restricted to one strut, computed from the cables attached to
/// it. Because only those cables depend on the strut's pose, this equals the
/// corresponding rows of the full gradient. Frozen DOFs are masked.
pub fn strut_gradient(
    spec: &StructureSpec,
    connectivity: &ConnectivityMatrix,
    pose: &PoseState,
    strut: usize,
    attached_cables: &[usize],
) -> (Vec3, f64) {
    let m_b = spec.strut_count();
    let node_position = |node: usize| -> Vec3 {
        let (s, sign) = if node < m_b {
            (node, 1.0)
        } else {
            (node - m_b, -1.0)
        };
        pose.centers[s] + pose.direction(s) * (sign * 0.5 * spec.strut_lengths[s])
    };

    let mut g_plus = Vec3::zeros();
    let mut g_minus = Vec3::zeros();
    let (plus_node, minus_node) = spec.strut_nodes(strut);
    for &k in attached_cables {
        let (a, b) = connectivity.endpoints(k);
        let v = node_position(b) - node_position(a);
        let m = v.norm();
        let f = cable_force(spec.cables[k].stiffness, spec.cables[k].natural_length, &v, m);
        // Scatter with the row signs, keeping only this strut's nodes.
        if a == plus_node {
            g_plus -= f;
        } else if a == minus_node {
            g_minus -= f;
        }
        if b == plus_node {
            g_plus += f;
        } else if b == minus_node {
            g_minus += f;
        }
    }
    let grad_center = if pose.frozen_center[strut] {
        Vec3::zeros()
    } else {
        g_plus + g_minus
    };
    let grad_yaw = if pose.frozen_yaw[strut] {
        0.0
    } else {
        let dq = yaw_jacobian_column(pose.inclinations[strut], pose.yaws[strut]);
        0.5 * spec.strut_lengths[strut] * (g_plus - g_minus).dot(&dq)
    };
    (grad_center, grad_yaw)
}

/// First-order convergence test on masked gradient norms.
///
/// Tolerances must be positive.
pub fn convergence_check(gradients: &EnergyGradients, tol_center: f64, tol_yaw: f64) -> bool {
    assert!(
        tol_center > 0.0 && tol_yaw > 0.0,
        "convergence tolerances must be positive"
    );
    gradients.grad_center_norm < tol_center && gradients.grad_yaw_norm < tol_yaw
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CableClass, CableSpec};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn pair(stiffness: f64, natural_length: f64) -> (StructureSpec, ConnectivityMatrix) {
        let spec = StructureSpec::new(
            vec![0.4, 0.4],
            vec![CableSpec {
                node_a: 0,
                node_b: 1,
                stiffness,
                natural_length,
                class: CableClass::Passive,
                label: None,
            }],
        )
        .unwrap();
        let conn = crate::model::build_connectivity(&spec);
        (spec, conn)
    }

    fn nodes_at(gap: f64) -> NodeSet {
        NodeSet {
            positions: vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(gap, 0.0, 0.0),
                Vec3::new(0.0, 0.0, -0.4),
                Vec3::new(gap, 0.0, -0.4),
            ],
        }
    }

    #[test]
    fn stretched_cable_energy() {
        // K = 1, b = 0, endpoints 2 m apart: e = 0.5 * 1 * 2^2 = 2.
        let (spec, conn) = pair(1.0, 0.0);
        let geo = evaluate_energy(&spec, &conn, &nodes_at(2.0));
        assert_relative_eq!(geo.total, 2.0, epsilon = 1e-15);
        assert!(geo.taut[0]);
        assert_relative_eq!(geo.lengths[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn slack_cable_stores_nothing() {
        // K = 5, b = 2, length 1: slack.
        let (spec, conn) = pair(5.0, 2.0);
        let geo = evaluate_energy(&spec, &conn, &nodes_at(1.0));
        assert_eq!(geo.total, 0.0);
        assert_eq!(geo.energies[0], 0.0);
        assert!(!geo.taut[0]);
    }

    #[test]
    fn tension_mask_is_strict() {
        // Exactly at natural length the cable is not taut.
        let (spec, conn) = pair(5.0, 1.0);
        let geo = evaluate_energy(&spec, &conn, &nodes_at(1.0));
        assert!(!geo.taut[0]);
        assert_eq!(geo.total, 0.0);
    }

    #[test]
    fn all_slack_means_zero_gradients() {
        let (spec, conn) = pair(5.0, 10.0);
        let pose = PoseState::new(
            &spec,
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)],
            vec![FRAC_PI_2, FRAC_PI_2],
            vec![0.3, -0.3],
        )
        .unwrap();
        let (geo, grads) = evaluate_gradients(&spec, &conn, &pose);
        assert_eq!(geo.total, 0.0);
        assert_eq!(grads.grad_center_norm, 0.0);
        assert_eq!(grads.grad_yaw_norm, 0.0);
    }

    #[test]
    fn vertical_strut_has_no_yaw_gradient() {
        let (spec, conn) = pair(1.0, 0.0);
        let pose = PoseState::new(
            &spec,
            vec![Vec3::zeros(), Vec3::new(1.0, 0.5, 0.0)],
            vec![0.0, FRAC_PI_2],
            vec![0.9, 0.1],
        )
        .unwrap();
        let (_, grads) = evaluate_gradients(&spec, &conn, &pose);
        assert_eq!(grads.grad_yaws[0], 0.0);
        assert!(grads.grad_yaws[1].abs() > 0.0);
    }

    #[test]
    fn hand_checked_center_gradient() {
        // Two vertical struts, cable between their plus ends, centres 2 m
        // apart horizontally: grad wrt centre A is -K * v with v = b - a.
        let (spec, conn) = pair(3.0, 0.0);
        let pose = PoseState::new(
            &spec,
            vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let (_, grads) = evaluate_gradients(&spec, &conn, &pose);
        assert_relative_eq!(grads.grad_centers[0], Vec3::new(-6.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(grads.grad_centers[1], Vec3::new(6.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn strut_gradient_matches_full_gradient() {
        let (spec, conn) = pair(2.0, 0.1);
        let pose = PoseState::new(
            &spec,
            vec![Vec3::new(0.1, -0.2, 0.0), Vec3::new(0.8, 0.4, 0.2)],
            vec![1.1, 2.0],
            vec![0.4, -1.3],
        )
        .unwrap();
        let (_, full) = evaluate_gradients(&spec, &conn, &pose);
        for strut in 0..2 {
            let (gc, gy) = strut_gradient(&spec, &conn, &pose, strut, &[0]);
            assert_relative_eq!(gc, full.grad_centers[strut], epsilon = 1e-14);
            assert_relative_eq!(gy, full.grad_yaws[strut], epsilon = 1e-14);
        }
    }

    #[test]
    fn masking_zeroes_frozen_entries() {
        let (mut spec, conn) = pair(1.0, 0.0);
        spec.anchors.freeze_center[0] = true;
        spec.anchors.freeze_yaw[1] = true;
        let pose = PoseState::new(
            &spec,
            vec![Vec3::zeros(), Vec3::new(1.0, 0.7, 0.1)],
            vec![1.0, 1.2],
            vec![0.2, 0.9],
        )
        .unwrap();
        let (_, masked) = evaluate_gradients(&spec, &conn, &pose);
        let (_, raw) = evaluate_gradients_unmasked(&spec, &conn, &pose);
        assert_eq!(masked.grad_centers[0], Vec3::zeros());
        assert_eq!(masked.grad_yaws[1], 0.0);
        assert!(raw.grad_centers[0].norm() > 0.0);
        assert_relative_eq!(masked.grad_centers[1], raw.grad_centers[1], epsilon = 1e-15);
    }

    #[test]
    fn convergence_check_compares_norms() {
        let grads = EnergyGradients::from_parts(
            vec![Vec3::new(1e-8, 0.0, 0.0)],
            vec![1e-8],
        );
        assert!(convergence_check(&grads, 1e-6, 1e-6));
        assert!(!convergence_check(&grads, 1e-9, 1e-6));
    }
}
