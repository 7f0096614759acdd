//! Structure file round-trips and the bundled fixture's advertised shape.

use std::fs;
use std::path::Path;

use tenshape_core::kinematics::NodeSet;
use tenshape_core::model::{
    build_connectivity, parse_structure, serialize_structure, CableClass,
};
use tenshape_core::synth::{make_prism, make_tm40_default, random_structure};
use tenshape_core::Vec3;

fn fixture(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn serialize_then_parse_is_identity_on_random_specs() {
    for seed in 0..150 {
        let (spec, _) = random_structure(seed);
        let text = serialize_structure(&spec);
        let reparsed = parse_structure(&text)
            .unwrap_or_else(|e| panic!("seed {seed}: reparse failed: {e}\n{text}"));
        assert_eq!(spec, reparsed, "seed {seed}");
    }
}

#[test]
fn generated_fixtures_round_trip_exactly() {
    let tm40 = make_tm40_default().unwrap().spec;
    assert_eq!(tm40, parse_structure(&serialize_structure(&tm40)).unwrap());
    let twist = std::f64::consts::PI / 2.0 + std::f64::consts::PI / 3.0;
    let prism = make_prism(3, 0.2, 0.35, twist).unwrap().spec;
    assert_eq!(prism, parse_structure(&serialize_structure(&prism)).unwrap());
}

#[test]
fn bundled_tm40_file_has_the_advertised_shape() {
    let spec = parse_structure(&fixture("tm40.structure")).unwrap();
    assert_eq!(spec.strut_count(), 20);
    assert_eq!(spec.node_count(), 40);
    assert_eq!(spec.cable_count(), 80);
    let active = spec
        .cables
        .iter()
        .filter(|c| c.class == CableClass::Active)
        .count();
    assert_eq!(active, 40);
    assert_eq!(spec.cable_count() - active, 40);
    // The bundled file matches the generator output byte for byte.
    assert_eq!(spec, make_tm40_default().unwrap().spec);
}

#[test]
fn bundled_prism_file_matches_generator() {
    let spec = parse_structure(&fixture("prism3.structure")).unwrap();
    let twist = std::f64::consts::PI / 2.0 + std::f64::consts::PI / 3.0;
    assert_eq!(spec, make_prism(3, 0.2, 0.35, twist).unwrap().spec);
}

#[test]
fn connectivity_annihilates_global_translation() {
    for seed in 0..30 {
        let (spec, pose) = random_structure(seed);
        let conn = build_connectivity(&spec);
        let nodes = tenshape_core::kinematics::nodes_from_pose(&spec, &pose).unwrap();
        let offset = Vec3::new(-3.4, 0.27, 11.0);
        let moved: Vec<Vec3> = nodes.positions.iter().map(|p| p + offset).collect();
        let base = conn.cable_vectors(&nodes.positions);
        let shifted = conn.cable_vectors(&moved);
        for (a, b) in base.iter().zip(&shifted) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn unit_height_markers_give_unit_length() {
    let nodes = NodeSet {
        positions: vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.3, -0.2, 1.0),
            Vec3::new(0.1, 0.4, 0.0),
            Vec3::new(-0.4, 0.2, 0.0),
        ],
    };
    let d = tenshape_core::kinematics::manipulator_length(&nodes, &[0, 1], &[2, 3]).unwrap();
    let expected = (Vec3::new(0.15, -0.1, 1.0) - Vec3::new(-0.15, 0.3, 0.0)).norm();
    assert!((d - expected).abs() < 1e-15);
}
