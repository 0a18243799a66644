//! Built-in shape corpora.
//!
//! Every shape clears [`ShapeSpec::validate`]: strictly inside the unit
//! cube, origin interior, positive parameters. Feature radii stay at 0.2
//! or above so a coarse tri-plane can actually represent each shape.

use super::shape::{Pose, ShapeSpec};

fn pose(axis: [f32; 3], angle_deg: f32, translate: [f32; 3]) -> Pose {
    Pose {
        axis,
        angle_deg,
        translate,
    }
}

/// Eight varied shapes for training the compressor: the four primitives in
/// different poses plus two unions.
pub fn training_corpus() -> Vec<(String, ShapeSpec)> {
    let z = [0.0, 0.0, 1.0];
    let x = [1.0, 0.0, 0.0];
    vec![
        (
            "sphere".to_string(),
            ShapeSpec::Sphere {
                radius: 0.55,
                pose: Pose::default(),
            },
        ),
        (
            "box_rot".to_string(),
            ShapeSpec::Box {
                half_extents: [0.5, 0.35, 0.45],
                pose: pose(z, 30.0, [0.0, 0.0, 0.0]),
            },
        ),
        (
            "sphere_off".to_string(),
            ShapeSpec::Sphere {
                radius: 0.4,
                pose: pose(z, 0.0, [0.15, -0.1, 0.05]),
            },
        ),
        (
            "torus_x".to_string(),
            ShapeSpec::Torus {
                ring_radius: 0.4,
                tube_radius: 0.22,
                pose: pose(x, 90.0, [0.3, 0.0, 0.0]),
            },
        ),
        (
            "capsule_y".to_string(),
            ShapeSpec::Capsule {
                half_length: 0.35,
                radius: 0.28,
                pose: Pose::default(),
            },
        ),
        (
            "capsule_x".to_string(),
            ShapeSpec::Capsule {
                half_length: 0.3,
                radius: 0.25,
                pose: pose(z, 90.0, [0.0, 0.1, 0.0]),
            },
        ),
        (
            "two_spheres".to_string(),
            ShapeSpec::Union {
                a: Box::new(ShapeSpec::Sphere {
                    radius: 0.35,
                    pose: pose(z, 0.0, [-0.25, 0.0, 0.0]),
                }),
                b: Box::new(ShapeSpec::Sphere {
                    radius: 0.35,
                    pose: pose(z, 0.0, [0.25, 0.0, 0.0]),
                }),
            },
        ),
        (
            "box_plus_rod".to_string(),
            ShapeSpec::Union {
                a: Box::new(ShapeSpec::Box {
                    half_extents: [0.42, 0.22, 0.22],
                    pose: Pose::default(),
                }),
                b: Box::new(ShapeSpec::Capsule {
                    half_length: 0.3,
                    radius: 0.22,
                    pose: pose(x, 90.0, [0.0, 0.0, 0.0]),
                }),
            },
        ),
    ]
}

/// Four visually distinct shapes for alignment experiments.
pub fn mini_corpus() -> Vec<(String, ShapeSpec)> {
    let all = training_corpus();
    let keep = ["sphere", "box_rot", "torus_x", "capsule_y"];
    all.into_iter()
        .filter(|(name, _)| keep.contains(&name.as_str()))
        .collect()
}
