//! Analytic signed distance shapes.
//!
//! Every shape here is an exact SDF: the value is the true signed Euclidean
//! distance (negative inside), and the analytic normal is its gradient,
//! unit-length away from medial loci. Shapes live in the unit cube
//! `[-1, 1]^3` and must contain the origin; [`ShapeSpec::validate`] enforces
//! both.

use serde::{Deserialize, Serialize};

use super::vec3::{vec3, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::io::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(default = "default_axis")]
    pub axis: [f32; 3],
    #[serde(default)]
    pub angle_deg: f32,
    #[serde(default)]
    pub translate: [f32; 3],
}

fn default_axis() -> [f32; 3] {
    [0.0, 0.0, 1.0]
}

impl Default for Pose {
    fn default() -> Self {
        Pose {
            axis: default_axis(),
            angle_deg: 0.0,
            translate: [0.0; 3],
        }
    }
}

impl Pose {
    pub fn rotation(&self) -> Mat3 {
        Mat3::rotation(self.axis, self.angle_deg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Sphere {
        radius: f32,
        #[serde(default)]
        pose: Pose,
    },
    Box {
        half_extents: [f32; 3],
        #[serde(default)]
        pose: Pose,
    },
    /// Ring around the local z axis.
    Torus {
        ring_radius: f32,
        tube_radius: f32,
        #[serde(default)]
        pose: Pose,
    },
    /// Segment of half-length along the local y axis, inflated by radius.
    Capsule {
        half_length: f32,
        radius: f32,
        #[serde(default)]
        pose: Pose,
    },
    /// Min-combination of two primitives. Parts may not nest further.
    Union {
        a: std::boxed::Box<ShapeSpec>,
        b: std::boxed::Box<ShapeSpec>,
    },
}

fn sd_local(spec: &ShapeSpec, p: Vec3) -> f32 {
    match spec {
        ShapeSpec::Sphere { radius, .. } => p.norm() - radius,
        ShapeSpec::Box { half_extents, .. } => {
            let q = p.abs() - Vec3::from_array(*half_extents);
            let outside = vec3(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
            outside.norm() + q.max_component().min(0.0)
        }
        ShapeSpec::Torus {
            ring_radius,
            tube_radius,
            ..
        } => {
            let l = (p.x * p.x + p.y * p.y).sqrt();
            let d = l - ring_radius;
            (d * d + p.z * p.z).sqrt() - tube_radius
        }
        ShapeSpec::Capsule {
            half_length,
            radius,
            ..
        } => {
            let t = (p.y / (2.0 * half_length) + 0.5).clamp(0.0, 1.0);
            let c = vec3(0.0, -half_length + t * 2.0 * half_length, 0.0);
            (p - c).norm() - radius
        }
        ShapeSpec::Union { .. } => unreachable!("union handled before local eval"),
    }
}

fn normal_local(spec: &ShapeSpec, p: Vec3) -> Vec3 {
    match spec {
        ShapeSpec::Sphere { .. } => {
            if p.norm() > 1e-9 {
                p.normalized()
            } else {
                vec3(0.0, 0.0, 1.0) // center: direction is arbitrary
            }
        }
        ShapeSpec::Box { half_extents, .. } => {
            let q = p.abs() - Vec3::from_array(*half_extents);
            let outside = vec3(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
            let sign = vec3(
                if p.x >= 0.0 { 1.0 } else { -1.0 },
                if p.y >= 0.0 { 1.0 } else { -1.0 },
                if p.z >= 0.0 { 1.0 } else { -1.0 },
            );
            if outside.norm() > 1e-9 {
                let o = outside.normalized();
                vec3(o.x * sign.x, o.y * sign.y, o.z * sign.z)
            } else {
                // inside (or on a face): pushes out along the least-deep
                // axis; ties pick x before y before z
                let m = q.max_component();
                if q.x == m {
                    vec3(sign.x, 0.0, 0.0)
                } else if q.y == m {
                    vec3(0.0, sign.y, 0.0)
                } else {
                    vec3(0.0, 0.0, sign.z)
                }
            }
        }
        ShapeSpec::Torus { ring_radius, .. } => {
            let l = (p.x * p.x + p.y * p.y).sqrt();
            let (cx, cy) = if l > 1e-9 {
                (p.x / l, p.y / l)
            } else {
                (1.0, 0.0) // on the z axis every radial direction ties
            };
            let d = l - ring_radius;
            let qn = (d * d + p.z * p.z).sqrt();
            if qn > 1e-9 {
                vec3(d / qn * cx, d / qn * cy, p.z / qn)
            } else {
                vec3(0.0, 0.0, 1.0) // on the core circle
            }
        }
        ShapeSpec::Capsule { half_length, .. } => {
            let t = (p.y / (2.0 * half_length) + 0.5).clamp(0.0, 1.0);
            let c = vec3(0.0, -half_length + t * 2.0 * half_length, 0.0);
            let d = p - c;
            if d.norm() > 1e-9 {
                d.normalized()
            } else {
                vec3(1.0, 0.0, 0.0) // on the spine
            }
        }
        ShapeSpec::Union { .. } => unreachable!(),
    }
}

impl ShapeSpec {
    pub fn pose(&self) -> Pose {
        match self {
            ShapeSpec::Sphere { pose, .. }
            | ShapeSpec::Box { pose, .. }
            | ShapeSpec::Torus { pose, .. }
            | ShapeSpec::Capsule { pose, .. } => *pose,
            ShapeSpec::Union { .. } => Pose::default(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ShapeSpec::Sphere { .. } => "sphere",
            ShapeSpec::Box { .. } => "box",
            ShapeSpec::Torus { .. } => "torus",
            ShapeSpec::Capsule { .. } => "capsule",
            ShapeSpec::Union { .. } => "union",
        }
    }

    /// Signed distance at a world point.
    pub fn sdf(&self, p: Vec3) -> f32 {
        match self {
            ShapeSpec::Union { a, b } => a.sdf(p).min(b.sdf(p)),
            _ => {
                let pose = self.pose();
                let rot = pose.rotation();
                let local = rot.transpose_mul_vec(p - Vec3::from_array(pose.translate));
                sd_local(self, local)
            }
        }
    }

    /// Unit outward normal (the SDF gradient). On medial loci, where the
    /// gradient is undefined, a documented fallback direction is returned.
    pub fn normal(&self, p: Vec3) -> Vec3 {
        match self {
            ShapeSpec::Union { a, b } => {
                // the closer part owns the gradient; ties go to `a`
                if a.sdf(p) <= b.sdf(p) {
                    a.normal(p)
                } else {
                    b.normal(p)
                }
            }
            _ => {
                let pose = self.pose();
                let rot = pose.rotation();
                let local = rot.transpose_mul_vec(p - Vec3::from_array(pose.translate));
                rot.mul_vec(normal_local(self, local))
            }
        }
    }

    /// Half-extent of a local axis-aligned bounding box (shapes are
    /// center-symmetric in their local frame).
    fn local_half_extent(&self) -> Vec3 {
        match self {
            ShapeSpec::Sphere { radius, .. } => vec3(*radius, *radius, *radius),
            ShapeSpec::Box { half_extents, .. } => Vec3::from_array(*half_extents),
            ShapeSpec::Torus {
                ring_radius,
                tube_radius,
                ..
            } => vec3(
                ring_radius + tube_radius,
                ring_radius + tube_radius,
                *tube_radius,
            ),
            ShapeSpec::Capsule {
                half_length,
                radius,
                ..
            } => vec3(*radius, half_length + radius, *radius),
            ShapeSpec::Union { .. } => unreachable!(),
        }
    }

    /// Conservative world-space bound: `|p_i| <= bound_i` contains the shape.
    pub fn world_bound(&self) -> Vec3 {
        match self {
            ShapeSpec::Union { a, b } => {
                let (ba, bb) = (a.world_bound(), b.world_bound());
                vec3(ba.x.max(bb.x), ba.y.max(bb.y), ba.z.max(bb.z))
            }
            _ => {
                let pose = self.pose();
                let ext = pose.rotation().abs_mul_vec(self.local_half_extent());
                let t = Vec3::from_array(pose.translate);
                vec3(
                    t.x.abs() + ext.x,
                    t.y.abs() + ext.y,
                    t.z.abs() + ext.z,
                )
            }
        }
    }

    /// Interior volume; exact for primitives, unavailable for unions (the
    /// parts may overlap).
    pub fn analytic_volume(&self) -> Option<f32> {
        use std::f32::consts::PI;
        match self {
            ShapeSpec::Sphere { radius, .. } => Some(4.0 / 3.0 * PI * radius.powi(3)),
            ShapeSpec::Box { half_extents, .. } => {
                Some(8.0 * half_extents[0] * half_extents[1] * half_extents[2])
            }
            ShapeSpec::Torus {
                ring_radius,
                tube_radius,
                ..
            } => Some(2.0 * PI * PI * ring_radius * tube_radius * tube_radius),
            ShapeSpec::Capsule {
                half_length,
                radius,
                ..
            } => Some(PI * radius * radius * 2.0 * half_length + 4.0 / 3.0 * PI * radius.powi(3)),
            ShapeSpec::Union { .. } => None,
        }
    }

    /// Checks parameters are positive, the shape sits strictly inside the
    /// unit cube, the origin is interior, and unions do not nest.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f32) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("shape: {} must be positive, got {}", name, v)))
            }
        }
        match self {
            ShapeSpec::Sphere { radius, .. } => positive("radius", *radius)?,
            ShapeSpec::Box { half_extents, .. } => {
                for (i, &h) in half_extents.iter().enumerate() {
                    positive(&format!("half_extents[{}]", i), h)?;
                }
            }
            ShapeSpec::Torus {
                ring_radius,
                tube_radius,
                ..
            } => {
                positive("ring_radius", *ring_radius)?;
                positive("tube_radius", *tube_radius)?;
                if tube_radius >= ring_radius {
                    return Err(Error::config(format!(
                        "shape: tube_radius {} must be below ring_radius {}",
                        tube_radius, ring_radius
                    )));
                }
            }
            ShapeSpec::Capsule {
                half_length,
                radius,
                ..
            } => {
                positive("half_length", *half_length)?;
                positive("radius", *radius)?;
            }
            ShapeSpec::Union { a, b } => {
                if matches!(**a, ShapeSpec::Union { .. }) || matches!(**b, ShapeSpec::Union { .. }) {
                    return Err(Error::config("shape: unions may not nest".to_string()));
                }
                a.validate()?;
                b.validate()?;
            }
        }
        let bound = self.world_bound();
        if bound.x >= 1.0 || bound.y >= 1.0 || bound.z >= 1.0 {
            return Err(Error::config(format!(
                "shape: bounding extent ({}, {}, {}) must stay strictly inside the unit cube",
                bound.x, bound.y, bound.z
            )));
        }
        if self.sdf(Vec3::ZERO) >= 0.0 {
            return Err(Error::config(
                "shape: the origin must be interior (sdf(0) < 0)".to_string(),
            ));
        }
        Ok(())
    }
}

fn write_pose(m: &mut Manifest, prefix: &str, pose: &Pose) {
    m.set(&format!("{}pose.axis.x", prefix), pose.axis[0]);
    m.set(&format!("{}pose.axis.y", prefix), pose.axis[1]);
    m.set(&format!("{}pose.axis.z", prefix), pose.axis[2]);
    m.set(&format!("{}pose.angle_deg", prefix), pose.angle_deg);
    m.set(&format!("{}pose.translate.x", prefix), pose.translate[0]);
    m.set(&format!("{}pose.translate.y", prefix), pose.translate[1]);
    m.set(&format!("{}pose.translate.z", prefix), pose.translate[2]);
}

fn read_pose(m: &Manifest, prefix: &str) -> Result<Pose> {
    Ok(Pose {
        axis: [
            m.require_parsed(&format!("{}pose.axis.x", prefix))?,
            m.require_parsed(&format!("{}pose.axis.y", prefix))?,
            m.require_parsed(&format!("{}pose.axis.z", prefix))?,
        ],
        angle_deg: m.require_parsed(&format!("{}pose.angle_deg", prefix))?,
        translate: [
            m.require_parsed(&format!("{}pose.translate.x", prefix))?,
            m.require_parsed(&format!("{}pose.translate.y", prefix))?,
            m.require_parsed(&format!("{}pose.translate.z", prefix))?,
        ],
    })
}

/// Flattens a spec into manifest keys under `prefix` (e.g. `shape.`).
pub fn spec_to_manifest(spec: &ShapeSpec, prefix: &str, m: &mut Manifest) {
    m.set(&format!("{}kind", prefix), spec.kind_name());
    match spec {
        ShapeSpec::Sphere { radius, pose } => {
            m.set(&format!("{}radius", prefix), radius);
            write_pose(m, prefix, pose);
        }
        ShapeSpec::Box { half_extents, pose } => {
            m.set(&format!("{}half_extents.x", prefix), half_extents[0]);
            m.set(&format!("{}half_extents.y", prefix), half_extents[1]);
            m.set(&format!("{}half_extents.z", prefix), half_extents[2]);
            write_pose(m, prefix, pose);
        }
        ShapeSpec::Torus {
            ring_radius,
            tube_radius,
            pose,
        } => {
            m.set(&format!("{}ring_radius", prefix), ring_radius);
            m.set(&format!("{}tube_radius", prefix), tube_radius);
            write_pose(m, prefix, pose);
        }
        ShapeSpec::Capsule {
            half_length,
            radius,
            pose,
        } => {
            m.set(&format!("{}half_length", prefix), half_length);
            m.set(&format!("{}radius", prefix), radius);
            write_pose(m, prefix, pose);
        }
        ShapeSpec::Union { a, b } => {
            spec_to_manifest(a, &format!("{}a.", prefix), m);
            spec_to_manifest(b, &format!("{}b.", prefix), m);
        }
    }
}

pub fn spec_from_manifest(m: &Manifest, prefix: &str) -> Result<ShapeSpec> {
    let kind = m.require(&format!("{}kind", prefix))?;
    let spec = match kind {
        "sphere" => ShapeSpec::Sphere {
            radius: m.require_parsed(&format!("{}radius", prefix))?,
            pose: read_pose(m, prefix)?,
        },
        "box" => ShapeSpec::Box {
            half_extents: [
                m.require_parsed(&format!("{}half_extents.x", prefix))?,
                m.require_parsed(&format!("{}half_extents.y", prefix))?,
                m.require_parsed(&format!("{}half_extents.z", prefix))?,
            ],
            pose: read_pose(m, prefix)?,
        },
        "torus" => ShapeSpec::Torus {
            ring_radius: m.require_parsed(&format!("{}ring_radius", prefix))?,
            tube_radius: m.require_parsed(&format!("{}tube_radius", prefix))?,
            pose: read_pose(m, prefix)?,
        },
        "capsule" => ShapeSpec::Capsule {
            half_length: m.require_parsed(&format!("{}half_length", prefix))?,
            radius: m.require_parsed(&format!("{}radius", prefix))?,
            pose: read_pose(m, prefix)?,
        },
        "union" => ShapeSpec::Union {
            a: std::boxed::Box::new(spec_from_manifest(m, &format!("{}a.", prefix))?),
            b: std::boxed::Box::new(spec_from_manifest(m, &format!("{}b.", prefix))?),
        },
        other => {
            return Err(Error::data(format!("shape manifest: unknown kind '{}'", other)));
        }
    };
    Ok(spec)
}
