//! Sphere-traced depth rendering from fixed viewpoints.

use super::shape::ShapeSpec;
use super::vec3::{vec3, Vec3};
use crate::error::{Error, Result};

/// Distance of every camera from the origin.
pub const CAMERA_RADIUS: f32 = 2.0;
/// Vertical field of view of every camera, degrees.
pub const DEFAULT_VFOV_DEG: f32 = 50.0;

const HIT_TOL: f32 = 1e-3;
const T_MAX: f32 = 4.0;
const MAX_STEPS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub vfov_deg: f32,
}

impl Camera {
    /// Camera at `position` looking at the origin. The image "up" follows
    /// world +z, except at the poles where world +x takes over.
    pub fn look_at_origin(position: Vec3, vfov_deg: f32) -> Camera {
        let forward = (-position).normalized();
        let mut up_ref = vec3(0.0, 0.0, 1.0);
        if forward.cross(up_ref).norm() < 1e-6 {
            up_ref = vec3(1.0, 0.0, 0.0);
        }
        let right = forward.cross(up_ref).normalized();
        let up = right.cross(forward);
        Camera {
            position,
            forward,
            right,
            up,
            vfov_deg,
        }
    }

    /// World-space ray direction through pixel (row, col) of a d×d image.
    /// Row 0 is the top of the image; pixel centers are offset half a texel.
    pub fn ray_dir(&self, row: usize, col: usize, d: usize) -> Vec3 {
        let tan_half = (self.vfov_deg.to_radians() * 0.5).tan();
        let u = ((col as f32 + 0.5) / d as f32 * 2.0 - 1.0) * tan_half;
        let v = (1.0 - (row as f32 + 0.5) / d as f32 * 2.0) * tan_half;
        (self.forward + self.right * u + self.up * v).normalized()
    }
}

/// Square depth image. `data[row * resolution + col]` is the ray length at
/// the hit, or 0 when the ray missed.
#[derive(Debug, Clone)]
pub struct DepthImage {
    pub resolution: usize,
    pub data: Vec<f32>,
    pub camera: Camera,
    pub camera_index: usize,
}

impl DepthImage {
    pub fn silhouette_pixels(&self) -> usize {
        self.data.iter().filter(|&&d| d > 0.0).count()
    }
}

/// `v` viewpoints spread evenly over the radius-2 sphere by the Fibonacci
/// lattice: latitudes step uniformly in z while longitudes advance by the
/// golden angle, which keeps neighboring points near-equidistant.
pub fn fibonacci_cameras(v: usize) -> Vec<Camera> {
    let golden_angle = std::f64::consts::PI * (3.0 - (5.0f64).sqrt());
    (0..v)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / v as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            let dir = vec3(
                (r * phi.cos()) as f32,
                (r * phi.sin()) as f32,
                z as f32,
            );
            Camera::look_at_origin(dir * CAMERA_RADIUS, DEFAULT_VFOV_DEG)
        })
        .collect()
}

fn trace_ray(spec: &ShapeSpec, origin: Vec3, dir: Vec3) -> f32 {
    let mut t = 0.0f32;
    for _ in 0..MAX_STEPS {
        let d = spec.sdf(origin + dir * t);
        if d < HIT_TOL {
            return t;
        }
        t += d;
        if t > T_MAX {
            return 0.0;
        }
    }
    0.0
}

/// Renders the shape from camera `camera_index` of the `v`-camera rig by
/// sphere tracing: each step advances by the SDF value, a hit registers
/// below 1e-3, and rays miss past length 4 or 128 steps.
pub fn render_depth(
    spec: &ShapeSpec,
    camera_index: usize,
    v: usize,
    d: usize,
) -> Result<DepthImage> {
    if v == 0 || camera_index >= v {
        return Err(Error::config(format!(
            "render_depth: camera index {} out of range for {} cameras",
            camera_index, v
        )));
    }
    if d == 0 {
        return Err(Error::config("render_depth: resolution must be positive".to_string()));
    }
    let camera = fibonacci_cameras(v)[camera_index];
    let mut data = vec![0.0f32; d * d];
    for row in 0..d {
        for col in 0..d {
            let dir = camera.ray_dir(row, col, d);
            data[row * d + col] = trace_ray(spec, camera.position, dir);
        }
    }
    Ok(DepthImage {
        resolution: d,
        data,
        camera,
        camera_index,
    })
}

/// The camera seeing the most of the shape: argmax of silhouette pixel
/// count over all `v` views, lowest index winning ties.
pub fn select_best_view(spec: &ShapeSpec, v: usize, d: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::config("select_best_view: need at least one camera".to_string()));
    }
    let mut best = 0usize;
    let mut best_count = 0usize;
    for i in 0..v {
        let count = render_depth(spec, i, v, d)?.silhouette_pixels();
        if count > best_count {
            best_count = count;
            best = i;
        }
    }
    Ok(best)
}
