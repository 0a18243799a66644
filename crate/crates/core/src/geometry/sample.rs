//! Seeded sampling of surface and volume points from a shape's SDF.

use super::shape::ShapeSpec;
use super::vec3::{vec3, Vec3};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Surface points with exact normals plus uniform volume points with exact
/// signed distances. The training targets for the SDF decoders.
#[derive(Debug, Clone)]
pub struct SdfSampleBatch {
    pub surface_points: Vec<Vec3>,
    pub surface_normals: Vec<Vec3>,
    pub volume_points: Vec<Vec3>,
    pub volume_sdf: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major M×3 flattening for tensor interop.
    pub fn points_flat(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(&p.to_array());
        }
        out
    }
}

const PROJECT_TOL: f32 = 1e-5;
const PROJECT_MAX_ITERS: usize = 64;
const ATTEMPTS_PER_POINT: usize = 8;

fn uniform_cube_point(rng: &mut Rng) -> Vec3 {
    vec3(
        rng.uniform_in(-1.0, 1.0) as f32,
        rng.uniform_in(-1.0, 1.0) as f32,
        rng.uniform_in(-1.0, 1.0) as f32,
    )
}

/// Walks a point onto the zero level set along the SDF gradient. For an
/// exact SDF each step `p - sdf(p) * n(p)` lands on the surface directly
/// unless the start sits near a medial locus, where a few more steps settle
/// it. Returns None when 64 steps were not enough.
fn project_to_surface(spec: &ShapeSpec, start: Vec3) -> Option<Vec3> {
    let mut p = start;
    for _ in 0..PROJECT_MAX_ITERS {
        let d = spec.sdf(p);
        if d.abs() <= PROJECT_TOL {
            return Some(p);
        }
        p = p - spec.normal(p) * d;
    }
    None
}

/// Draws `n_surface` on-surface points (with analytic normals) and
/// `n_volume` uniform cube points (with exact signed distances).
///
/// Surface points come from projecting uniform cube draws onto the zero
/// level set. A draw that does not converge is retried with a fresh draw;
/// if more than 1% of all draws fail the shape is considered ill-posed and
/// an error is returned.
pub fn sample_batch(
    spec: &ShapeSpec,
    n_surface: usize,
    n_volume: usize,
    rng: &mut Rng,
) -> Result<SdfSampleBatch> {
    if n_surface == 0 || n_volume == 0 {
        return Err(Error::config(
            "sample_batch: point counts must be positive".to_string(),
        ));
    }
    let mut surface_points = Vec::with_capacity(n_surface);
    let mut surface_normals = Vec::with_capacity(n_surface);
    let mut attempts = 0usize;
    let mut failures = 0usize;
    while surface_points.len() < n_surface {
        let mut projected = None;
        for _ in 0..ATTEMPTS_PER_POINT {
            attempts += 1;
            let start = uniform_cube_point(rng);
            match project_to_surface(spec, start) {
                Some(p) => {
                    projected = Some(p);
                    break;
                }
                None => failures += 1,
            }
        }
        let p = projected.ok_or_else(|| {
            Error::numeric(format!(
                "sample_batch: surface projection repeatedly failed for {} shape",
                spec.kind_name()
            ))
        })?;
        surface_points.push(p);
        surface_normals.push(spec.normal(p));
    }
    if failures as f64 > 0.01 * attempts as f64 {
        return Err(Error::numeric(format!(
            "sample_batch: {} of {} projections failed (> 1%); shape is ill-posed",
            failures, attempts
        )));
    }

    let mut volume_points = Vec::with_capacity(n_volume);
    let mut volume_sdf = Vec::with_capacity(n_volume);
    for _ in 0..n_volume {
        let p = uniform_cube_point(rng);
        volume_points.push(p);
        volume_sdf.push(spec.sdf(p));
    }

    Ok(SdfSampleBatch {
        surface_points,
        surface_normals,
        volume_points,
        volume_sdf,
    })
}

/// Dense surface point cloud with normals: the compressor's raw input.
pub fn point_cloud(spec: &ShapeSpec, m: usize, rng: &mut Rng) -> Result<PointCloud> {
    let batch = sample_batch(spec, m, 1, rng)?;
    Ok(PointCloud {
        points: batch.surface_points,
        normals: Some(batch.surface_normals),
    })
}
