//! Tri-plane feature grids: point-to-plane projection, bilinear lookup,
//! and the SDF query head.
//!
//! A tri-plane is a `[3, C, R, R]` tensor; plane order is fixed as XY, XZ,
//! YZ, and a plane's two grid axes follow the coordinate pair in that name.
//! Continuous coordinates use cell-center alignment: a coordinate
//! `u` in [-1, 1] maps to grid position `g = (u + 1) / 2 * (R - 1)`, so the
//! corners of the cube land exactly on corner cells.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::nn::{Mlp, ParamSet};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which stage of the pipeline a tri-plane belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneRole {
    Initial,
    Latent,
    Reconstructed,
}

impl PlaneRole {
    pub fn name(self) -> &'static str {
        match self {
            PlaneRole::Initial => "initial",
            PlaneRole::Latent => "latent",
            PlaneRole::Reconstructed => "reconstructed",
        }
    }

    pub fn from_name(s: &str) -> Result<PlaneRole> {
        match s {
            "initial" => Ok(PlaneRole::Initial),
            "latent" => Ok(PlaneRole::Latent),
            "reconstructed" => Ok(PlaneRole::Reconstructed),
            other => Err(Error::data(format!("unknown plane role '{}'", other))),
        }
    }
}

/// The coordinate pair each plane reads: XY, XZ, YZ.
pub const PLANE_AXES: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

#[derive(Debug, Clone)]
pub struct TriPlane {
    /// `[3, C, R, R]`
    pub planes: Tensor,
    pub role: PlaneRole,
}

impl TriPlane {
    pub fn new(planes: Tensor, role: PlaneRole) -> Result<TriPlane> {
        let s = planes.shape();
        if s.len() != 4 || s[0] != 3 || s[2] != s[3] {
            return Err(Error::shape(format!(
                "triplane: want [3, C, R, R], got {:?}",
                s
            )));
        }
        Ok(TriPlane { planes, role })
    }

    pub fn channels(&self) -> usize {
        self.planes.shape()[1]
    }

    pub fn resolution(&self) -> usize {
        self.planes.shape()[2]
    }

    /// Plane `k` as `[C, R, R]` (a differentiable slice).
    pub fn plane(&self, k: usize) -> Result<Tensor> {
        let (c, r) = (self.channels(), self.resolution());
        self.planes.narrow(0, k, 1)?.reshape(&[c, r, r])
    }
}

/// The grid cell a coordinate falls into at projection time:
/// `clamp(floor((u + 1) / 2 * R), 0, R - 1)`.
fn cell_index(u: f32, r: usize) -> usize {
    let raw = ((u + 1.0) * 0.5 * r as f32).floor();
    (raw.max(0.0) as usize).min(r - 1)
}

/// Scatter-mean of per-point embeddings into the three planes: every cell
/// holds the mean of the embeddings that landed in it; untouched cells stay
/// zero. Differentiable with respect to the embeddings.
pub fn project_points(centers: &[Vec3], embeddings: &Tensor, r: usize) -> Result<TriPlane> {
    let es = embeddings.shape();
    if es.len() != 2 || es[0] != centers.len() {
        return Err(Error::shape(format!(
            "project_points: embeddings {:?} vs {} centers",
            es,
            centers.len()
        )));
    }
    if r < 2 {
        return Err(Error::shape("project_points: resolution must be >= 2".to_string()));
    }
    let (n, c) = (es[0], es[1]);
    if n == 0 {
        return Err(Error::shape("project_points: no points".to_string()));
    }

    // per plane: the flat cell slot of every point, and per-cell point counts
    let mut slots = vec![vec![0usize; n]; 3];
    let mut counts = vec![vec![0u32; r * r]; 3];
    for (i, p) in centers.iter().enumerate() {
        let coords = p.to_array();
        for (k, (a, b)) in PLANE_AXES.iter().enumerate() {
            let iu = cell_index(coords[*a], r);
            let iv = cell_index(coords[*b], r);
            let slot = iu * r + iv;
            slots[k][i] = slot;
            counts[k][slot] += 1;
        }
    }

    let emb = embeddings.to_vec();
    let mut out = vec![0.0f32; 3 * c * r * r];
    for k in 0..3 {
        // accumulate sums in f64, then divide by the count
        let mut acc = vec![0.0f64; c * r * r];
        for i in 0..n {
            let slot = slots[k][i];
            for ch in 0..c {
                acc[ch * r * r + slot] += emb[i * c + ch] as f64;
            }
        }
        let base = k * c * r * r;
        for ch in 0..c {
            for slot in 0..r * r {
                let cnt = counts[k][slot];
                if cnt > 0 {
                    out[base + ch * r * r + slot] = (acc[ch * r * r + slot] / cnt as f64) as f32;
                }
            }
        }
    }

    let planes = Tensor::from_op(
        vec![3, c, r, r],
        out,
        vec![embeddings.clone()],
        "project_points",
        move |_, g, parents| {
            // d(emb[i][ch]) = sum over planes of g[k][ch][slot_i] / count
            let mut demb = vec![0.0f32; n * c];
            for k in 0..3 {
                let base = k * c * r * r;
                for i in 0..n {
                    let slot = slots[k][i];
                    let cnt = counts[k][slot] as f32;
                    for ch in 0..c {
                        demb[i * c + ch] += g[base + ch * r * r + slot] / cnt;
                    }
                }
            }
            parents[0].accumulate_grad(&demb);
        },
    );
    TriPlane::new(planes, PlaneRole::Initial)
}

/// Rows of `plane[:, iu[q], iv[q]]` as `[Q, C]`, scatter-adding gradients
/// back into the plane.
fn gather_cells(plane: &Tensor, iu: Vec<usize>, iv: Vec<usize>) -> Result<Tensor> {
    let s = plane.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("gather_cells: plane {:?}", s)));
    }
    let (c, r) = (s[0], s[1]);
    let q = iu.len();
    let data = plane.to_vec();
    let mut out = vec![0.0f32; q * c];
    for i in 0..q {
        let slot = iu[i] * r + iv[i];
        for ch in 0..c {
            out[i * c + ch] = data[ch * r * r + slot];
        }
    }
    Ok(Tensor::from_op(
        vec![q, c],
        out,
        vec![plane.clone()],
        "gather_cells",
        move |_, g, parents| {
            let mut dp = vec![0.0f32; c * r * r];
            for i in 0..q {
                let slot = iu[i] * r + iv[i];
                for ch in 0..c {
                    dp[ch * r * r + slot] += g[i * c + ch];
                }
            }
            parents[0].accumulate_grad(&dp);
        },
    ))
}

/// `1 - x` as a graph op.
fn one_minus(x: &Tensor) -> Tensor {
    x.neg().add_scalar(1.0)
}

/// Clamps to [0, 1] elementwise (gradient zero outside).
fn clamp01(x: &Tensor) -> Tensor {
    x.clamp_min(0.0).neg().clamp_min(-1.0).neg()
}

/// Batched bilinear interpolation of a `[C, R, R]` plane at continuous
/// coordinates `u, v` (each `[Q, 1]`, in [-1, 1]). Differentiable with
/// respect to the plane and the coordinates; queries are clamped at the
/// borders.
pub fn bilinear_lookup_batch(plane: &Tensor, u: &Tensor, v: &Tensor) -> Result<Tensor> {
    let s = plane.shape();
    if s.len() != 3 || s[1] != s[2] {
        return Err(Error::shape(format!(
            "bilinear_lookup: plane must be [C, R, R], got {:?}",
            s
        )));
    }
    let r = s[1];
    if r < 2 {
        return Err(Error::shape("bilinear_lookup: R must be >= 2".to_string()));
    }
    let q = u.shape()[0];
    if u.shape() != [q, 1] || v.shape() != [q, 1] {
        return Err(Error::shape(format!(
            "bilinear_lookup: coordinates must be [Q, 1], got {:?} and {:?}",
            u.shape(),
            v.shape()
        )));
    }

    let scale = (r - 1) as f32 / 2.0;
    let gu = u.add_scalar(1.0).mul_scalar(scale);
    let gv = v.add_scalar(1.0).mul_scalar(scale);

    // integer corners from the data; the fractional part stays on the tape
    let low_index = |g: &Tensor| -> (Vec<usize>, Tensor) {
        let idx: Vec<usize> = g
            .to_vec()
            .iter()
            .map(|&x| (x.max(0.0).floor() as usize).min(r - 2))
            .collect();
        let as_f32: Vec<f32> = idx.iter().map(|&i| i as f32).collect();
        let t = Tensor::from_vec(&[idx.len(), 1], as_f32).unwrap();
        (idx, t)
    };
    let (iu0, iu0_t) = low_index(&gu);
    let (iv0, iv0_t) = low_index(&gv);
    let fu = clamp01(&gu.sub(&iu0_t)?);
    let fv = clamp01(&gv.sub(&iv0_t)?);

    let iu1: Vec<usize> = iu0.iter().map(|&i| i + 1).collect();
    let iv1: Vec<usize> = iv0.iter().map(|&i| i + 1).collect();
    let c00 = gather_cells(plane, iu0.clone(), iv0.clone())?;
    let c01 = gather_cells(plane, iu0, iv1.clone())?;
    let c10 = gather_cells(plane, iu1.clone(), iv0)?;
    let c11 = gather_cells(plane, iu1, iv1)?;

    let w00 = one_minus(&fu).mul(&one_minus(&fv))?;
    let w01 = one_minus(&fu).mul(&fv)?;
    let w10 = fu.mul(&one_minus(&fv))?;
    let w11 = fu.mul(&fv)?;

    c00.mul(&w00)?
        .add(&c01.mul(&w01)?)?
        .add(&c10.mul(&w10)?)?
        .add(&c11.mul(&w11)?)
}

/// Single-point convenience wrapper: the interpolated `[C]` feature.
pub fn bilinear_lookup(plane: &Tensor, u: f32, v: f32) -> Result<Tensor> {
    let c = plane.shape()[0];
    let ut = Tensor::from_vec(&[1, 1], vec![u])?;
    let vt = Tensor::from_vec(&[1, 1], vec![v])?;
    bilinear_lookup_batch(plane, &ut, &vt)?.reshape(&[c])
}

/// The SDF head: plane features are summed elementwise and decoded by a
/// small MLP (hidden widths 64/64/64, GELU, linear scalar output).
#[derive(Debug, Clone)]
pub struct SdfMlp {
    pub mlp: Mlp,
    channels: usize,
}

impl SdfMlp {
    pub fn new(channels: usize, rng: &mut Rng) -> SdfMlp {
        SdfMlp {
            mlp: Mlp::new(&[channels, 64, 64, 64, 1], rng),
            channels,
        }
    }

    /// Custom layer widths (the input width comes first, output must be 1).
    pub fn with_widths(widths: &[usize], rng: &mut Rng) -> Result<SdfMlp> {
        if widths.len() < 2 || *widths.last().unwrap() != 1 {
            return Err(Error::config(format!(
                "sdf mlp: widths {:?} must end in 1",
                widths
            )));
        }
        Ok(SdfMlp {
            mlp: Mlp::new(widths, rng),
            channels: widths[0],
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamSet) {
        self.mlp.collect(prefix, out);
    }
}

/// Signed distances at `points` (`[Q, 3]`, coordinates in [-1, 1]): each
/// plane is sampled bilinearly at the point's coordinate pair, the three
/// features are summed elementwise, and the MLP maps the sum to a scalar.
/// Returns `[Q]`. Gradients flow to the planes, the MLP, and the points.
pub fn query_sdf(tp: &TriPlane, mlp: &SdfMlp, points: &Tensor) -> Result<Tensor> {
    let s = points.shape();
    if s.len() != 2 || s[1] != 3 {
        return Err(Error::shape(format!(
            "query_sdf: points must be [Q, 3], got {:?}",
            s
        )));
    }
    if mlp.channels() != tp.channels() {
        return Err(Error::shape(format!(
            "query_sdf: mlp expects {} channels, planes have {}",
            mlp.channels(),
            tp.channels()
        )));
    }
    let q = s[0];
    if q == 0 {
        return Err(Error::shape("query_sdf: empty query".to_string()));
    }
    let mut total: Option<Tensor> = None;
    for (k, (a, b)) in PLANE_AXES.iter().enumerate() {
        let plane = tp.plane(k)?;
        let u = points.narrow(1, *a, 1)?;
        let v = points.narrow(1, *b, 1)?;
        let f = bilinear_lookup_batch(&plane, &u, &v)?;
        total = Some(match total {
            None => f,
            Some(t) => t.add(&f)?,
        });
    }
    mlp.mlp.forward(&total.unwrap())?.reshape(&[q])
}

/// Spatial gradient of the SDF field by central differences: six
/// `query_sdf` evaluations at `p +- delta * e_axis` (probes clamped to the
/// cube). Returns `[Q, 3]` and stays on the tape, so losses built on it
/// backpropagate into planes and MLP.
pub fn sdf_spatial_gradient(
    tp: &TriPlane,
    mlp: &SdfMlp,
    points: &Tensor,
    delta: f32,
) -> Result<Tensor> {
    let s = points.shape();
    if s.len() != 2 || s[1] != 3 {
        return Err(Error::shape(format!(
            "sdf_spatial_gradient: points must be [Q, 3], got {:?}",
            s
        )));
    }
    if delta <= 0.0 {
        return Err(Error::numeric("sdf_spatial_gradient: delta must be positive".to_string()));
    }
    let q = s[0];
    let base = points.to_vec();
    let mut components = Vec::with_capacity(3);
    for axis in 0..3 {
        let probe = |sign: f32| -> Result<Tensor> {
            let mut data = base.clone();
            for i in 0..q {
                let v = data[i * 3 + axis] + sign * delta;
                data[i * 3 + axis] = v.clamp(-1.0, 1.0);
            }
            Tensor::from_vec(&[q, 3], data)
        };
        let hi = query_sdf(tp, mlp, &probe(1.0)?)?;
        let lo = query_sdf(tp, mlp, &probe(-1.0)?)?;
        let comp = hi.sub(&lo)?.mul_scalar(1.0 / (2.0 * delta));
        components.push(comp.reshape(&[q, 1])?);
    }
    Tensor::concat(&components, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3;
    use crate::tensor::{finite_diff_check, CoordSelection};

    fn zeros_triplane(c: usize, r: usize, role: PlaneRole) -> TriPlane {
        TriPlane::new(Tensor::zeros(&[3, c, r, r]), role).unwrap()
    }

    #[test]
    fn corner_point_lands_in_cell_zero() {
        let centers = [vec3(-1.0, -1.0, -1.0)];
        let emb = Tensor::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let tp = project_points(&centers, &emb, 4).unwrap();
        let v = tp.planes.to_vec();
        let rr = 16;
        for k in 0..3 {
            for ch in 0..2 {
                let base = (k * 2 + ch) * rr;
                assert_eq!(v[base], [3.0, 4.0][ch]); // cell (0,0)
                assert!(v[base + 1..base + rr].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn two_points_in_one_cell_average() {
        // both points fall in the same cell of every plane
        let centers = [vec3(0.05, 0.05, 0.05), vec3(0.1, 0.1, 0.1)];
        let emb = Tensor::from_vec(&[2, 1], vec![2.0, 6.0]).unwrap();
        let tp = project_points(&centers, &emb, 4).unwrap();
        let v = tp.planes.to_vec();
        // (0.05+1)/2*4 = 2.1 -> cell 2; same for 0.1
        let slot = 2 * 4 + 2;
        for k in 0..3 {
            assert_eq!(v[k * 16 + slot], 4.0); // (2+6)/2
        }
    }

    #[test]
    fn projection_matches_dictionary_oracle() {
        let mut rng = Rng::seed_from(20);
        let r = 8;
        let c = 3;
        let n = 20;
        let centers: Vec<_> = (0..n)
            .map(|_| {
                vec3(
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                )
            })
            .collect();
        let emb = Tensor::randn(&[n, c], &mut rng);
        let tp = project_points(&centers, &emb, r).unwrap();
        let got = tp.planes.to_vec();

        // oracle: accumulate sums and counts per cell in a map
        let ev = emb.to_vec();
        for (k, (a, b)) in PLANE_AXES.iter().enumerate() {
            let mut sums = std::collections::HashMap::new();
            for (i, p) in centers.iter().enumerate() {
                let arr = p.to_array();
                let iu = cell_index(arr[*a], r);
                let iv = cell_index(arr[*b], r);
                let entry = sums.entry(iu * r + iv).or_insert((vec![0.0f64; c], 0u32));
                for ch in 0..c {
                    entry.0[ch] += ev[i * c + ch] as f64;
                }
                entry.1 += 1;
            }
            for slot in 0..r * r {
                for ch in 0..c {
                    let want = sums
                        .get(&slot)
                        .map(|(s, cnt)| (s[ch] / *cnt as f64) as f32)
                        .unwrap_or(0.0);
                    let have = got[(k * c + ch) * r * r + slot];
                    assert!((want - have).abs() <= 1e-6, "plane {} slot {}", k, slot);
                }
            }
        }
    }

    #[test]
    fn projection_conserves_mass() {
        let mut rng = Rng::seed_from(21);
        let r = 8;
        let c = 4;
        let n = 50;
        let centers: Vec<_> = (0..n)
            .map(|_| {
                vec3(
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                    rng.uniform_in(-1.0, 1.0),
                )
            })
            .collect();
        let emb = Tensor::randn(&[n, c], &mut rng);
        let tp = project_points(&centers, &emb, r).unwrap();
        let v = tp.planes.to_vec();
        let ev = emb.to_vec();

        // recompute counts, then check sum(cell * count) = sum(embeddings)
        for (k, (a, b)) in PLANE_AXES.iter().enumerate() {
            let mut counts = vec![0u32; r * r];
            for p in &centers {
                let arr = p.to_array();
                counts[cell_index(arr[*a], r) * r + cell_index(arr[*b], r)] += 1;
            }
            for ch in 0..c {
                let total: f64 = (0..r * r)
                    .map(|s| v[(k * c + ch) * r * r + s] as f64 * counts[s] as f64)
                    .sum();
                let want: f64 = (0..n).map(|i| ev[i * c + ch] as f64).sum();
                let rel = (total - want).abs() / want.abs().max(1.0);
                assert!(rel <= 1e-4, "plane {} channel {}: {} vs {}", k, ch, total, want);
            }
        }
    }

    #[test]
    fn projection_gradient_splits_by_cell_count() {
        // two points share a cell, one is alone: backward of sum(planes)
        // gives each shared point 1/2 per plane, the lone one 1 per plane
        let centers = [
            vec3(0.05, 0.05, 0.05),
            vec3(0.1, 0.1, 0.1),
            vec3(-0.9, -0.9, -0.9),
        ];
        let emb = Tensor::param_from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let tp = project_points(&centers, &emb, 4).unwrap();
        tp.planes.sum().backward().unwrap();
        let g = emb.grad().unwrap();
        assert!((g[0] - 1.5).abs() < 1e-6); // 3 planes * 1/2
        assert!((g[1] - 1.5).abs() < 1e-6);
        assert!((g[2] - 3.0).abs() < 1e-6); // 3 planes * 1
    }

    #[test]
    fn bilinear_cell_center_is_exact() {
        let r = 4;
        // plane values = iu * 10 + iv in channel 0
        let data: Vec<f32> = (0..r * r).map(|s| (s / r * 10 + s % r) as f32).collect();
        let plane = Tensor::from_vec(&[1, r, r], data).unwrap();
        // cell (2, 1) center: u = 2/(R-1)*2-1 = 1/3, v = 1/(R-1)*2-1 = -1/3
        let u = 2.0 / 3.0 * 2.0 - 1.0;
        let v = 1.0 / 3.0 * 2.0 - 1.0;
        let f = bilinear_lookup(&plane, u, v).unwrap().to_vec();
        assert!((f[0] - 21.0).abs() < 1e-5);
        // exact corner queries
        assert!((bilinear_lookup(&plane, -1.0, -1.0).unwrap().to_vec()[0]).abs() < 1e-6);
        assert!(
            (bilinear_lookup(&plane, 1.0, 1.0).unwrap().to_vec()[0] - 33.0).abs() < 1e-5
        );
    }

    #[test]
    fn bilinear_constant_plane_is_constant() {
        let plane = Tensor::full(&[2, 5, 5], 7.5);
        let mut rng = Rng::seed_from(22);
        for _ in 0..20 {
            let u = rng.uniform_in(-1.0, 1.0);
            let v = rng.uniform_in(-1.0, 1.0);
            let f = bilinear_lookup(&plane, u, v).unwrap().to_vec();
            assert!((f[0] - 7.5).abs() < 1e-5);
            assert!((f[1] - 7.5).abs() < 1e-5);
        }
    }

    #[test]
    fn bilinear_midpoint_of_four_cells() {
        // 2x2 grid holding {1,2,3,4}; the center of the patch blends to 2.5
        let plane = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = bilinear_lookup(&plane, 0.0, 0.0).unwrap().to_vec();
        assert!((f[0] - 2.5).abs() < 1e-6);
    }

    #[test]
    fn bilinear_is_linear_in_the_plane() {
        let mut rng = Rng::seed_from(23);
        let p1 = Tensor::randn(&[3, 4, 4], &mut rng);
        let p2 = Tensor::randn(&[3, 4, 4], &mut rng);
        let (a, b) = (0.7f32, -1.3f32);
        let mix = p1.mul_scalar(a).add(&p2.mul_scalar(b)).unwrap();
        for _ in 0..10 {
            let u = rng.uniform_in(-1.0, 1.0);
            let v = rng.uniform_in(-1.0, 1.0);
            let lhs = bilinear_lookup(&mix, u, v).unwrap().to_vec();
            let f1 = bilinear_lookup(&p1, u, v).unwrap().to_vec();
            let f2 = bilinear_lookup(&p2, u, v).unwrap().to_vec();
            for ch in 0..3 {
                assert!((lhs[ch] - (a * f1[ch] + b * f2[ch])).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn bilinear_gradients_check_out_for_plane_and_coordinates() {
        let mut rng = Rng::seed_from(24);
        let plane = Tensor::randn_param(&[2, 4, 4], &mut rng);
        let u = Tensor::param_from_vec(&[2, 1], vec![0.21, -0.4]).unwrap();
        let v = Tensor::param_from_vec(&[2, 1], vec![-0.33, 0.5]).unwrap();
        let inputs = [plane.clone(), u.clone(), v.clone()];
        let report = finite_diff_check(&inputs, 1e-3, CoordSelection::All, |_| {
            Ok(bilinear_lookup_batch(&plane, &u, &v)?.sum())
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-2, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn query_sdf_constant_for_zero_planes() {
        let mut rng = Rng::seed_from(25);
        let tp = zeros_triplane(4, 8, PlaneRole::Reconstructed);
        let mlp = SdfMlp::new(4, &mut rng);
        let pts = Tensor::from_vec(&[3, 3], vec![0.0, 0.0, 0.0, 0.5, -0.2, 0.8, -1.0, 1.0, 0.3])
            .unwrap();
        let out = query_sdf(&tp, &mlp, &pts).unwrap().to_vec();
        assert!((out[0] - out[1]).abs() < 1e-6);
        assert!((out[0] - out[2]).abs() < 1e-6);
    }

    #[test]
    fn query_sdf_sum_is_permutation_invariant() {
        // constant planes a, b, c: any permutation sums to the same feature
        let mut rng = Rng::seed_from(26);
        let mlp = SdfMlp::new(2, &mut rng);
        let build = |vals: [f32; 3]| -> TriPlane {
            let mut data = Vec::new();
            for v in vals {
                data.extend(std::iter::repeat(v).take(2 * 4 * 4));
            }
            TriPlane::new(
                Tensor::from_vec(&[3, 2, 4, 4], data).unwrap(),
                PlaneRole::Reconstructed,
            )
            .unwrap()
        };
        let pts = Tensor::from_vec(&[1, 3], vec![0.3, -0.1, 0.6]).unwrap();
        let a = query_sdf(&build([1.0, 2.0, 3.0]), &mlp, &pts).unwrap().to_vec();
        let b = query_sdf(&build([3.0, 1.0, 2.0]), &mlp, &pts).unwrap().to_vec();
        assert!((a[0] - b[0]).abs() < 1e-6);
    }

    #[test]
    fn query_sdf_single_linear_layer_matches_manual_lookup() {
        let mut rng = Rng::seed_from(27);
        let c = 3;
        let planes = Tensor::randn(&[3, c, 4, 4], &mut rng);
        let tp = TriPlane::new(planes, PlaneRole::Reconstructed).unwrap();
        let mlp = SdfMlp::with_widths(&[c, 1], &mut rng).unwrap();
        let w = mlp.mlp.layers[0].w.to_vec(); // [c, 1]
        mlp.mlp.layers[0].b.set_data(&[0.0]).unwrap();

        let p = [0.37f32, -0.52, 0.11];
        let pts = Tensor::from_vec(&[1, 3], p.to_vec()).unwrap();
        let got = query_sdf(&tp, &mlp, &pts).unwrap().to_vec()[0];

        let mut manual = 0.0f32;
        for (k, (a, b)) in PLANE_AXES.iter().enumerate() {
            let plane = tp.plane(k).unwrap();
            let f = bilinear_lookup(&plane, p[*a], p[*b]).unwrap().to_vec();
            for ch in 0..c {
                manual += w[ch] * f[ch];
            }
        }
        assert!((got - manual).abs() <= 1e-6, "{} vs {}", got, manual);
    }

    #[test]
    fn spatial_gradient_of_constant_field_is_zero() {
        let mut rng = Rng::seed_from(28);
        let tp = zeros_triplane(2, 8, PlaneRole::Reconstructed);
        let mlp = SdfMlp::new(2, &mut rng);
        let pts = Tensor::from_vec(&[2, 3], vec![0.1, 0.2, 0.3, -0.5, 0.0, 0.9]).unwrap();
        let g = sdf_spatial_gradient(&tp, &mlp, &pts, 0.05).unwrap().to_vec();
        for v in g {
            assert!(v.abs() < 1e-5);
        }
    }

    #[test]
    fn spatial_gradient_of_x_ramp_is_unit_x() {
        // XY plane holds f(u, v) = u; other planes zero; MLP = identity sum.
        let r = 8;
        let mut data = vec![0.0f32; 3 * r * r];
        for iu in 0..r {
            let u = iu as f32 / (r - 1) as f32 * 2.0 - 1.0;
            for iv in 0..r {
                data[iu * r + iv] = u;
            }
        }
        let tp = TriPlane::new(
            Tensor::from_vec(&[3, 1, r, r], data).unwrap(),
            PlaneRole::Reconstructed,
        )
        .unwrap();
        let mut rng = Rng::seed_from(29);
        let mlp = SdfMlp::with_widths(&[1, 1], &mut rng).unwrap();
        mlp.mlp.layers[0].w.set_data(&[1.0]).unwrap();
        mlp.mlp.layers[0].b.set_data(&[0.0]).unwrap();

        let pts = Tensor::from_vec(&[1, 3], vec![0.0, 0.0, 0.0]).unwrap();
        let g = sdf_spatial_gradient(&tp, &mlp, &pts, 1.0 / r as f32)
            .unwrap()
            .to_vec();
        assert!((g[0] - 1.0).abs() <= 1e-3, "df/dx = {}", g[0]);
        assert!(g[1].abs() <= 1e-3);
        assert!(g[2].abs() <= 1e-3);
    }

    #[test]
    fn stencil_tracks_tape_gradient_on_smooth_planes() {
        // tape gradient of query_sdf wrt the points vs the 6-point stencil;
        // smaller delta must not do worse than a coarse one
        let mut rng = Rng::seed_from(30);
        let planes = Tensor::randn(&[3, 2, 8, 8], &mut rng).mul_scalar(0.3);
        let tp = TriPlane::new(planes, PlaneRole::Reconstructed).unwrap();
        let mlp = SdfMlp::new(2, &mut rng);
        let pts = Tensor::param_from_vec(&[4, 3], vec![
            0.11, 0.22, -0.3, -0.41, 0.52, 0.6, 0.0, -0.15, 0.33, 0.7, 0.7, -0.7,
        ])
        .unwrap();
        query_sdf(&tp, &mlp, &pts).unwrap().sum().backward().unwrap();
        let tape = pts.grad().unwrap();

        let err = |delta: f32| -> f32 {
            let st = sdf_spatial_gradient(&tp, &mlp, &pts, delta).unwrap().to_vec();
            st.iter()
                .zip(&tape)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f32, f32::max)
        };
        let fine = err(1e-3);
        let coarse = err(1e-1);
        assert!(fine <= 1e-2, "stencil vs tape at delta=1e-3: {}", fine);
        assert!(fine <= coarse, "finer stencil got worse: {} vs {}", fine, coarse);
    }

    #[test]
    fn spatial_gradient_backprops_into_planes_and_mlp() {
        let mut rng = Rng::seed_from(31);
        let planes = Tensor::randn_param(&[3, 2, 4, 4], &mut rng);
        let tp = TriPlane::new(planes.clone(), PlaneRole::Reconstructed).unwrap();
        let mlp = SdfMlp::new(2, &mut rng);
        let pts = Tensor::from_vec(&[2, 3], vec![0.2, -0.3, 0.4, -0.6, 0.1, 0.0]).unwrap();
        let g = sdf_spatial_gradient(&tp, &mlp, &pts, 0.125).unwrap();
        g.square().sum().backward().unwrap();
        assert!(planes.grad().is_some());
        assert!(mlp.mlp.layers[0].w.grad().is_some());
    }

    #[test]
    fn plane_role_names_round_trip() {
        for role in [PlaneRole::Initial, PlaneRole::Latent, PlaneRole::Reconstructed] {
            assert_eq!(PlaneRole::from_name(role.name()).unwrap(), role);
        }
        assert!(PlaneRole::from_name("bogus").is_err());
    }

    #[test]
    fn query_rejects_bad_shapes() {
        let mut rng = Rng::seed_from(32);
        let tp = zeros_triplane(4, 8, PlaneRole::Reconstructed);
        let mlp_wrong = SdfMlp::new(5, &mut rng);
        let pts = Tensor::from_vec(&[1, 3], vec![0.0; 3]).unwrap();
        assert!(query_sdf(&tp, &mlp_wrong, &pts).is_err());
        let mlp = SdfMlp::new(4, &mut rng);
        let flat = Tensor::from_vec(&[3], vec![0.0; 3]).unwrap();
        assert!(query_sdf(&tp, &mlp, &flat).is_err());
        assert!(TriPlane::new(Tensor::zeros(&[2, 4, 8, 8]), PlaneRole::Initial).is_err());
    }
}
