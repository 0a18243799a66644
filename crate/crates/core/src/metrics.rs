//! Mesh extraction and geometric evaluation: marching cubes over SDF
//! grids, surface sampling, chamfer distance, F-score, volume IoU, and a
//! ray-parity inside test used as a cross-check oracle.
//!
//! The marching-cubes case table is derived once at startup by tracing
//! the isosurface polygons of all 256 sign configurations with a fixed
//! rule on ambiguous (saddle) faces: the two edges flanking each inside
//! corner pair up. Because the pairing depends only on the face's corner
//! signs, the two cells sharing a face always agree on its contour, so
//! the output is watertight on any grid whose surface stays inside the
//! domain.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{vec3, Vec3};
use crate::rng::Rng;

// --- mesh ---

/// Triangle mesh with counter-clockwise outward winding.
#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let u = [
        b.x as f64 - a.x as f64,
        b.y as f64 - a.y as f64,
        b.z as f64 - a.z as f64,
    ];
    let v = [
        c.x as f64 - a.x as f64,
        c.y as f64 - a.y as f64,
        c.z as f64 - a.z as f64,
    ];
    let n = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.triangles {
            for &i in t {
                if i as usize >= self.vertices.len() {
                    return Err(Error::data(format!(
                        "mesh: vertex index {} out of range ({} vertices)",
                        i,
                        self.vertices.len()
                    )));
                }
            }
            let (a, b, c) = (
                self.vertices[t[0] as usize],
                self.vertices[t[1] as usize],
                self.vertices[t[2] as usize],
            );
            if triangle_area(a, b, c) < 1e-12 {
                return Err(Error::data("mesh: degenerate triangle".to_string()));
            }
        }
        Ok(())
    }

    pub fn triangle_points(&self, f: usize) -> (Vec3, Vec3, Vec3) {
        let t = self.triangles[f];
        (
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        )
    }
}

/// True when every undirected edge is shared by exactly two triangles
/// with opposite directions (consistent winding over a closed surface).
pub fn mesh_is_watertight(mesh: &Mesh) -> bool {
    if mesh.is_empty() {
        return false;
    }
    let mut directed: HashMap<(u32, u32), i64> = HashMap::new();
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *directed.entry((a, b)).or_insert(0) += 1;
        }
    }
    directed
        .iter()
        .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
}

/// Signed volume via the divergence theorem; positive for outward
/// counter-clockwise winding.
pub fn mesh_signed_volume(mesh: &Mesh) -> f64 {
    let mut vol = 0.0f64;
    for t in &mesh.triangles {
        let (a, b, c) = (
            mesh.vertices[t[0] as usize],
            mesh.vertices[t[1] as usize],
            mesh.vertices[t[2] as usize],
        );
        let det = (a.x as f64) * ((b.y as f64) * (c.z as f64) - (b.z as f64) * (c.y as f64))
            - (a.y as f64) * ((b.x as f64) * (c.z as f64) - (b.z as f64) * (c.x as f64))
            + (a.z as f64) * ((b.x as f64) * (c.y as f64) - (b.y as f64) * (c.x as f64));
        vol += det / 6.0;
    }
    vol
}

// --- SDF grids ---

/// Scalar field sampled at the corners of a regular lattice over
/// [-1,1]^3; `values[(ix*g + iy)*g + iz]`, negative inside.
#[derive(Debug, Clone)]
pub struct SdfGrid {
    g: usize,
    values: Vec<f32>,
}

impl SdfGrid {
    pub fn new(g: usize, values: Vec<f32>) -> Result<SdfGrid> {
        if g < 2 {
            return Err(Error::config(format!("sdf grid: resolution {} < 2", g)));
        }
        if values.len() != g * g * g {
            return Err(Error::shape(format!(
                "sdf grid: {} values for resolution {} (want {})",
                values.len(),
                g,
                g * g * g
            )));
        }
        Ok(SdfGrid { g, values })
    }

    /// Samples `f` on the corner lattice spanning [-1,1] inclusive; this
    /// is the convention marching cubes expects.
    pub fn from_fn(g: usize, mut f: impl FnMut(Vec3) -> f32) -> Result<SdfGrid> {
        if g < 2 {
            return Err(Error::config(format!("sdf grid: resolution {} < 2", g)));
        }
        let mut values = Vec::with_capacity(g * g * g);
        for ix in 0..g {
            for iy in 0..g {
                for iz in 0..g {
                    values.push(f(vec3(
                        lattice_coord(ix, g),
                        lattice_coord(iy, g),
                        lattice_coord(iz, g),
                    )));
                }
            }
        }
        SdfGrid::new(g, values)
    }

    /// Samples `f` at the centers of a `g`-per-axis voxelization of
    /// [-1,1]^3 (coordinates -1 + (2i+1)/g). Interior-mask counting on
    /// this lattice estimates volumes without the boundary-plane bias of
    /// the corner lattice, so it is the convention for IoU grids.
    pub fn from_fn_voxel_centers(g: usize, mut f: impl FnMut(Vec3) -> f32) -> Result<SdfGrid> {
        if g < 2 {
            return Err(Error::config(format!("sdf grid: resolution {} < 2", g)));
        }
        let mut values = Vec::with_capacity(g * g * g);
        let coord = |i: usize| -1.0 + (2 * i + 1) as f32 / g as f32;
        for ix in 0..g {
            for iy in 0..g {
                for iz in 0..g {
                    values.push(f(vec3(coord(ix), coord(iy), coord(iz))));
                }
            }
        }
        SdfGrid::new(g, values)
    }

    pub fn resolution(&self) -> usize {
        self.g
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.values[(ix * self.g + iy) * self.g + iz]
    }

    /// Edge length of one lattice cell.
    pub fn cell_size(&self) -> f32 {
        2.0 / (self.g - 1) as f32
    }
}

fn lattice_coord(i: usize, g: usize) -> f32 {
    -1.0 + 2.0 * i as f32 / (g - 1) as f32
}

// --- marching cubes case table, derived by contour tracing ---

// Corner c sits at offset (c&1, c>>1&1, c>>2&1).
const CORNER_OFFSET: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

// The 12 cube edges as (low corner, high corner); the axis is the bit in
// which the two corners differ, and the low corner has that bit clear.
const CUBE_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7), // x
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7), // y
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7), // z
];

// The 6 faces as cyclic corner loops.
const CUBE_FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 3, 7, 6], // y = 1
    [0, 1, 3, 2], // z = 0
    [4, 5, 7, 6], // z = 1
];

fn edge_index(a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    CUBE_EDGES
        .iter()
        .position(|&e| e == key)
        .expect("corner pair is a cube edge")
}

fn edge_axis(e: usize) -> usize {
    e / 4
}

/// Isosurface triangles of one sign configuration, as triples of cube
/// edge indices, oriented outward (from negative toward positive).
fn trace_case(case: usize) -> Vec<[usize; 3]> {
    let inside = |c: usize| case >> c & 1 == 1;
    // pair crossed edges on each face; saddles pair the edges flanking
    // each inside corner, a rule both adjacent cells compute identically
    let mut partners: Vec<Vec<usize>> = vec![Vec::new(); 12];
    for face in &CUBE_FACES {
        let loop_edges: Vec<usize> = (0..4)
            .map(|i| edge_index(face[i], face[(i + 1) % 4]))
            .collect();
        let crossed: Vec<usize> = (0..4)
            .filter(|&i| inside(face[i]) != inside(face[(i + 1) % 4]))
            .collect();
        match crossed.len() {
            0 => {}
            2 => {
                let (e0, e1) = (loop_edges[crossed[0]], loop_edges[crossed[1]]);
                partners[e0].push(e1);
                partners[e1].push(e0);
            }
            4 => {
                for q in 0..4 {
                    if inside(face[q]) {
                        let prev = loop_edges[(q + 3) % 4];
                        let next = loop_edges[q];
                        partners[prev].push(next);
                        partners[next].push(prev);
                    }
                }
            }
            _ => unreachable!("a face crosses an even number of its edges"),
        }
    }
    let crossed: Vec<usize> = (0..12)
        .filter(|&e| inside(CUBE_EDGES[e].0) != inside(CUBE_EDGES[e].1))
        .collect();
    for &e in &crossed {
        debug_assert_eq!(partners[e].len(), 2, "case {} edge {}", case, e);
    }

    let midpoint = |e: usize| {
        let (a, b) = CUBE_EDGES[e];
        let (pa, pb) = (CORNER_OFFSET[a], CORNER_OFFSET[b]);
        [
            (pa[0] + pb[0]) as f64 * 0.5,
            (pa[1] + pb[1]) as f64 * 0.5,
            (pa[2] + pb[2]) as f64 * 0.5,
        ]
    };

    let mut visited = [false; 12];
    let mut triangles = Vec::new();
    for &start in &crossed {
        if visited[start] {
            continue;
        }
        // walk the cycle: alternate between the two face-pairings
        let mut poly = vec![start];
        visited[start] = true;
        let mut prev = start;
        let mut cur = partners[start][0];
        while cur != start {
            visited[cur] = true;
            poly.push(cur);
            let next = if partners[cur][0] == prev {
                partners[cur][1]
            } else {
                partners[cur][0]
            };
            prev = cur;
            cur = next;
        }

        // orient the loop so its normal points from inside to outside
        let pts: Vec<[f64; 3]> = poly.iter().map(|&e| midpoint(e)).collect();
        let n = pts.len();
        let centroid = [
            pts.iter().map(|p| p[0]).sum::<f64>() / n as f64,
            pts.iter().map(|p| p[1]).sum::<f64>() / n as f64,
            pts.iter().map(|p| p[2]).sum::<f64>() / n as f64,
        ];
        let mut normal = [0.0f64; 3];
        for i in 0..n {
            let p = pts[i];
            let q = pts[(i + 1) % n];
            let u = [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]];
            let v = [q[0] - centroid[0], q[1] - centroid[1], q[2] - centroid[2]];
            normal[0] += u[1] * v[2] - u[2] * v[1];
            normal[1] += u[2] * v[0] - u[0] * v[2];
            normal[2] += u[0] * v[1] - u[1] * v[0];
        }
        let mut neg_mean = [0.0f64; 3];
        for &e in &poly {
            let (a, b) = CUBE_EDGES[e];
            let c = if inside(a) { a } else { b };
            for k in 0..3 {
                neg_mean[k] += CORNER_OFFSET[c][k] as f64;
            }
        }
        for v in &mut neg_mean {
            *v /= poly.len() as f64;
        }
        let outward = [
            centroid[0] - neg_mean[0],
            centroid[1] - neg_mean[1],
            centroid[2] - neg_mean[2],
        ];
        let dot: f64 = (0..3).map(|k| normal[k] * outward[k]).sum();
        if dot < 0.0 {
            poly.reverse();
        }
        for i in 1..poly.len() - 1 {
            triangles.push([poly[0], poly[i], poly[i + 1]]);
        }
    }
    triangles
}

fn tri_table() -> &'static Vec<Vec<[usize; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[usize; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(trace_case).collect())
}

// --- marching cubes ---

/// Isosurface of the grid at level `iso` (0 for SDFs). Corner values
/// below `iso` count as inside; vertices sit on sign-crossing lattice
/// edges by linear interpolation and are shared between cells.
pub fn marching_cubes(grid: &SdfGrid, iso: f32) -> Result<Mesh> {
    if !iso.is_finite() {
        return Err(Error::numeric("marching cubes: iso must be finite"));
    }
    for v in grid.values() {
        if !v.is_finite() {
            return Err(Error::numeric("marching cubes: non-finite grid value"));
        }
    }
    let g = grid.g;
    let table = tri_table();
    let mut edge_vertex: HashMap<usize, u32> = HashMap::new();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    for cx in 0..g - 1 {
        for cy in 0..g - 1 {
            for cz in 0..g - 1 {
                let mut case = 0usize;
                let mut vals = [0.0f32; 8];
                for (c, off) in CORNER_OFFSET.iter().enumerate() {
                    let v = grid.value(cx + off[0], cy + off[1], cz + off[2]);
                    vals[c] = v;
                    if v < iso {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let mut ids = [0u32; 12];
                let mut have = [false; 12];
                for tri in &table[case] {
                    for &e in tri {
                        if have[e] {
                            continue;
                        }
                        let (a, b) = CUBE_EDGES[e];
                        let axis = edge_axis(e);
                        let base = [
                            cx + CORNER_OFFSET[a][0],
                            cy + CORNER_OFFSET[a][1],
                            cz + CORNER_OFFSET[a][2],
                        ];
                        let key = ((axis * g + base[0]) * g + base[1]) * g + base[2];
                        let id = *edge_vertex.entry(key).or_insert_with(|| {
                            let (va, vb) = (vals[a], vals[b]);
                            let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
                            let mut p = [
                                lattice_coord(base[0], g),
                                lattice_coord(base[1], g),
                                lattice_coord(base[2], g),
                            ];
                            p[axis] += t * grid.cell_size();
                            vertices.push(vec3(p[0], p[1], p[2]));
                            (vertices.len() - 1) as u32
                        });
                        ids[e] = id;
                        have[e] = true;
                    }
                    triangles.push([ids[tri[0]], ids[tri[1]], ids[tri[2]]]);
                }
            }
        }
    }
    Ok(cleanup_mesh(Mesh {
        vertices,
        triangles,
    }))
}

/// Welds coincident vertices, drops zero-area (< 1e-12) triangles, and
/// compacts unused vertices. Interpolated vertices can land exactly on a
/// lattice corner when a grid value equals the iso level, which makes
/// neighbouring edge vertices coincide.
fn cleanup_mesh(mesh: Mesh) -> Mesh {
    let mut canonical: HashMap<[u32; 3], u32> = HashMap::new();
    let mut remap = vec![0u32; mesh.vertices.len()];
    for (i, v) in mesh.vertices.iter().enumerate() {
        let key = [v.x.to_bits(), v.y.to_bits(), v.z.to_bits()];
        remap[i] = *canonical.entry(key).or_insert(i as u32);
    }
    let mut used = vec![false; mesh.vertices.len()];
    let mut triangles = Vec::with_capacity(mesh.triangles.len());
    for t in &mesh.triangles {
        let t = [
            remap[t[0] as usize],
            remap[t[1] as usize],
            remap[t[2] as usize],
        ];
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        let (a, b, c) = (
            mesh.vertices[t[0] as usize],
            mesh.vertices[t[1] as usize],
            mesh.vertices[t[2] as usize],
        );
        if triangle_area(a, b, c) < 1e-12 {
            continue;
        }
        for &i in &t {
            used[i as usize] = true;
        }
        triangles.push(t);
    }
    let mut compact = vec![0u32; mesh.vertices.len()];
    let mut vertices = Vec::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        if used[i] {
            compact[i] = vertices.len() as u32;
            vertices.push(*v);
        }
    }
    for t in &mut triangles {
        for i in t.iter_mut() {
            *i = compact[*i as usize];
        }
    }
    Mesh {
        vertices,
        triangles,
    }
}

// --- surface sampling ---

/// Area-weighted point sample of the mesh surface: pick a triangle with
/// probability proportional to its area, then a uniform barycentric
/// point inside it.
pub fn sample_mesh_surface(mesh: &Mesh, n: usize, rng: &mut Rng) -> Result<Vec<Vec3>> {
    if mesh.is_empty() {
        return Err(Error::data("surface sampling: empty mesh"));
    }
    let mut cum = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0f64;
    for f in 0..mesh.triangles.len() {
        let (a, b, c) = mesh.triangle_points(f);
        total += triangle_area(a, b, c);
        cum.push(total);
    }
    if total <= 0.0 {
        return Err(Error::data("surface sampling: zero total area"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let r = rng.uniform_in(0.0, 1.0) as f64 * total;
        let f = cum.partition_point(|&c| c <= r).min(cum.len() - 1);
        let (a, b, c) = mesh.triangle_points(f);
        let mut u = rng.uniform_in(0.0, 1.0);
        let mut v = rng.uniform_in(0.0, 1.0);
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        out.push(a + (b - a) * u + (c - a) * v);
    }
    Ok(out)
}

// --- nearest neighbours ---

/// Static kd-tree over a point set; queries return the squared distance
/// to the nearest point, computed in f64.
pub struct KdTree {
    pts: Vec<Vec3>,
    // (point index, split axis); laid out as a binary tree over index
    // ranges, median at the midpoint of each range
    order: Vec<(u32, u8)>,
}

impl KdTree {
    pub fn build(pts: &[Vec3]) -> Result<KdTree> {
        if pts.is_empty() {
            return Err(Error::data("kd-tree: empty point set"));
        }
        let mut idx: Vec<u32> = (0..pts.len() as u32).collect();
        let mut order = vec![(0u32, 0u8); pts.len()];
        fn split(pts: &[Vec3], idx: &mut [u32], order: &mut [(u32, u8)], depth: u8) {
            if idx.is_empty() {
                return;
            }
            let axis = depth % 3;
            let mid = idx.len() / 2;
            idx.select_nth_unstable_by(mid, |&a, &b| {
                let (pa, pb) = (pts[a as usize].get(axis as usize), pts[b as usize].get(axis as usize));
                pa.partial_cmp(&pb).unwrap_or(std::cmp::Ordering::Equal)
            });
            order[mid] = (idx[mid], axis);
            let (lo, rest) = idx.split_at_mut(mid);
            let (olo, orest) = order.split_at_mut(mid);
            split(pts, lo, olo, depth + 1);
            split(pts, &mut rest[1..], &mut orest[1..], depth + 1);
        }
        split(pts, &mut idx, &mut order, 0);
        Ok(KdTree {
            pts: pts.to_vec(),
            order,
        })
    }

    pub fn nearest_sq(&self, q: Vec3) -> f64 {
        fn dist_sq(a: Vec3, b: Vec3) -> f64 {
            let dx = a.x as f64 - b.x as f64;
            let dy = a.y as f64 - b.y as f64;
            let dz = a.z as f64 - b.z as f64;
            dx * dx + dy * dy + dz * dz
        }
        fn descend(tree: &KdTree, lo: usize, hi: usize, q: Vec3, best: &mut f64) {
            if lo >= hi {
                return;
            }
            let mid = lo + (hi - lo) / 2;
            let (pi, axis) = tree.order[mid];
            let p = tree.pts[pi as usize];
            let d = dist_sq(q, p);
            if d < *best {
                *best = d;
            }
            let delta = q.get(axis as usize) as f64 - p.get(axis as usize) as f64;
            let (near, far) = if delta < 0.0 {
                ((lo, mid), (mid + 1, hi))
            } else {
                ((mid + 1, hi), (lo, mid))
            };
            descend(tree, near.0, near.1, q, best);
            if delta * delta < *best {
                descend(tree, far.0, far.1, q, best);
            }
        }
        let mut best = f64::INFINITY;
        descend(self, 0, self.order.len(), q, &mut best);
        best
    }
}

// --- metrics ---

/// Symmetric chamfer distance: mean over A of the squared distance to
/// the nearest point of B, plus the mirrored term.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    chamfer_with(a, b, true)
}

/// `squared: false` averages unsquared distances instead, for comparing
/// against conventions that report root distances.
pub fn chamfer_with(a: &[Vec3], b: &[Vec3], squared: bool) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::data("chamfer: empty point set"));
    }
    let (ta, tb) = (KdTree::build(a)?, KdTree::build(b)?);
    let term = |set: &[Vec3], tree: &KdTree| {
        set.iter()
            .map(|&p| {
                let d = tree.nearest_sq(p);
                if squared {
                    d
                } else {
                    d.sqrt()
                }
            })
            .sum::<f64>()
            / set.len() as f64
    };
    Ok(term(a, &tb) + term(b, &ta))
}

/// F-score (percent): harmonic mean of precision (fraction of A within
/// unsquared distance tau of B) and recall (the reverse), times 100.
pub fn f_score(a: &[Vec3], b: &[Vec3], tau: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::data("f-score: empty point set"));
    }
    if !(tau > 0.0) {
        return Err(Error::config(format!("f-score: tau {} must be positive", tau)));
    }
    let (ta, tb) = (KdTree::build(a)?, KdTree::build(b)?);
    let frac_within = |set: &[Vec3], tree: &KdTree| {
        let hits = set
            .iter()
            .filter(|&&p| tree.nearest_sq(p).sqrt() <= tau)
            .count();
        hits as f64 / set.len() as f64
    };
    let p = frac_within(a, &tb);
    let r = frac_within(b, &ta);
    if p + r == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * p * r / (p + r) * 100.0)
}

/// Interior overlap of two SDF grids: negative voxels are inside, IoU is
/// intersection over union; two empty interiors count as identical (1).
pub fn volume_iou(a: &SdfGrid, b: &SdfGrid) -> Result<f64> {
    if a.resolution() != b.resolution() {
        return Err(Error::shape(format!(
            "volume iou: grid resolutions {} vs {}",
            a.resolution(),
            b.resolution()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&va, &vb) in a.values().iter().zip(b.values()) {
        let (ia, ib) = (va < 0.0, vb < 0.0);
        if ia && ib {
            inter += 1;
        }
        if ia || ib {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Ray-parity interior test: casts along +x, +y, +z and takes the
/// majority of the three odd/even crossing verdicts. This is the oracle
/// for converting meshes to interior masks when no SDF is available.
pub fn mesh_inside_test(mesh: &Mesh, p: Vec3) -> bool {
    let dirs = [
        vec3(1.0, 0.0, 0.0),
        vec3(0.0, 1.0, 0.0),
        vec3(0.0, 0.0, 1.0),
    ];
    let mut votes = 0;
    for dir in dirs {
        let mut crossings = 0usize;
        for f in 0..mesh.triangles.len() {
            let (a, b, c) = mesh.triangle_points(f);
            if ray_hits_triangle(p, dir, a, b, c) {
                crossings += 1;
            }
        }
        if crossings % 2 == 1 {
            votes += 1;
        }
    }
    votes >= 2
}

fn ray_hits_triangle(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, c: Vec3) -> bool {
    let f64v = |v: Vec3| [v.x as f64, v.y as f64, v.z as f64];
    let sub = |x: [f64; 3], y: [f64; 3]| [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    let cross = |x: [f64; 3], y: [f64; 3]| {
        [
            x[1] * y[2] - x[2] * y[1],
            x[2] * y[0] - x[0] * y[2],
            x[0] * y[1] - x[1] * y[0],
        ]
    };
    let dot = |x: [f64; 3], y: [f64; 3]| x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
    let (o, d) = (f64v(origin), f64v(dir));
    let (a, b, c) = (f64v(a), f64v(b), f64v(c));
    let e1 = sub(b, a);
    let e2 = sub(c, a);
    let pv = cross(d, e2);
    let det = dot(e1, pv);
    if det.abs() < 1e-12 {
        return false;
    }
    let inv = 1.0 / det;
    let tv = sub(o, a);
    let u = dot(tv, pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = cross(tv, e1);
    let v = dot(d, qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    dot(e2, qv) * inv > 1e-9
}

// --- reports ---

/// Geometric evaluation summary for one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Squared-distance chamfer.
    pub chamfer: f64,
    /// Percent in [0, 100].
    pub f_score: f64,
    /// In [0, 1].
    pub volume_iou: f64,
    pub samples_a: usize,
    pub samples_b: usize,
    pub tau: f64,
    pub grid_resolution: usize,
}

pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_IOU_GRID: usize = 128;
pub const DEFAULT_SURFACE_SAMPLES: usize = 2048;

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        if self.chamfer < 0.0 || !self.chamfer.is_finite() {
            return Err(Error::numeric(format!("report: chamfer {}", self.chamfer)));
        }
        if !(0.0..=100.0).contains(&self.f_score) {
            return Err(Error::numeric(format!("report: f-score {}", self.f_score)));
        }
        if !(0.0..=1.0).contains(&self.volume_iou) {
            return Err(Error::numeric(format!("report: iou {}", self.volume_iou)));
        }
        Ok(())
    }

    /// Multi-line key=value block.
    pub fn to_text(&self) -> String {
        format!(
            "chamfer={}\nf_score={}\nvolume_iou={}\nsamples_a={}\nsamples_b={}\ntau={}\ngrid_resolution={}\n",
            self.chamfer,
            self.f_score,
            self.volume_iou,
            self.samples_a,
            self.samples_b,
            self.tau,
            self.grid_resolution
        )
    }

    /// One-line record, same keys space-separated.
    pub fn to_record(&self) -> String {
        self.to_text().trim_end().replace('\n', " ")
    }

    pub fn parse_record(line: &str) -> Result<MetricReport> {
        let mut map = HashMap::new();
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::data(format!("report: bad field '{}'", field)))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<&String> {
            map.get(k)
                .ok_or_else(|| Error::data(format!("report: missing key '{}'", k)))
        };
        let parse_f = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::data(format!("report: bad value for '{}'", k)))
        };
        let parse_u = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::data(format!("report: bad value for '{}'", k)))
        };
        let report = MetricReport {
            chamfer: parse_f("chamfer")?,
            f_score: parse_f("f_score")?,
            volume_iou: parse_f("volume_iou")?,
            samples_a: parse_u("samples_a")?,
            samples_b: parse_u("samples_b")?,
            tau: parse_f("tau")?,
            grid_resolution: parse_u("grid_resolution")?,
        };
        report.validate()?;
        Ok(report)
    }
}

// --- OBJ export ---

pub fn mesh_to_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    out
}

pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, mesh_to_obj(mesh))?;
    Ok(())
}

/// Minimal OBJ reader: `v` and `f` records (face entries may carry /uv
/// and /normal suffixes, which are ignored); everything else is skipped.
pub fn parse_obj(text: &str) -> Result<Mesh> {
    let mut mesh = Mesh::default();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coord = |_| -> Result<f32> {
                    it.next()
                        .ok_or_else(|| Error::data(format!("obj line {}: short vertex", lineno + 1)))?
                        .parse()
                        .map_err(|_| Error::data(format!("obj line {}: bad vertex", lineno + 1)))
                };
                mesh.vertices
                    .push(vec3(coord(0)?, coord(1)?, coord(2)?));
            }
            Some("f") => {
                let mut ids = Vec::new();
                for entry in it {
                    let first = entry.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| Error::data(format!("obj line {}: bad face", lineno + 1)))?;
                    if i < 1 {
                        return Err(Error::data(format!(
                            "obj line {}: only positive 1-based indices supported",
                            lineno + 1
                        )));
                    }
                    ids.push((i - 1) as u32);
                }
                if ids.len() != 3 {
                    return Err(Error::data(format!(
                        "obj line {}: only triangles supported",
                        lineno + 1
                    )));
                }
                mesh.triangles.push([ids[0], ids[1], ids[2]]);
            }
            _ => {}
        }
    }
    for t in &mesh.triangles {
        for &i in t {
            if i as usize >= mesh.vertices.len() {
                return Err(Error::data(format!("obj: face index {} out of range", i + 1)));
            }
        }
    }
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_sdf(r: f32) -> impl Fn(Vec3) -> f32 {
        move |p: Vec3| p.norm() - r
    }

    fn box_sdf(half: f32) -> impl Fn(Vec3) -> f32 {
        move |p: Vec3| p.abs().max_component() - half
    }

    #[test]
    fn grids_reject_bad_dimensions() {
        assert!(SdfGrid::new(1, vec![0.0]).is_err());
        assert!(SdfGrid::new(4, vec![0.0; 63]).is_err());
        let g = SdfGrid::from_fn(4, |p| p.x).unwrap();
        // indexing: value(ix, iy, iz) follows the lattice coordinate
        assert_eq!(g.value(0, 1, 2), -1.0);
        assert_eq!(g.value(3, 0, 0), 1.0);
    }

    #[test]
    fn uncrossed_grids_give_empty_meshes() {
        let pos = SdfGrid::from_fn(8, |_| 1.0).unwrap();
        assert!(marching_cubes(&pos, 0.0).unwrap().is_empty());
        let neg = SdfGrid::from_fn(8, |_| -1.0).unwrap();
        assert!(marching_cubes(&neg, 0.0).unwrap().is_empty());
    }

    #[test]
    fn single_interior_corner_makes_a_closed_fan() {
        // one negative lattice corner inside an all-positive grid: the 8
        // incident cells each cut one triangle, forming a closed diamond
        let g = 7usize;
        let mut values = vec![1.0f32; g * g * g];
        values[(3 * g + 3) * g + 3] = -1.0;
        let grid = SdfGrid::new(g, values).unwrap();
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        assert_eq!(mesh.triangles.len(), 8);
        assert_eq!(mesh.vertices.len(), 6);
        assert!(mesh_is_watertight(&mesh));
        assert!(mesh_signed_volume(&mesh) > 0.0);
    }

    #[test]
    fn every_case_patch_is_closed_up_to_the_cell_faces() {
        // single-cell grids realize each sign configuration; a correct
        // table leaves boundary edges only on the cube's faces, interior
        // edges paired with opposite winding, and no degenerate output
        for case in 0..256usize {
            let mut values = [1.0f32; 8];
            for c in 0..8 {
                if case >> c & 1 == 1 {
                    values[c] = -1.0;
                }
            }
            let mut grid_values = vec![0.0f32; 8];
            for (c, off) in CORNER_OFFSET.iter().enumerate() {
                grid_values[(off[0] * 2 + off[1]) * 2 + off[2]] = values[c];
            }
            let grid = SdfGrid::new(2, grid_values).unwrap();
            let mesh = marching_cubes(&grid, 0.0).unwrap();
            if case == 0 || case == 255 {
                assert!(mesh.is_empty());
                continue;
            }
            mesh.validate().unwrap();
            let mut directed: HashMap<(u32, u32), i64> = HashMap::new();
            for t in &mesh.triangles {
                for k in 0..3 {
                    *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
                }
            }
            for (&(a, b), &n) in &directed {
                assert_eq!(n, 1, "case {}: duplicated directed edge", case);
                let paired = directed.get(&(b, a)) == Some(&1);
                if paired {
                    continue;
                }
                // boundary edge: must lie on a face of the cell
                let (va, vb) = (mesh.vertices[a as usize], mesh.vertices[b as usize]);
                let on_face = (0..3).any(|axis| {
                    let (ca, cb) = (va.get(axis), vb.get(axis));
                    ca == cb && (ca == -1.0 || ca == 1.0)
                });
                assert!(on_face, "case {}: dangling interior edge", case);
            }
        }
    }

    #[test]
    fn random_padded_grids_mesh_watertight() {
        // positive boundary forces a closed surface; random interior
        // signs exercise saddle faces and multi-component cases
        let g = 6usize;
        let mut rng = Rng::seed_from(400);
        let mut nonempty = 0;
        for _ in 0..60 {
            let mut values = vec![1.0f32; g * g * g];
            for ix in 1..g - 1 {
                for iy in 1..g - 1 {
                    for iz in 1..g - 1 {
                        values[(ix * g + iy) * g + iz] = rng.uniform_in(-1.0, 1.0);
                    }
                }
            }
            let grid = SdfGrid::new(g, values).unwrap();
            let mesh = marching_cubes(&grid, 0.0).unwrap();
            if mesh.is_empty() {
                continue;
            }
            nonempty += 1;
            mesh.validate().unwrap();
            assert!(mesh_is_watertight(&mesh));
        }
        assert!(nonempty >= 50, "only {} grids produced surfaces", nonempty);
    }

    #[test]
    fn sphere_mesh_sits_on_the_shell() {
        let grid = SdfGrid::from_fn(64, sphere_sdf(0.5)).unwrap();
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        assert!(mesh_is_watertight(&mesh));
        // every vertex within one cell diagonal of the true shell
        let worst = mesh
            .vertices
            .iter()
            .map(|v| (v.norm() - 0.5).abs())
            .fold(0.0f32, f32::max);
        assert!(worst <= 0.054, "worst shell deviation {}", worst);
        // outward winding: signed volume near (4/3) pi r^3
        let vol = mesh_signed_volume(&mesh);
        let want = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((vol - want).abs() / want <= 0.02, "volume {} vs {}", vol, want);
    }

    #[test]
    fn box_mesh_recovers_the_volume() {
        let grid = SdfGrid::from_fn(64, box_sdf(0.5)).unwrap();
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        assert!(mesh_is_watertight(&mesh));
        let vol = mesh_signed_volume(&mesh);
        assert!((vol - 1.0).abs() <= 0.02, "volume {}", vol);
    }

    #[test]
    fn watertightness_checker_catches_a_missing_triangle() {
        let grid = SdfGrid::from_fn(16, sphere_sdf(0.5)).unwrap();
        let mut mesh = marching_cubes(&grid, 0.0).unwrap();
        assert!(mesh_is_watertight(&mesh));
        mesh.triangles.pop();
        assert!(!mesh_is_watertight(&mesh));
    }

    fn unit_square() -> Mesh {
        Mesh {
            vertices: vec![
                vec3(0.0, 0.0, 0.0),
                vec3(1.0, 0.0, 0.0),
                vec3(1.0, 1.0, 0.0),
                vec3(0.0, 1.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    #[test]
    fn square_samples_center_on_the_centroid() {
        let mesh = unit_square();
        let n = 4000usize;
        let pts = sample_mesh_surface(&mesh, n, &mut Rng::seed_from(401)).unwrap();
        assert_eq!(pts.len(), n);
        let mean_x = pts.iter().map(|p| p.x as f64).sum::<f64>() / n as f64;
        let mean_y = pts.iter().map(|p| p.y as f64).sum::<f64>() / n as f64;
        // per-axis variance of U(0,1) is 1/12
        let sigma = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!((mean_x - 0.5).abs() <= 3.0 * sigma, "mean x {}", mean_x);
        assert!((mean_y - 0.5).abs() <= 3.0 * sigma, "mean y {}", mean_y);
        assert!(pts.iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn sampling_weights_triangles_by_area() {
        // areas 0.5 and 1.5: the second triangle takes 75% of the mass
        let mesh = Mesh {
            vertices: vec![
                vec3(0.0, 0.0, 0.0),
                vec3(1.0, 0.0, 0.0),
                vec3(0.0, 1.0, 0.0),
                vec3(5.0, 0.0, 0.0),
                vec3(6.0, 0.0, 0.0),
                vec3(5.0, 3.0, 0.0),
            ],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
        };
        let n = 4000usize;
        let pts = sample_mesh_surface(&mesh, n, &mut Rng::seed_from(402)).unwrap();
        let far = pts.iter().filter(|p| p.x >= 4.0).count() as f64;
        let frac = far / n as f64;
        let sigma = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((frac - 0.75).abs() <= 3.0 * sigma, "area fraction {}", frac);
    }

    #[test]
    fn single_triangle_samples_stay_inside() {
        let a = vec3(0.2, -0.3, 0.5);
        let b = vec3(1.0, 0.4, -0.2);
        let c = vec3(-0.6, 0.9, 0.1);
        let mesh = Mesh {
            vertices: vec![a, b, c],
            triangles: vec![[0, 1, 2]],
        };
        let pts = sample_mesh_surface(&mesh, 500, &mut Rng::seed_from(403)).unwrap();
        // recover barycentric coordinates via the edge-projection system
        let e1 = b - a;
        let e2 = c - a;
        let (d11, d12, d22) = (e1.dot(e1) as f64, e1.dot(e2) as f64, e2.dot(e2) as f64);
        let det = d11 * d22 - d12 * d12;
        for p in pts {
            let d = p - a;
            let (dp1, dp2) = (d.dot(e1) as f64, d.dot(e2) as f64);
            let u = (d22 * dp1 - d12 * dp2) / det;
            let v = (d11 * dp2 - d12 * dp1) / det;
            assert!(u >= -1e-5 && v >= -1e-5 && u + v <= 1.0 + 1e-5, "({}, {})", u, v);
        }
    }

    #[test]
    fn sampling_an_empty_mesh_errors() {
        assert!(sample_mesh_surface(&Mesh::default(), 10, &mut Rng::seed_from(404)).is_err());
    }

    fn random_points(n: usize, rng: &mut Rng, scale: f32) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                vec3(
                    rng.uniform_in(-scale, scale),
                    rng.uniform_in(-scale, scale),
                    rng.uniform_in(-scale, scale),
                )
            })
            .collect()
    }

    fn brute_chamfer(a: &[Vec3], b: &[Vec3]) -> f64 {
        let nearest = |p: Vec3, set: &[Vec3]| {
            set.iter()
                .map(|&q| {
                    let d = [
                        p.x as f64 - q.x as f64,
                        p.y as f64 - q.y as f64,
                        p.z as f64 - q.z as f64,
                    ];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                })
                .fold(f64::INFINITY, f64::min)
        };
        a.iter().map(|&p| nearest(p, b)).sum::<f64>() / a.len() as f64
            + b.iter().map(|&p| nearest(p, a)).sum::<f64>() / b.len() as f64
    }

    #[test]
    fn chamfer_trivial_values() {
        let a = vec![vec3(0.0, 0.0, 0.0)];
        let b = vec![vec3(1.0, 0.0, 0.0)];
        // 1^2 each way: 1 + 1 = 2
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert!(chamfer(&a, &[]).is_err());
        // unsquared flag: 1 + 1 = 2 too, but differs once distances != 1
        let c = vec![vec3(2.0, 0.0, 0.0)];
        assert_eq!(chamfer_with(&a, &c, true).unwrap(), 8.0);
        assert_eq!(chamfer_with(&a, &c, false).unwrap(), 4.0);
    }

    #[test]
    fn chamfer_matches_the_pairwise_oracle() {
        let mut rng = Rng::seed_from(405);
        for _ in 0..30 {
            let a = random_points(10, &mut rng, 1.0);
            let b = random_points(12, &mut rng, 1.0);
            let fast = chamfer(&a, &b).unwrap();
            let slow = brute_chamfer(&a, &b);
            assert!((fast - slow).abs() <= 1e-9, "{} vs {}", fast, slow);
            // symmetry is exact: the formula is a sum of both directions
            assert_eq!(fast, chamfer(&b, &a).unwrap());
        }
    }

    #[test]
    fn chamfer_scales_quadratically() {
        let mut rng = Rng::seed_from(406);
        let a = random_points(15, &mut rng, 1.0);
        let b = random_points(11, &mut rng, 1.0);
        let base = chamfer(&a, &b).unwrap();
        // scaling by powers of two keeps the f32 inputs exact
        for s in [0.5f32, 2.0, 4.0] {
            let sa: Vec<Vec3> = a.iter().map(|&p| p * s).collect();
            let sb: Vec<Vec3> = b.iter().map(|&p| p * s).collect();
            let scaled = chamfer(&sa, &sb).unwrap();
            assert!(
                (scaled - (s as f64).powi(2) * base).abs() <= 1e-9,
                "s={}: {} vs {}",
                s,
                scaled,
                (s as f64).powi(2) * base
            );
        }
        // non-dyadic scales round the inputs themselves
        let s = 3.0f32;
        let sa: Vec<Vec3> = a.iter().map(|&p| p * s).collect();
        let sb: Vec<Vec3> = b.iter().map(|&p| p * s).collect();
        let scaled = chamfer(&sa, &sb).unwrap();
        assert!((scaled - 9.0 * base).abs() <= 1e-5);
    }

    #[test]
    fn f_score_trivial_and_hand_cases() {
        let a = random_points(20, &mut Rng::seed_from(407), 1.0);
        assert_eq!(f_score(&a, &a, 0.05).unwrap(), 100.0);
        let far: Vec<Vec3> = a.iter().map(|&p| p + vec3(100.0, 0.0, 0.0)).collect();
        assert_eq!(f_score(&a, &far, 0.05).unwrap(), 0.0);
        // precision 0.5, recall 1.0: 2 * 0.5 * 1.0 / 1.5 * 100 = 66.67
        let pred = vec![vec3(0.0, 0.0, 0.0), vec3(10.0, 0.0, 0.0)];
        let gt = vec![vec3(0.01, 0.0, 0.0)];
        let f = f_score(&pred, &gt, 0.05).unwrap();
        assert!((f - 66.67).abs() <= 0.01, "{}", f);
        assert!(f_score(&a, &a, 0.0).is_err());
        assert!(f_score(&a, &[], 0.05).is_err());
    }

    #[test]
    fn f_score_is_scale_covariant() {
        let mut rng = Rng::seed_from(408);
        for _ in 0..20 {
            let a = random_points(15, &mut rng, 1.0);
            let b: Vec<Vec3> = a
                .iter()
                .map(|&p| p + vec3(rng.uniform_in(-0.1, 0.1), 0.0, 0.0))
                .collect();
            let base = f_score(&a, &b, 0.05).unwrap();
            let s = 2.0f32;
            let sa: Vec<Vec3> = a.iter().map(|&p| p * s).collect();
            let sb: Vec<Vec3> = b.iter().map(|&p| p * s).collect();
            assert_eq!(f_score(&sa, &sb, 0.05 * s as f64).unwrap(), base);
        }
    }

    #[test]
    fn volume_iou_trivial_cases() {
        let s = SdfGrid::from_fn(16, sphere_sdf(0.5)).unwrap();
        assert_eq!(volume_iou(&s, &s).unwrap(), 1.0);
        let empty = SdfGrid::from_fn(16, |_| 1.0).unwrap();
        assert_eq!(volume_iou(&empty, &empty).unwrap(), 1.0); // both empty
        assert_eq!(volume_iou(&s, &empty).unwrap(), 0.0);
        let left = SdfGrid::from_fn(16, |p| (p - vec3(-0.5, 0.0, 0.0)).norm() - 0.2).unwrap();
        let right = SdfGrid::from_fn(16, |p| (p - vec3(0.5, 0.0, 0.0)).norm() - 0.2).unwrap();
        assert_eq!(volume_iou(&left, &right).unwrap(), 0.0);
        let other = SdfGrid::from_fn(8, sphere_sdf(0.5)).unwrap();
        assert!(volume_iou(&s, &other).is_err());
    }

    #[test]
    fn volume_iou_matches_the_monte_carlo_oracle() {
        // sphere r=0.5 inside box half-extent 0.5: analytic IoU is
        // (4/3 pi r^3) / 1 = 0.5236
        let sphere = SdfGrid::from_fn_voxel_centers(128, sphere_sdf(0.5)).unwrap();
        let cube = SdfGrid::from_fn_voxel_centers(128, box_sdf(0.5)).unwrap();
        let got = volume_iou(&sphere, &cube).unwrap();
        let analytic = std::f64::consts::PI / 6.0;
        assert!((got - analytic).abs() <= 0.01, "{} vs {}", got, analytic);

        let mut rng = Rng::seed_from(409);
        let mut inter = 0usize;
        let mut union = 0usize;
        for _ in 0..1_000_000 {
            let p = vec3(
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
            );
            let (a, b) = (sphere_sdf(0.5)(p) < 0.0, box_sdf(0.5)(p) < 0.0);
            if a && b {
                inter += 1;
            }
            if a || b {
                union += 1;
            }
        }
        let mc = inter as f64 / union as f64;
        assert!((got - mc).abs() <= 0.01, "{} vs monte carlo {}", got, mc);
    }

    #[test]
    fn inside_test_trivial_points() {
        let grid = SdfGrid::from_fn(32, sphere_sdf(0.5)).unwrap();
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        assert!(mesh_inside_test(&mesh, vec3(0.0, 0.0, 0.0)));
        assert!(!mesh_inside_test(&mesh, vec3(2.0, 2.0, 2.0)));
    }

    #[test]
    fn inside_test_agrees_with_the_analytic_sign() {
        let grid = SdfGrid::from_fn(64, sphere_sdf(0.5)).unwrap();
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        let mut rng = Rng::seed_from(410);
        let mut agree = 0usize;
        let n = 1000usize;
        for _ in 0..n {
            let p = vec3(
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
                rng.uniform_in(-1.0, 1.0),
            );
            if mesh_inside_test(&mesh, p) == (sphere_sdf(0.5)(p) < 0.0) {
                agree += 1;
            }
        }
        assert!(agree * 1000 >= 995 * n, "agreement {}/{}", agree, n);
    }

    #[test]
    fn obj_round_trips_bit_exactly() {
        let grid = SdfGrid::from_fn(12, sphere_sdf(0.5)).unwrap();
        let mesh = marching_cubes(&grid, 0.0).unwrap();
        let text = mesh_to_obj(&mesh);
        assert!(text.starts_with("v "));
        let back = parse_obj(&text).unwrap();
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            assert_eq!(a.to_array(), b.to_array());
        }
        // face entries with attribute suffixes parse to the same indices
        let with_attrs = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2/2 3//3\n";
        let m = parse_obj(with_attrs).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
        assert!(parse_obj("f 1 2 3\n").is_err()); // indices out of range
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n").is_err());
    }

    #[test]
    fn report_serialization_round_trips() {
        let r = MetricReport {
            chamfer: 0.00125,
            f_score: 98.5,
            volume_iou: 0.91,
            samples_a: 2048,
            samples_b: 2048,
            tau: DEFAULT_TAU,
            grid_resolution: DEFAULT_IOU_GRID,
        };
        r.validate().unwrap();
        let text = r.to_text();
        assert!(text.contains("chamfer=0.00125\n"));
        assert!(text.contains("tau=0.05\n"));
        assert!(text.contains("grid_resolution=128\n"));
        let record = r.to_record();
        assert_eq!(record.lines().count(), 1);
        assert_eq!(MetricReport::parse_record(&record).unwrap(), r);
        let bad = MetricReport { f_score: 130.0, ..r };
        assert!(bad.validate().is_err());
        assert!(MetricReport::parse_record("chamfer=1").is_err());
    }

    #[test]
    fn mesh_validate_rejects_bad_input() {
        let mut mesh = unit_square();
        mesh.validate().unwrap();
        mesh.triangles.push([0, 1, 9]);
        assert!(mesh.validate().is_err());
        mesh.triangles.pop();
        mesh.triangles.push([0, 1, 1]);
        assert!(mesh.validate().is_err());
    }
}
