//! On-disk dataset layout: one directory per shape plus a top-level
//! manifest.
//!
//! ```text
//! dataset/
//!   manifest.txt            seed, camera rig, shape names
//!   <shape>/
//!     manifest.txt          flattened shape spec, seed, best view, counts
//!     points.lam3d          M x 3 surface cloud
//!     point_normals.lam3d   M x 3
//!     surface.lam3d         N0 x 3 training surface points
//!     surface_normals.lam3d N0 x 3
//!     volume.lam3d          N x 3 uniform cube points
//!     volume_sdf.lam3d      N signed distances
//!     depth_<k>.lam3d       D x D depth views, k = 0..V-1
//! ```

use std::fs;
use std::path::Path;

use super::manifest::Manifest;
use super::tensor_file::{read_tensor_file, write_tensor_file};
use crate::error::{Error, Result};
use crate::geometry::{
    fibonacci_cameras, spec_from_manifest, spec_to_manifest, DepthImage, PointCloud,
    SdfSampleBatch, ShapeSpec, Vec3,
};

#[derive(Debug, Clone)]
pub struct ShapeRecord {
    pub name: String,
    pub spec: ShapeSpec,
    pub seed: u64,
    pub cloud: PointCloud,
    pub batch: SdfSampleBatch,
    pub depths: Vec<DepthImage>,
    pub best_view: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub seed: u64,
    pub camera_count: usize,
    pub depth_resolution: usize,
    pub records: Vec<ShapeRecord>,
}

impl Dataset {
    pub fn record(&self, name: &str) -> Option<&ShapeRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

fn check_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(Error::data(format!(
            "dataset: shape name '{}' may only use [A-Za-z0-9_-]",
            name
        )))
    }
}

fn flatten(points: &[Vec3]) -> Vec<f32> {
    let mut out = Vec::with_capacity(points.len() * 3);
    for p in points {
        out.extend_from_slice(&p.to_array());
    }
    out
}

fn unflatten(shape: &[usize], data: Vec<f32>, what: &str) -> Result<Vec<Vec3>> {
    if shape.len() != 2 || shape[1] != 3 {
        return Err(Error::data(format!(
            "dataset: {} must be rank-2 with 3 columns, got {:?}",
            what, shape
        )));
    }
    Ok(data
        .chunks_exact(3)
        .map(|c| Vec3::from_array([c[0], c[1], c[2]]))
        .collect())
}

pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut top = Manifest::new();
    top.set("format.version", 1);
    top.set("seed", ds.seed);
    top.set("camera_count", ds.camera_count);
    top.set("depth_resolution", ds.depth_resolution);
    top.set("shape_count", ds.records.len());
    for (i, rec) in ds.records.iter().enumerate() {
        check_name(&rec.name)?;
        top.set(&format!("shape.{}.name", i), &rec.name);
    }
    top.write_to(&dir.join("manifest.txt"))?;

    for rec in &ds.records {
        if rec.depths.len() != ds.camera_count {
            return Err(Error::data(format!(
                "dataset: shape '{}' has {} depth views, rig has {} cameras",
                rec.name,
                rec.depths.len(),
                ds.camera_count
            )));
        }
        let sub = dir.join(&rec.name);
        fs::create_dir_all(&sub)?;

        let mut m = Manifest::new();
        m.set("name", &rec.name);
        m.set("seed", rec.seed);
        m.set("best_view", rec.best_view);
        m.set("points", rec.cloud.len());
        m.set("surface_count", rec.batch.surface_points.len());
        m.set("volume_count", rec.batch.volume_points.len());
        spec_to_manifest(&rec.spec, "shape.", &mut m);
        m.write_to(&sub.join("manifest.txt"))?;

        let mp = rec.cloud.len();
        write_tensor_file(&sub.join("points.lam3d"), &[mp, 3], &rec.cloud.points_flat())?;
        if let Some(normals) = &rec.cloud.normals {
            write_tensor_file(&sub.join("point_normals.lam3d"), &[mp, 3], &flatten(normals))?;
        }
        let n0 = rec.batch.surface_points.len();
        let nv = rec.batch.volume_points.len();
        write_tensor_file(
            &sub.join("surface.lam3d"),
            &[n0, 3],
            &flatten(&rec.batch.surface_points),
        )?;
        write_tensor_file(
            &sub.join("surface_normals.lam3d"),
            &[n0, 3],
            &flatten(&rec.batch.surface_normals),
        )?;
        write_tensor_file(
            &sub.join("volume.lam3d"),
            &[nv, 3],
            &flatten(&rec.batch.volume_points),
        )?;
        write_tensor_file(&sub.join("volume_sdf.lam3d"), &[nv], &rec.batch.volume_sdf)?;
        for (k, img) in rec.depths.iter().enumerate() {
            let d = img.resolution;
            if d != ds.depth_resolution {
                return Err(Error::data(format!(
                    "dataset: shape '{}' view {} has resolution {}, expected {}",
                    rec.name, k, d, ds.depth_resolution
                )));
            }
            write_tensor_file(&sub.join(format!("depth_{}.lam3d", k)), &[d, d], &img.data)?;
        }
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let top = Manifest::read_from(&dir.join("manifest.txt"))?;
    let version: u32 = top.require_parsed("format.version")?;
    if version != 1 {
        return Err(Error::data(format!(
            "dataset: unsupported format version {}",
            version
        )));
    }
    let seed: u64 = top.require_parsed("seed")?;
    let camera_count: usize = top.require_parsed("camera_count")?;
    let depth_resolution: usize = top.require_parsed("depth_resolution")?;
    let shape_count: usize = top.require_parsed("shape_count")?;
    let cameras = fibonacci_cameras(camera_count);

    let mut records = Vec::with_capacity(shape_count);
    for i in 0..shape_count {
        let name = top.require(&format!("shape.{}.name", i))?.to_string();
        check_name(&name)?;
        let sub = dir.join(&name);
        let m = Manifest::read_from(&sub.join("manifest.txt"))?;
        let spec = spec_from_manifest(&m, "shape.")?;
        let rec_seed: u64 = m.require_parsed("seed")?;
        let best_view: usize = m.require_parsed("best_view")?;
        if best_view >= camera_count {
            return Err(Error::data(format!(
                "dataset: shape '{}' best view {} out of range",
                name, best_view
            )));
        }
        let point_count: usize = m.require_parsed("points")?;
        let surface_count: usize = m.require_parsed("surface_count")?;
        let volume_count: usize = m.require_parsed("volume_count")?;

        let (shape_p, data_p) = read_tensor_file(&sub.join("points.lam3d"))?;
        let points = unflatten(&shape_p, data_p, "points")?;
        let normals_path = sub.join("point_normals.lam3d");
        let normals = if normals_path.exists() {
            let (s, d) = read_tensor_file(&normals_path)?;
            Some(unflatten(&s, d, "point_normals")?)
        } else {
            None
        };
        if points.len() != point_count {
            return Err(Error::data(format!(
                "dataset: shape '{}' manifest says {} points, file has {}",
                name,
                point_count,
                points.len()
            )));
        }

        let (s, d) = read_tensor_file(&sub.join("surface.lam3d"))?;
        let surface_points = unflatten(&s, d, "surface")?;
        let (s, d) = read_tensor_file(&sub.join("surface_normals.lam3d"))?;
        let surface_normals = unflatten(&s, d, "surface_normals")?;
        let (s, d) = read_tensor_file(&sub.join("volume.lam3d"))?;
        let volume_points = unflatten(&s, d, "volume")?;
        let (s, volume_sdf) = read_tensor_file(&sub.join("volume_sdf.lam3d"))?;
        if s.len() != 1 {
            return Err(Error::data("dataset: volume_sdf must be rank-1".to_string()));
        }
        if surface_points.len() != surface_count
            || surface_normals.len() != surface_count
            || volume_points.len() != volume_count
            || volume_sdf.len() != volume_count
        {
            return Err(Error::data(format!(
                "dataset: shape '{}' sample counts disagree with manifest",
                name
            )));
        }

        let mut depths = Vec::with_capacity(camera_count);
        for k in 0..camera_count {
            let (s, d) = read_tensor_file(&sub.join(format!("depth_{}.lam3d", k)))?;
            if s != [depth_resolution, depth_resolution] {
                return Err(Error::data(format!(
                    "dataset: shape '{}' view {} has shape {:?}",
                    name, k, s
                )));
            }
            depths.push(DepthImage {
                resolution: depth_resolution,
                data: d,
                camera: cameras[k],
                camera_index: k,
            });
        }

        records.push(ShapeRecord {
            name,
            spec,
            seed: rec_seed,
            cloud: PointCloud { points, normals },
            batch: SdfSampleBatch {
                surface_points,
                surface_normals,
                volume_points,
                volume_sdf,
            },
            depths,
            best_view,
        });
    }

    Ok(Dataset {
        seed,
        camera_count,
        depth_resolution,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{point_cloud, render_depth, sample_batch, select_best_view};
    use crate::rng::Rng;

    fn tiny_dataset() -> Dataset {
        let (name, spec) = crate::geometry::training_corpus().remove(0);
        let mut rng = Rng::seed_from(123);
        let cloud = point_cloud(&spec, 32, &mut rng).unwrap();
        let batch = sample_batch(&spec, 16, 24, &mut rng).unwrap();
        let v = 4;
        let d = 16;
        let depths: Vec<_> = (0..v)
            .map(|k| render_depth(&spec, k, v, d).unwrap())
            .collect();
        let best_view = select_best_view(&spec, v, d).unwrap();
        Dataset {
            seed: 123,
            camera_count: v,
            depth_resolution: d,
            records: vec![ShapeRecord {
                name,
                spec,
                seed: 123,
                cloud,
                batch,
                depths,
                best_view,
            }],
        }
    }

    #[test]
    fn dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.seed, ds.seed);
        assert_eq!(back.records.len(), 1);
        let (a, b) = (&ds.records[0], &back.records[0]);
        assert_eq!(a.name, b.name);
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.best_view, b.best_view);
        assert_eq!(a.cloud.points_flat(), b.cloud.points_flat());
        assert_eq!(a.batch.volume_sdf, b.batch.volume_sdf);
        for (x, y) in a.depths.iter().zip(&b.depths) {
            assert_eq!(x.data, y.data);
            assert_eq!(x.camera_index, y.camera_index);
        }
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir1.path(), &ds).unwrap();
        save_dataset(dir2.path(), &ds).unwrap();
        let name = &ds.records[0].name;
        for file in ["manifest.txt", &format!("{}/manifest.txt", name)] {
            let a = std::fs::read(dir1.path().join(file)).unwrap();
            let b = std::fs::read(dir2.path().join(file)).unwrap();
            assert_eq!(a, b, "{} differs between saves", file);
        }
        let a = std::fs::read(dir1.path().join(name).join("points.lam3d")).unwrap();
        let b = std::fs::read(dir2.path().join(name).join("points.lam3d")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_shape_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny_dataset();
        ds.records[0].name = "../escape".to_string();
        assert!(save_dataset(dir.path(), &ds).is_err());
    }

    #[test]
    fn count_mismatch_is_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir.path(), &ds).unwrap();
        // corrupt the per-shape manifest's volume count
        let name = &ds.records[0].name;
        let path = dir.path().join(name).join("manifest.txt");
        let text = std::fs::read_to_string(&path).unwrap();
        let fixed = text.replace("volume_count=24", "volume_count=23");
        std::fs::write(&path, fixed).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
