//! Point-cloud downsampling and grouping.

use super::sample::PointCloud;
use super::vec3::Vec3;
use crate::error::{Error, Result};

/// Greedy max-min subset selection. The first pick is index 0 by
/// convention; each later pick is the point farthest from everything
/// selected so far, lowest index winning ties. Indices are distinct.
pub fn furthest_point_sampling(pc: &PointCloud, n: usize) -> Result<Vec<usize>> {
    let m = pc.len();
    if n > m {
        return Err(Error::config(format!(
            "furthest_point_sampling: requested {} centers from {} points",
            n, m
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let pts = &pc.points;
    let mut selected = Vec::with_capacity(n);
    selected.push(0usize);
    // min squared distance from each point to the selected set
    let mut min_d2: Vec<f32> = pts.iter().map(|p| (*p - pts[0]).dot(*p - pts[0])).collect();
    while selected.len() < n {
        let mut best = 0usize;
        let mut best_d2 = f32::NEG_INFINITY;
        for (i, &d2) in min_d2.iter().enumerate() {
            if d2 > best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        selected.push(best);
        let bp = pts[best];
        for (i, d2) in min_d2.iter_mut().enumerate() {
            let nd = (pts[i] - bp).dot(pts[i] - bp);
            if nd < *d2 {
                *d2 = nd;
            }
        }
    }
    Ok(selected)
}

/// For each center, the K nearest cloud points (the center itself counts)
/// as offsets from that center. Ordering within a group is by ascending
/// (distance, index); ties at equal distance keep the lower index.
pub fn knn_group(pc: &PointCloud, centers: &[usize], k: usize) -> Result<Vec<Vec<Vec3>>> {
    let m = pc.len();
    if k == 0 || k > m {
        return Err(Error::config(format!(
            "knn_group: K = {} must be in 1..={}",
            k, m
        )));
    }
    for &c in centers {
        if c >= m {
            return Err(Error::config(format!(
                "knn_group: center index {} out of range for {} points",
                c, m
            )));
        }
    }
    let pts = &pc.points;
    let mut groups = Vec::with_capacity(centers.len());
    let mut order: Vec<(f32, usize)> = Vec::with_capacity(m);
    for &c in centers {
        let center = pts[c];
        order.clear();
        for (i, p) in pts.iter().enumerate() {
            let d = *p - center;
            order.push((d.dot(d), i));
        }
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        groups.push(order[..k].iter().map(|&(_, i)| pts[i] - center).collect());
    }
    Ok(groups)
}
