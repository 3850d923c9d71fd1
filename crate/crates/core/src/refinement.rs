//! Board-cluster refinement: iterative RANSAC plane gating with a shrinking
//! gate, projection of every point onto the plane along its sensor ray, and
//! per-cell density capping.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_plane_pca, rotation_aligning, Plane, Point3, PointCloud};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementParams {
    /// Initial plane-distance gate in meters.
    pub sigma0: f64,
    /// Gate decay per iteration.
    pub shrink: f64,
    pub max_iterations: usize,
    pub ransac_iterations: usize,
    /// Grid cell edge for density capping; `None` means a quarter of the
    /// checker cell.
    pub grid_cell: Option<f64>,
    /// Maximum points kept per grid cell.
    pub delta_rho: usize,
}

impl Default for RefinementParams {
    fn default() -> Self {
        Self {
            sigma0: 0.05,
            shrink: 0.7,
            max_iterations: 10,
            ransac_iterations: 200,
            grid_cell: None,
            delta_rho: 12,
        }
    }
}

impl RefinementParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0) {
            return Err(Error::Config("refinement.sigma0 must be > 0".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("refinement.shrink must lie in (0, 1)".into()));
        }
        if self.max_iterations < 1 || self.ransac_iterations < 1 {
            return Err(Error::Config(
                "refinement iteration counts must be >= 1".into(),
            ));
        }
        if let Some(c) = self.grid_cell {
            if !(c > 0.0) {
                return Err(Error::Config("refinement.grid_cell must be > 0".into()));
            }
        }
        if self.delta_rho < 1 {
            return Err(Error::Config("refinement.delta_rho must be >= 1".into()));
        }
        Ok(())
    }

    pub fn cell_size(&self, g_s: f64) -> f64 {
        self.grid_cell.unwrap_or(g_s / 4.0)
    }
}

/// RANSAC plane with a least-squares refit on the winning inlier set.
///
/// Hypothesis `h` samples from its own stream derived from `(seed, h)`, and
/// the winner is chosen by (inlier count desc, inlier RMS asc, h asc), so the
/// result does not depend on the worker count. The returned inliers are those
/// of the winning hypothesis; the plane is oriented with `d <= 0`.
pub fn ransac_plane_fit(
    cloud: &PointCloud,
    iterations: usize,
    inlier_gate: f64,
    seed: u64,
) -> Result<(Plane, Vec<usize>)> {
    let n = cloud.len();
    if n < 3 {
        return Err(Error::DegenerateCloud(format!(
            "plane fit needs 3 points, got {n}"
        )));
    }
    let pos = cloud.positions();
    let scored: Vec<Option<(usize, f64)>> = (0..iterations.max(1))
        .into_par_iter()
        .map(|h| {
            let (i, j, k) = sample3(n, seed, h);
            let plane = plane_through(&pos[i], &pos[j], &pos[k])?;
            let mut count = 0usize;
            let mut sq = 0.0;
            for p in &pos {
                let d = plane.signed_distance(p).abs();
                if d <= inlier_gate {
                    count += 1;
                    sq += d * d;
                }
            }
            Some((count, (sq / count.max(1) as f64).sqrt()))
        })
        .collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for (h, s) in scored.iter().enumerate() {
        if let Some((count, rms)) = *s {
            let better = match best {
                None => true,
                Some((_, bc, br)) => count > bc || (count == bc && rms < br),
            };
            if better {
                best = Some((h, count, rms));
            }
        }
    }
    let (h, count, _) = best.ok_or_else(|| {
        Error::DegenerateCloud("every plane hypothesis was collinear".into())
    })?;
    if count < 3 {
        return Err(Error::DegenerateCloud(
            "no plane hypothesis has 3 inliers".into(),
        ));
    }
    // Replay the winner's sample to recover its inliers.
    let (i, j, k) = sample3(n, seed, h);
    let hyp = plane_through(&pos[i], &pos[j], &pos[k]).expect("winning hypothesis");
    let inliers: Vec<usize> = (0..n)
        .filter(|&q| hyp.signed_distance(&pos[q]).abs() <= inlier_gate)
        .collect();
    let support: Vec<Vector3<f64>> = inliers.iter().map(|&q| pos[q]).collect();
    let plane = match fit_plane_pca(&support) {
        Some((c, normal, _)) => Plane::from_point_normal(&c, &normal)?,
        None => hyp,
    };
    Ok((plane.oriented_away_from_origin(), inliers))
}

/// Three distinct indices from hypothesis `h`'s stream.
fn sample3(n: usize, seed: u64, h: usize) -> (usize, usize, usize) {
    if n == 3 {
        return (0, 1, 2);
    }
    let mut rng = rng_from(seed, &[h as u64]);
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let mut k = rng.random_range(0..n);
    while k == i || k == j {
        k = rng.random_range(0..n);
    }
    (i, j, k)
}

fn plane_through(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Plane> {
    let n = (b - a).cross(&(c - a));
    let scale = (b - a).norm() * (c - a).norm();
    if !(n.norm() > 1e-12 * scale.max(1e-300)) {
        return None;
    }
    Plane::from_point_normal(a, &n).ok()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRefinement {
    pub plane: Plane,
    /// Survivors of the final gate.
    pub cloud: PointCloud,
    /// Survivor count after each iteration.
    pub survivors: Vec<usize>,
    /// RMS plane distance of the survivors after each iteration.
    pub rms: Vec<f64>,
}

fn least_squares_plane(cloud: &PointCloud) -> Option<Plane> {
    let (c, normal, _) = fit_plane_pca(&cloud.positions())?;
    Some(Plane::from_point_normal(&c, &normal).ok()?.oriented_away_from_origin())
}

/// Fit, gate at the current σ, shrink σ; stops once a pass removes nothing or
/// `max_iterations` passes have run.
pub fn iterative_plane_refine(
    cloud: &PointCloud,
    params: &RefinementParams,
    seed: u64,
) -> Result<PlaneRefinement> {
    if cloud.len() < 3 {
        return Err(Error::DegenerateCloud(format!(
            "plane refinement needs 3 points, got {}",
            cloud.len()
        )));
    }
    let mut current = cloud.clone();
    let mut sigma = params.sigma0;
    let mut survivors = Vec::new();
    let mut rms = Vec::new();
    let mut plane;
    let mut it = 0;
    loop {
        // Only the first pass can see gross outliers. Later passes refit by
        // least squares: a consensus fit at a gate below the range noise
        // chases the densest stripe of the slab and tilts the plane.
        plane = if it == 0 {
            ransac_plane_fit(
                &current,
                params.ransac_iterations,
                sigma,
                crate::rng::derive_seed(seed, &[it as u64]),
            )
            .map_err(|_| Error::RefinementCollapsed(current.len()))?
            .0
        } else {
            least_squares_plane(&current).ok_or(Error::RefinementCollapsed(current.len()))?
        };
        let keep: Vec<usize> = (0..current.len())
            .filter(|&i| plane.signed_distance(&current.points[i].pos()).abs() <= sigma)
            .collect();
        if keep.len() < 3 {
            return Err(Error::RefinementCollapsed(keep.len()));
        }
        let removed = keep.len() < current.len();
        current = current.select(&keep);
        survivors.push(current.len());
        let ss: f64 = current
            .points
            .iter()
            .map(|q| plane.signed_distance(&q.pos()).powi(2))
            .sum();
        rms.push((ss / current.len() as f64).sqrt());
        it += 1;
        if !removed || it >= params.max_iterations {
            break;
        }
        sigma *= params.shrink;
    }
    Ok(PlaneRefinement {
        plane,
        cloud: current,
        survivors,
        rms,
    })
}

/// Slides every point along its sensor ray onto `plane`: `p' = t·p` with
/// `t = −d / (a·x + b·y + c·z)`. Points whose ray is parallel to the plane
/// are dropped with a warning.
pub fn flatten_to_plane(cloud: &PointCloud, plane: &Plane) -> PointCloud {
    let mut dropped = 0usize;
    let mut out = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let denom = plane.a * p.x + plane.b * p.y + plane.c * p.z;
        if denom.abs() < 1e-12 {
            dropped += 1;
            continue;
        }
        let t = -plane.d / denom;
        out.push(Point3::new(t * p.x, t * p.y, t * p.z, p.intensity));
    }
    if dropped > 0 {
        warn!("flatten: dropped {dropped} points with rays parallel to the plane");
    }
    PointCloud {
        points: out,
        frame_id: cloud.frame_id,
    }
}

/// In-plane coordinates: the rotation taking the plane normal to +z, applied
/// about the origin. Only used for binning, so the offset is irrelevant.
fn plane_coordinates(cloud: &PointCloud, plane: &Plane) -> Vec<(f64, f64)> {
    let r = rotation_aligning(&plane.normal(), &Vector3::z());
    cloud
        .points
        .iter()
        .map(|p| {
            let q = r * p.pos();
            (q.x, q.y)
        })
        .collect()
}

/// Caps every `cell × cell` bin of the plane at `delta_rho` points, choosing
/// the survivors of an overfull bin uniformly at random. Output order is bin
/// order (row-major over integer bin coordinates) then input order.
pub fn grid_uniform_downsample(
    cloud: &PointCloud,
    plane: &Plane,
    cell: f64,
    delta_rho: usize,
    seed: u64,
) -> PointCloud {
    let uv = plane_coordinates(cloud, plane);
    let mut bins: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, (u, v)) in uv.iter().enumerate() {
        let key = ((v / cell).floor() as i64, (u / cell).floor() as i64);
        bins.entry(key).or_default().push(i);
    }
    let mut rng = rng_from(seed, &[]);
    let mut keep = Vec::with_capacity(cloud.len());
    for members in bins.values() {
        if members.len() <= delta_rho {
            keep.extend_from_slice(members);
        } else {
            let mut chosen: Vec<usize> =
                rand::seq::index::sample(&mut rng, members.len(), delta_rho)
                    .into_iter()
                    .map(|k| members[k])
                    .collect();
            chosen.sort_unstable();
            keep.extend(chosen);
        }
    }
    cloud.select(&keep)
}

/// Occupied-bin counts keyed like [`grid_uniform_downsample`].
pub fn grid_cell_counts(cloud: &PointCloud, plane: &Plane, cell: f64) -> BTreeMap<(i64, i64), usize> {
    let mut bins = BTreeMap::new();
    for (u, v) in plane_coordinates(cloud, plane) {
        *bins
            .entry(((v / cell).floor() as i64, (u / cell).floor() as i64))
            .or_insert(0) += 1;
    }
    bins
}
