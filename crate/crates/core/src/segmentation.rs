//! Locating the board cluster in an integrated cloud: difference-of-normals
//! filtering, Euclidean clustering, similarity ranking and vertical-bound
//! trimming of the upholder.
//!
//! Normals and clusters are computed on voxel centroids; clusters are mapped
//! back to the original points before ranking, so every output is a subset
//! of the input cloud.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corner3d::{estimate_alignment, Corner3dParams};
use crate::error::{Error, Result};
use crate::geometry::{fit_plane_pca, CheckerboardSpec, Point3, PointCloud};
use crate::refinement::{
    flatten_to_plane, grid_uniform_downsample, iterative_plane_refine, RefinementParams,
};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationParams {
    pub r_small: f64,
    pub r_large: f64,
    pub don_threshold: f64,
    pub cluster_tolerance: f64,
    /// Cluster size bounds in voxels; `None` derives them from the board area.
    pub min_cluster: Option<usize>,
    pub max_cluster: Option<usize>,
    /// Weight of the board-height constraint when trimming.
    pub w: f64,
    pub z_bins: usize,
    /// Voxel edge used for normals and clustering.
    pub voxel: f64,
    /// Multi-start budget when ranking candidates.
    pub ranking_starts: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            r_small: 0.1,
            r_large: 0.3,
            don_threshold: 0.25,
            cluster_tolerance: 0.1,
            min_cluster: None,
            max_cluster: None,
            w: 0.5,
            z_bins: 32,
            voxel: 0.05,
            ranking_starts: 4,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("segmentation: {m}")));
        if !(self.r_small > 0.0 && self.r_small < self.r_large) {
            return bad("need 0 < r_small < r_large");
        }
        if !(self.don_threshold > 0.0 && self.don_threshold < 1.0) {
            return bad("don_threshold must lie in (0, 1)");
        }
        if !(self.cluster_tolerance > 0.0) || !(self.voxel > 0.0) {
            return bad("cluster_tolerance and voxel must be > 0");
        }
        if let (Some(lo), Some(hi)) = (self.min_cluster, self.max_cluster) {
            if lo >= hi {
                return bad("min_cluster must be < max_cluster");
            }
        }
        if !(self.w >= 0.0) {
            return bad("w must be >= 0");
        }
        if self.z_bins < 8 {
            return bad("z_bins must be >= 8");
        }
        if !(1..=8).contains(&self.ranking_starts) {
            return bad("ranking_starts must lie in 1..=8");
        }
        Ok(())
    }

    /// Voxel-count bounds for a board of `spec`: a quarter to four times the
    /// board area in voxels, unless set explicitly.
    pub fn cluster_bounds(&self, spec: &CheckerboardSpec) -> (usize, usize) {
        let expected = spec.board_width() * spec.board_height() / (self.voxel * self.voxel);
        (
            self.min_cluster.unwrap_or((0.25 * expected).floor().max(3.0) as usize),
            self.max_cluster.unwrap_or((4.0 * expected).ceil() as usize),
        )
    }
}

/// Ratio of the middle to the largest covariance eigenvalue below which a
/// neighborhood counts as a line and has no surface normal.
const MIN_PLANARITY: f64 = 0.05;

/// Per-point unit normals from the neighborhood covariance within `radius`,
/// oriented toward the sensor origin. `None` marks points with fewer than 3
/// neighbors or a line-like neighborhood.
pub fn estimate_normals(cloud: &PointCloud, radius: f64) -> Vec<Option<Vector3<f64>>> {
    let tree = KdTree::from_cloud(cloud);
    normals_with_tree(&tree, radius)
}

fn normals_with_tree(tree: &KdTree, radius: f64) -> Vec<Option<Vector3<f64>>> {
    (0..tree.len())
        .into_par_iter()
        .map(|i| {
            let p = *tree.point(i);
            let nb = tree.within_radius(&p, radius);
            if nb.len() < 4 {
                return None;
            }
            let pts: Vec<Vector3<f64>> = nb.iter().map(|&j| *tree.point(j)).collect();
            let (_, n, ev) = fit_plane_pca(&pts)?;
            if !(ev[1] >= MIN_PLANARITY * ev[2]) {
                return None;
            }
            Some(if n.dot(&p) > 0.0 { -n } else { n })
        })
        .collect()
}

/// Indices of the points whose normals at the two radii differ by at most
/// `don_threshold` (as `‖n_small − n_large‖ / 2`).
pub fn difference_of_normals_indices(cloud: &PointCloud, params: &SegmentationParams) -> Vec<usize> {
    if cloud.is_empty() {
        return Vec::new();
    }
    let tree = KdTree::from_cloud(cloud);
    let small = normals_with_tree(&tree, params.r_small);
    let large = normals_with_tree(&tree, params.r_large);
    (0..cloud.len())
        .filter(|&i| match (small[i], large[i]) {
            (Some(a), Some(b)) => (a - b).norm() / 2.0 <= params.don_threshold,
            _ => false,
        })
        .collect()
}

pub fn difference_of_normals_filter(cloud: &PointCloud, params: &SegmentationParams) -> PointCloud {
    cloud.select(&difference_of_normals_indices(cloud, params))
}

/// Connected components under `tolerance` adjacency whose sizes lie in
/// `[min_size, max_size]`, largest first (ties by smallest member index).
/// Member lists are ascending.
pub fn euclidean_cluster_indices(
    cloud: &PointCloud,
    tolerance: f64,
    min_size: usize,
    max_size: usize,
) -> Vec<Vec<usize>> {
    let tree = KdTree::from_cloud(cloud);
    let mut label = vec![usize::MAX; cloud.len()];
    let mut clusters = Vec::new();
    for seed in 0..cloud.len() {
        if label[seed] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        label[seed] = id;
        let mut members = vec![seed];
        let mut head = 0;
        while head < members.len() {
            let q = members[head];
            head += 1;
            for nb in tree.within_radius(tree.point(q), tolerance) {
                if label[nb] == usize::MAX {
                    label[nb] = id;
                    members.push(nb);
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    let mut kept: Vec<Vec<usize>> = clusters
        .into_iter()
        .filter(|c| (min_size..=max_size).contains(&c.len()))
        .collect();
    kept.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    kept
}

pub fn euclidean_cluster(
    cloud: &PointCloud,
    tolerance: f64,
    min_size: usize,
    max_size: usize,
) -> Vec<PointCloud> {
    euclidean_cluster_indices(cloud, tolerance, min_size, max_size)
        .iter()
        .map(|c| cloud.select(c))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    /// One point per occupied voxel: mean position and intensity.
    pub centroids: PointCloud,
    /// Input indices per voxel, ascending.
    pub members: Vec<Vec<usize>>,
}

/// Voxels are visited in lexicographic order of their integer coordinates.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> VoxelGrid {
    let mut cells: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = (
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        );
        cells.entry(key).or_default().push(i);
    }
    let mut centroids = Vec::with_capacity(cells.len());
    let mut members = Vec::with_capacity(cells.len());
    for idx in cells.into_values() {
        let n = idx.len() as f64;
        let (mut s, mut it) = (Vector3::zeros(), 0.0);
        for &i in &idx {
            s += cloud.points[i].pos();
            it += cloud.points[i].intensity;
        }
        centroids.push(Point3::from_vector(&(s / n), it / n));
        members.push(idx);
    }
    VoxelGrid {
        centroids: PointCloud::new(centroids),
        members,
    }
}

/// Points inside the axis-aligned box `[lo, hi]`.
pub fn crop_box(cloud: &PointCloud, lo: &Vector3<f64>, hi: &Vector3<f64>) -> PointCloud {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let p = cloud.points[i].pos();
            (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
        })
        .collect();
    cloud.select(&keep)
}

/// Board candidates as input-index sets: voxelize, keep smooth voxels, cluster.
/// Voxels rejected by the normal test are then handed to the cluster owning
/// their nearest smooth voxel, if it lies within `cluster_tolerance`; range
/// noise otherwise punches holes into the board.
pub fn candidate_clusters(
    cloud: &PointCloud,
    spec: &CheckerboardSpec,
    params: &SegmentationParams,
) -> Vec<Vec<usize>> {
    let grid = voxel_downsample(cloud, params.voxel);
    let smooth = difference_of_normals_indices(&grid.centroids, params);
    let kept = grid.centroids.select(&smooth);
    let (lo, hi) = params.cluster_bounds(spec);
    let clusters = euclidean_cluster_indices(&kept, params.cluster_tolerance, lo, hi);

    let mut voxels: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| c.iter().map(|&v| smooth[v]).collect())
        .collect();
    let (owner, anchors): (Vec<usize>, Vec<Vector3<f64>>) = clusters
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| c.iter().map(move |&v| (ci, v)))
        .map(|(ci, v)| (ci, kept.points[v].pos()))
        .unzip();
    if !anchors.is_empty() {
        let tree = KdTree::new(anchors);
        let mut is_smooth = vec![false; grid.members.len()];
        for &v in &smooth {
            is_smooth[v] = true;
        }
        let tol2 = params.cluster_tolerance * params.cluster_tolerance;
        for (v, c) in grid.centroids.points.iter().enumerate() {
            if is_smooth[v] {
                continue;
            }
            if let Some(nb) = tree.knn(&c.pos(), 1, None).first() {
                if nb.dist2 <= tol2 {
                    voxels[owner[nb.index]].push(v);
                }
            }
        }
    }
    voxels
        .into_iter()
        .map(|vs| {
            let mut pts: Vec<usize> = vs
                .iter()
                .flat_map(|&v| grid.members[v].iter().copied())
                .collect();
            pts.sort_unstable();
            pts
        })
        .collect()
}

/// Score of one candidate: plane refinement, flattening, density capping and
/// a reduced multi-start alignment, returning the cost per point.
pub fn candidate_score(
    cluster: &PointCloud,
    spec: &CheckerboardSpec,
    refinement: &RefinementParams,
    corner3d: &Corner3dParams,
    seed: u64,
) -> Result<f64> {
    let refined = iterative_plane_refine(cluster, refinement, seed)?;
    let flat = flatten_to_plane(&refined.cloud, &refined.plane);
    let thin = grid_uniform_downsample(
        &flat,
        &refined.plane,
        refinement.cell_size(spec.g_s),
        refinement.delta_rho,
        seed,
    );
    let alignment = estimate_alignment(&thin, &refined.plane, spec, corner3d)?;
    Ok(alignment.cost_per_point())
}

/// Index of the candidate with the smallest score; ties go to the larger
/// cluster (then the lower index). Candidates that fail to score rank last.
pub fn rank_candidates(
    clusters: &[PointCloud],
    spec: &CheckerboardSpec,
    params: &SegmentationParams,
    refinement: &RefinementParams,
    seed: u64,
) -> Result<(usize, Vec<f64>)> {
    if clusters.is_empty() {
        return Err(Error::NoCandidates);
    }
    let corner3d = Corner3dParams {
        starts: params.ranking_starts,
        ..Corner3dParams::default()
    };
    let scores: Vec<f64> = clusters
        .par_iter()
        .map(|c| candidate_score(c, spec, refinement, &corner3d, seed).unwrap_or(f64::INFINITY))
        .collect();
    let best = (0..clusters.len())
        .min_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then(clusters[b].len().cmp(&clusters[a].len()))
                .then(a.cmp(&b))
        })
        .expect("non-empty");
    Ok((best, scores))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimResult {
    pub cloud: PointCloud,
    pub z_top: f64,
    pub z_down: f64,
}

/// Cuts the upholder off below the board. The width profile `H(z)` is the
/// 90th percentile of horizontal distance to the cluster centroid per z bin
/// (0 below the lowest bin); `Z_down` maximizes
/// `∂H/∂z − w·|(Z_top − z) − L|/L` over bin edges, `L = (n_h+1)·g_s`.
pub fn trim_vertical_bounds(
    cluster: &PointCloud,
    spec: &CheckerboardSpec,
    params: &SegmentationParams,
) -> TrimResult {
    let z_top = cluster.points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let z_min = cluster.points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    if cluster.len() < params.z_bins || !(z_top > z_min) {
        warn!(
            "trim: {} points is too few for {} bins; cluster left untrimmed",
            cluster.len(),
            params.z_bins
        );
        return TrimResult {
            cloud: cluster.clone(),
            z_top,
            z_down: z_min,
        };
    }
    let h = width_profile(cluster, params.z_bins);
    let dz = (z_top - z_min) / params.z_bins as f64;
    let l_board = spec.board_height();
    let mut best = (f64::NEG_INFINITY, z_min);
    for b in 0..params.z_bins {
        let z = z_min + b as f64 * dz;
        let below = if b == 0 { 0.0 } else { h[b - 1] };
        let score = (h[b] - below) / dz - params.w * ((z_top - z) - l_board).abs() / l_board;
        if score > best.0 {
            best = (score, z);
        }
    }
    let z_down = best.1;
    let keep: Vec<usize> = (0..cluster.len())
        .filter(|&i| cluster.points[i].z > z_down)
        .collect();
    TrimResult {
        cloud: cluster.select(&keep),
        z_top,
        z_down,
    }
}

/// Per-bin 90th-percentile horizontal distance from the centroid.
pub fn width_profile(cluster: &PointCloud, bins: usize) -> Vec<f64> {
    let c = cluster.centroid().unwrap_or_else(Vector3::zeros);
    let z_top = cluster.points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
    let z_min = cluster.points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
    let dz = (z_top - z_min) / bins as f64;
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for p in &cluster.points {
        let b = (((p.z - z_min) / dz) as usize).min(bins - 1);
        per_bin[b].push((p.x - c.x).hypot(p.y - c.y));
    }
    per_bin
        .into_iter()
        .map(|mut r| {
            if r.is_empty() {
                return 0.0;
            }
            r.sort_by(f64::total_cmp);
            let k = ((0.9 * (r.len() - 1) as f64).round() as usize).min(r.len() - 1);
            r[k]
        })
        .collect()
}
