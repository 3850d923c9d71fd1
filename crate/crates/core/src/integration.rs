//! Time-domain stacking of non-repetitive scans with per-frame statistical
//! outlier removal.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::spatial::{mean_neighbor_distance, KdTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationParams {
    /// Neighbor count for the per-point mean distance.
    pub k: usize,
    /// Multiplier on the standard deviation of the mean distances.
    pub scale_std: f64,
    /// Cap on the number of frames consumed.
    pub max_frames: usize,
}

impl Default for IntegrationParams {
    fn default() -> Self {
        Self {
            k: 20,
            scale_std: 1.0,
            max_frames: 50,
        }
    }
}

impl IntegrationParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("integration.k must be >= 1".into()));
        }
        if !(self.scale_std > 0.0) {
            return Err(Error::Config("integration.scale_std must be > 0".into()));
        }
        if self.max_frames < 1 {
            return Err(Error::Config("integration.max_frames must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierFilterResult {
    pub cloud: PointCloud,
    /// Indices into the input frame of the retained points, ascending.
    pub kept: Vec<usize>,
    pub mean_k: f64,
    pub std_k: f64,
    pub threshold: f64,
    /// Set when the frame had too few points to filter and was passed
    /// through unchanged.
    pub too_small: bool,
}

/// Threshold on the per-point mean neighbor distance.
pub fn outlier_threshold(mean_k: f64, std_k: f64, scale_std: f64) -> f64 {
    mean_k + scale_std * std_k
}

/// Per-point mean distance to the `k` nearest other points.
pub fn mean_knn_distances(frame: &PointCloud, k: usize) -> Vec<f64> {
    let tree = KdTree::from_cloud(frame);
    (0..frame.len())
        .map(|i| mean_neighbor_distance(&tree, i, k))
        .collect()
}

/// Keeps the points whose mean k-NN distance is at most
/// `meanK + scale_std·stdK` (population standard deviation).
pub fn remove_statistical_outliers(
    frame: &PointCloud,
    params: &IntegrationParams,
) -> OutlierFilterResult {
    if frame.len() <= params.k {
        warn!(
            "frame with {} points is too small for k = {}; passed through unfiltered",
            frame.len(),
            params.k
        );
        return OutlierFilterResult {
            cloud: frame.clone(),
            kept: (0..frame.len()).collect(),
            mean_k: f64::NAN,
            std_k: f64::NAN,
            threshold: f64::NAN,
            too_small: true,
        };
    }
    let dis_k = mean_knn_distances(frame, params.k);
    let n = dis_k.len() as f64;
    let mean_k = dis_k.iter().sum::<f64>() / n;
    let std_k = (dis_k.iter().map(|d| (d - mean_k).powi(2)).sum::<f64>() / n).sqrt();
    let threshold = outlier_threshold(mean_k, std_k, params.scale_std);
    let kept: Vec<usize> = (0..frame.len()).filter(|&i| dis_k[i] <= threshold).collect();
    OutlierFilterResult {
        cloud: frame.select(&kept),
        kept,
        mean_k,
        std_k,
        threshold,
        too_small: false,
    }
}

/// Filters each frame independently and concatenates the survivors in frame
/// order. At most `params.max_frames` frames are consumed.
pub fn integrate_frames(frames: &[PointCloud], params: &IntegrationParams) -> Result<PointCloud> {
    if frames.is_empty() {
        return Err(Error::NoFrames);
    }
    let used = &frames[..frames.len().min(params.max_frames)];
    let filtered: Vec<PointCloud> = used
        .par_iter()
        .map(|f| remove_statistical_outliers(f, params).cloud)
        .collect();
    let total = filtered.iter().map(PointCloud::len).sum();
    let mut points = Vec::with_capacity(total);
    for f in filtered {
        points.extend(f.points);
    }
    Ok(PointCloud::new(points))
}
