//! Distance-normalized reprojection error, point-cloud overlays and
//! colorization.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, PointCloud, RigidTransform};
use crate::image::GrayImage;

/// Pixel thresholds of the reported error fractions.
pub const NRE_THRESHOLDS: [f64; 4] = [0.5, 1.0, 5.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CornerError {
    pub placement_id: usize,
    pub corner_index: usize,
    pub raw_error: f64,
    /// Range from the LiDAR origin over the largest range in the set.
    pub weight: f64,
    pub weighted_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdFraction {
    pub threshold: f64,
    /// Percentage of evaluated corners whose weighted error is below the
    /// threshold.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    /// Sum of weighted errors.
    pub nre_total: f64,
    pub mean_weighted_error: f64,
    pub mean_raw_error: f64,
    pub per_corner: Vec<CornerError>,
    pub fraction_below: Vec<ThresholdFraction>,
    /// `(placement_id, corner_index)` of corners behind the camera.
    pub excluded: Vec<(usize, usize)>,
}

impl EvaluationReport {
    pub fn max_raw_error(&self) -> f64 {
        self.per_corner.iter().map(|c| c.raw_error).fold(0.0, f64::max)
    }

    pub fn percent_below(&self, threshold: f64) -> Option<f64> {
        self.fraction_below
            .iter()
            .find(|f| f.threshold == threshold)
            .map(|f| f.percent)
    }
}

/// Index-matched corner lists from a single placement.
pub fn normalized_reprojection_error(
    c3d: &[Vector3<f64>],
    c2d: &[Vector2<f64>],
    extrinsic: &RigidTransform,
    intr: &CameraIntrinsics,
) -> Result<EvaluationReport> {
    let ids: Vec<(usize, usize)> = (0..c3d.len()).map(|k| (0, k)).collect();
    normalized_reprojection_error_labeled(&ids, c3d, c2d, extrinsic, intr)
}

/// Each 3D corner is reprojected and compared with its 2D mate; errors are
/// weighted by `d / d_max`, `d` being the corner's range from the LiDAR
/// origin and `d_max` the largest range among the evaluated corners.
pub fn normalized_reprojection_error_labeled(
    ids: &[(usize, usize)],
    c3d: &[Vector3<f64>],
    c2d: &[Vector2<f64>],
    extrinsic: &RigidTransform,
    intr: &CameraIntrinsics,
) -> Result<EvaluationReport> {
    if c3d.len() != c2d.len() || ids.len() != c3d.len() {
        return Err(Error::DimensionMismatch {
            expected: c3d.len(),
            got: c2d.len().min(ids.len()),
        });
    }
    let mut kept = Vec::with_capacity(c3d.len());
    let mut excluded = Vec::new();
    for k in 0..c3d.len() {
        match project_point(&extrinsic.apply(&c3d[k]), intr) {
            Ok(uv) => kept.push((k, (uv - c2d[k]).norm(), c3d[k].norm())),
            Err(_) => {
                log::warn!("corner {:?} is behind the camera; excluded", ids[k]);
                excluded.push(ids[k]);
            }
        }
    }
    let d_max = kept.iter().map(|k| k.2).fold(0.0, f64::max);
    let per_corner: Vec<CornerError> = kept
        .iter()
        .map(|&(k, raw, d)| {
            let weight = if d_max > 0.0 { d / d_max } else { 1.0 };
            CornerError {
                placement_id: ids[k].0,
                corner_index: ids[k].1,
                raw_error: raw,
                weight,
                weighted_error: weight * raw,
            }
        })
        .collect();
    let n = per_corner.len();
    let nre_total: f64 = per_corner.iter().map(|c| c.weighted_error).sum();
    let raw_total: f64 = per_corner.iter().map(|c| c.raw_error).sum();
    let fraction_below = NRE_THRESHOLDS
        .iter()
        .map(|&t| ThresholdFraction {
            threshold: t,
            percent: if n == 0 {
                0.0
            } else {
                100.0 * per_corner.iter().filter(|c| c.weighted_error < t).count() as f64 / n as f64
            },
        })
        .collect();
    Ok(EvaluationReport {
        nre_total,
        mean_weighted_error: if n == 0 { 0.0 } else { nre_total / n as f64 },
        mean_raw_error: if n == 0 { 0.0 } else { raw_total / n as f64 },
        per_corner,
        fraction_below,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    /// Intensity of the nearest point per pixel, 0 where nothing projects.
    pub image: GrayImage,
    /// Camera-frame depth per pixel, infinite where nothing projects.
    pub depth: Vec<f64>,
}

impl Overlay {
    pub fn lit(&self, u: usize, v: usize) -> bool {
        self.depth[v * self.image.width + u].is_finite()
    }
}

/// Z-buffered splat of every point into its nearest pixel.
pub fn reprojection_overlay(cloud: &PointCloud, extrinsic: &RigidTransform, intr: &CameraIntrinsics) -> Overlay {
    let (w, h) = (intr.width as usize, intr.height as usize);
    let mut image = GrayImage::new(w, h, 0.0);
    let mut depth = vec![f64::INFINITY; w * h];
    for p in &cloud.points {
        let pc = extrinsic.apply(&p.pos());
        let Ok(uv) = project_point(&pc, intr) else {
            continue;
        };
        let (u, v) = (uv.x.round(), uv.y.round());
        if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
            continue;
        }
        let k = v as usize * w + u as usize;
        if pc.z < depth[k] {
            depth[k] = pc.z;
            image.pixels[k] = p.intensity;
        }
    }
    Overlay { image, depth }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorizedCloud {
    pub cloud: PointCloud,
    /// Bilinear image value per point; `None` when it does not project
    /// inside the image.
    pub colors: Vec<Option<f64>>,
}

pub fn colorize_cloud(
    cloud: &PointCloud,
    image: &GrayImage,
    extrinsic: &RigidTransform,
    intr: &CameraIntrinsics,
) -> ColorizedCloud {
    let colors = cloud
        .points
        .iter()
        .map(|p| {
            let uv = project_point(&extrinsic.apply(&p.pos()), intr).ok()?;
            image.bilinear(uv.x, uv.y)
        })
        .collect();
    ColorizedCloud {
        cloud: cloud.clone(),
        colors,
    }
}

/// Blue-to-red ramp for overlay points.
pub fn ramp_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * t - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * t - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * t - 1.0).abs()).clamp(0.0, 1.0);
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// The camera image in gray with lit overlay pixels painted by intensity.
pub fn overlay_rgb(background: &GrayImage, overlay: &Overlay) -> Vec<[u8; 3]> {
    background
        .pixels
        .iter()
        .zip(&overlay.depth)
        .zip(&overlay.image.pixels)
        .map(|((b, d), i)| {
            if d.is_finite() {
                ramp_color(*i)
            } else {
                let g = (b.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g]
            }
        })
        .collect()
}
