//! 3D inner corners from a refined board cloud: the cloud is brought into its
//! plane frame, reflectance is binarized, and the in-plane pose that best
//! matches the standard checkerboard pattern is found by multi-start
//! optimization. Corners of the standard model are then mapped back.
//!
//! Standard model frame: x along the `n_w` direction, y along `n_h`, z toward
//! the sensor; the board occupies `[0, (n_w+1)·g_s] × [0, (n_h+1)·g_s]`.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    rotation_aligning, CheckerboardSpec, Plane, PointCloud, RigidTransform,
};
use crate::optimize::{compass_search, lbfgs, LbfgsParams};

/// Pattern colours: 0 is dark, 1 is bright.
pub type Color = u8;

#[derive(Debug, Clone, PartialEq)]
pub struct StandardBoardModel {
    pub spec: CheckerboardSpec,
    pub lower_left_color: Color,
    pub width: f64,
    pub height: f64,
    /// Row-major from the lower-left, rows along x.
    pub std_corners: Vec<Vector2<f64>>,
}

pub fn build_standard_model(spec: &CheckerboardSpec, lower_left_color: Color) -> StandardBoardModel {
    let mut std_corners = Vec::with_capacity(spec.corner_count());
    for j in 1..=spec.n_h {
        for i in 1..=spec.n_w {
            std_corners.push(Vector2::new(i as f64 * spec.g_s, j as f64 * spec.g_s));
        }
    }
    StandardBoardModel {
        spec: *spec,
        lower_left_color: lower_left_color & 1,
        width: spec.board_width(),
        height: spec.board_height(),
        std_corners,
    }
}

impl StandardBoardModel {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }

    /// Pattern colour at `(x, y)`, or `None` outside the board.
    pub fn color_at(&self, x: f64, y: f64) -> Option<Color> {
        if !self.contains(x, y) {
            return None;
        }
        let i = ((x / self.spec.g_s).floor() as usize).min(self.spec.n_w);
        let j = ((y / self.spec.g_s).floor() as usize).min(self.spec.n_h);
        Some(self.lower_left_color ^ (((i + j) & 1) as u8))
    }

    /// Manhattan distance to the nearest inner corner. On a regular grid the
    /// Euclidean-nearest corner is found per axis.
    #[inline]
    pub fn corner_distance(&self, x: f64, y: f64) -> f64 {
        let g = self.spec.g_s;
        let gx = (x / g).round().clamp(1.0, self.spec.n_w as f64) * g;
        let gy = (y / g).round().clamp(1.0, self.spec.n_h as f64) * g;
        (gx - x).abs() + (gy - y).abs()
    }

    /// The same physical board described from its opposite corner: colours
    /// of the half-turned pattern start from `c ⊕ (n_w + n_h)`.
    pub fn half_turn(&self) -> StandardBoardModel {
        let parity = ((self.spec.n_w + self.spec.n_h) & 1) as u8;
        build_standard_model(&self.spec, self.lower_left_color ^ parity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarization {
    pub threshold: f64,
    /// 1 for bright (white cell), 0 for dark.
    pub labels: Vec<Color>,
}

const OTSU_BINS: usize = 256;

/// Two-class split of the intensities maximizing between-class variance
/// over a 256-bin histogram spanning the observed range.
pub fn binarize_intensity(cloud: &PointCloud) -> Result<Binarization> {
    if cloud.len() < 2 {
        return Err(Error::NoReflectanceContrast);
    }
    let lo = cloud.points.iter().map(|p| p.intensity).fold(f64::INFINITY, f64::min);
    let hi = cloud
        .points
        .iter()
        .map(|p| p.intensity)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-9) {
        return Err(Error::NoReflectanceContrast);
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    let bin = |v: f64| (((v - lo) / width) as usize).min(OTSU_BINS - 1);
    let mut hist = [0usize; OTSU_BINS];
    for p in &cloud.points {
        hist[bin(p.intensity)] += 1;
    }
    let total = cloud.len() as f64;
    let center = |b: usize| lo + (b as f64 + 0.5) * width;
    let sum_all: f64 = (0..OTSU_BINS).map(|b| hist[b] as f64 * center(b)).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_b) = (-1.0, 0);
    for b in 0..OTSU_BINS - 1 {
        w0 += hist[b] as f64;
        sum0 += hist[b] as f64 * center(b);
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_b = b;
        }
    }
    let threshold = lo + (best_b + 1) as f64 * width;
    let labels = cloud
        .points
        .iter()
        .map(|p| u8::from(bin(p.intensity) > best_b))
        .collect();
    Ok(Binarization { threshold, labels })
}

/// Rigid map taking `plane` to `z = 0` with the cloud centroid at the origin.
/// The rotation is the smallest one taking the sensor-facing normal to +z.
pub fn canonical_plane_frame(cloud: &PointCloud, plane: &Plane) -> (RigidTransform, PointCloud) {
    let toward_sensor = -plane.oriented_away_from_origin().normal();
    let rotation = rotation_aligning(&toward_sensor, &Vector3::z());
    let c = cloud.centroid().unwrap_or_else(Vector3::zeros);
    // Put the centroid exactly on the plane so the mapped cloud sits at z=0.
    let c = c - plane.normal() * plane.signed_distance(&c);
    let t = RigidTransform {
        rotation,
        translation: -(rotation * c),
    };
    let out = crate::geometry::transform_cloud(cloud, &t);
    (t, out)
}

/// Reflectance-pattern dissimilarity of the points after the in-plane motion
/// `p ↦ R(theta)·p + (tx, ty)`.
pub fn similarity_cost(
    theta: f64,
    tx: f64,
    ty: f64,
    points: &[Vector2<f64>],
    labels: &[Color],
    model: &StandardBoardModel,
) -> f64 {
    let (s, c) = theta.sin_cos();
    let mut sum = 0.0;
    for (p, &label) in points.iter().zip(labels) {
        let x = c * p.x - s * p.y + tx;
        let y = s * p.x + c * p.y + ty;
        let d = model.corner_distance(x, y);
        match model.color_at(x, y) {
            Some(color) if color == label => {}
            _ => sum += d,
        }
    }
    sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Corner3dParams {
    /// Number of multi-start seeds used, 1..=8, taken in start-index order
    /// (rotation quarter-turn k = index / 2, colour = index % 2).
    pub starts: usize,
    pub lbfgs: LbfgsParams,
    /// Smallest compass step, meters.
    pub polish_tolerance: f64,
}

impl Default for Corner3dParams {
    fn default() -> Self {
        Self {
            starts: 8,
            lbfgs: LbfgsParams::default(),
            polish_tolerance: 1e-7,
        }
    }
}

impl Corner3dParams {
    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.starts) {
            return Err(Error::Config("corner3d.starts must lie in 1..=8".into()));
        }
        if !(self.polish_tolerance > 0.0) || !(self.lbfgs.fd_step > 0.0) {
            return Err(Error::Config("corner3d tolerances must be > 0".into()));
        }
        if self.lbfgs.memory < 1 {
            return Err(Error::Config("corner3d.lbfgs.memory must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoardAlignment {
    /// Board cloud (LiDAR frame) to standard-model frame.
    pub transform: RigidTransform,
    pub cost: f64,
    pub start_index: usize,
    pub lower_left_color: Color,
    /// Points that entered the cost.
    pub points: usize,
}

impl BoardAlignment {
    pub fn cost_per_point(&self) -> f64 {
        self.cost / self.points.max(1) as f64
    }
}

/// In-plane pose as an SE(3) element acting on the canonical frame.
fn in_plane(theta: f64, tx: f64, ty: f64) -> RigidTransform {
    let (s, c) = theta.sin_cos();
    RigidTransform {
        rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        translation: Vector3::new(tx, ty, 0.0),
    }
}

/// Orientation of the principal axis of the in-plane scatter.
fn principal_angle(points: &[Vector2<f64>]) -> f64 {
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        sxx += p.x * p.x;
        syy += p.y * p.y;
        sxy += p.x * p.y;
    }
    0.5 * (2.0 * sxy).atan2(sxx - syy)
}

/// Best point of a small grid around `x0`: half-square translation steps out
/// to one square and 5° rotation steps out to 10°. The cost is flat inside
/// a cell and has a local minimum at every lattice shift, so the optimizer
/// alone rarely crosses a square.
fn coarse_start<F: Fn(&[f64]) -> f64>(f: &F, x0: [f64; 3], rho: f64, g_s: f64) -> [f64; 3] {
    let mut best = (f(&x0), x0);
    for r in -2..=2 {
        for i in -2..=2 {
            for j in -2..=2 {
                let x = [
                    x0[0] + (r as f64 * 5.0).to_radians() * rho,
                    x0[1] + i as f64 * g_s / 2.0,
                    x0[2] + j as f64 * g_s / 2.0,
                ];
                let v = f(&x);
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
    }
    best.1
}

/// Multi-start fit of the in-plane pose, then the corner-order convention:
/// with odd `n_w + n_h` the pattern's lower-left cell is dark; otherwise the
/// model origin is the board corner that looks lowest-leftmost from the
/// sensor (largest `(y − z)/x`).
pub fn estimate_alignment(
    cloud: &PointCloud,
    plane: &Plane,
    spec: &CheckerboardSpec,
    params: &Corner3dParams,
) -> Result<BoardAlignment> {
    let bin = binarize_intensity(cloud)?;
    let (canon, flat) = canonical_plane_frame(cloud, plane);
    let pts: Vec<Vector2<f64>> = flat.points.iter().map(|p| Vector2::new(p.x, p.y)).collect();
    let models = [build_standard_model(spec, 0), build_standard_model(spec, 1)];
    let rho = 0.5 * models[0].width.hypot(models[0].height);
    let center = (models[0].width / 2.0, models[0].height / 2.0);
    let theta0 = -principal_angle(&pts);
    let baseline = similarity_cost(0.0, 0.0, 0.0, &pts, &bin.labels, &models[0])
        .min(similarity_cost(0.0, 0.0, 0.0, &pts, &bin.labels, &models[1]));

    let starts = params.starts.clamp(1, 8);
    let results: Vec<(f64, [f64; 3])> = (0..starts)
        .into_par_iter()
        .map(|index| {
            let k = index / 2;
            let model = &models[index % 2];
            let f = |x: &[f64]| similarity_cost(x[0] / rho, x[1], x[2], &pts, &bin.labels, model);
            let theta = theta0 + k as f64 * std::f64::consts::FRAC_PI_2;
            let x0 = coarse_start(&f, [theta * rho, center.0, center.1], rho, spec.g_s);
            let m = lbfgs(&f, &x0, spec.g_s / 4.0, &params.lbfgs);
            let m = compass_search(&f, &m.x, spec.g_s / 8.0, params.polish_tolerance, 200_000);
            (m.value, [m.x[0] / rho, m.x[1], m.x[2]])
        })
        .collect();
    let (start_index, &(cost, x)) = results
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    if !(cost < baseline) {
        return Err(Error::AlignmentFailed);
    }
    let mut alignment = BoardAlignment {
        transform: in_plane(x[0], x[1], x[2]).compose(&canon),
        cost,
        start_index,
        lower_left_color: (start_index % 2) as u8,
        points: pts.len(),
    };
    if needs_half_turn(&alignment, spec) {
        alignment = half_turned(&alignment, spec);
    }
    Ok(alignment)
}

/// The equivalent alignment referencing the opposite board corner.
pub fn half_turned(alignment: &BoardAlignment, spec: &CheckerboardSpec) -> BoardAlignment {
    let flip = half_turn_transform(spec);
    BoardAlignment {
        transform: flip.compose(&alignment.transform),
        lower_left_color: alignment.lower_left_color ^ ((spec.n_w + spec.n_h) & 1) as u8,
        ..alignment.clone()
    }
}

fn needs_half_turn(alignment: &BoardAlignment, spec: &CheckerboardSpec) -> bool {
    model_needs_half_turn(
        &alignment.transform.inverse(),
        spec,
        alignment.lower_left_color,
    )
}

/// Whether a model placement (model frame to LiDAR frame, with the given
/// lower-left colour) violates the corner-order convention and should be
/// described from the opposite corner instead.
pub fn model_needs_half_turn(
    model_to_lidar: &RigidTransform,
    spec: &CheckerboardSpec,
    lower_left_color: Color,
) -> bool {
    if spec.parity_breaks_half_turn() {
        return lower_left_color == 1;
    }
    let score = |p: Vector3<f64>| (p.y - p.z) / p.x;
    let origin = model_to_lidar.apply(&Vector3::zeros());
    let opposite =
        model_to_lidar.apply(&Vector3::new(spec.board_width(), spec.board_height(), 0.0));
    score(opposite) > score(origin)
}

/// Model-to-LiDAR placement and lower-left colour after applying the
/// corner-order convention.
pub fn canonical_model_placement(
    model_to_lidar: &RigidTransform,
    spec: &CheckerboardSpec,
    lower_left_color: Color,
) -> (RigidTransform, Color) {
    if !model_needs_half_turn(model_to_lidar, spec, lower_left_color) {
        return (*model_to_lidar, lower_left_color);
    }
    let flip = half_turn_transform(spec);
    (
        model_to_lidar.compose(&flip.inverse()),
        lower_left_color ^ ((spec.n_w + spec.n_h) & 1) as u8,
    )
}

/// `(x, y, z) ↦ (W − x, H − y, z)`, an involution.
fn half_turn_transform(spec: &CheckerboardSpec) -> RigidTransform {
    RigidTransform {
        rotation: Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0),
        translation: Vector3::new(spec.board_width(), spec.board_height(), 0.0),
    }
}

/// Standard-model corners carried back into the LiDAR frame, in model order.
pub fn corners_from_alignment(alignment: &BoardAlignment, model: &StandardBoardModel) -> Vec<Vector3<f64>> {
    let inv = alignment.transform.inverse();
    model
        .std_corners
        .iter()
        .map(|c| inv.apply(&Vector3::new(c.x, c.y, 0.0)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    fn spec75() -> CheckerboardSpec {
        CheckerboardSpec::new(7, 5, 0.08).unwrap()
    }

    #[test]
    fn smallest_board() {
        let m = build_standard_model(&CheckerboardSpec { n_w: 2, n_h: 3, g_s: 1.0 }, 0);
        assert_eq!(m.width, 3.0);
        assert_eq!(m.height, 4.0);
        assert_eq!(m.std_corners[..4], [
            Vector2::new(1.0, 1.0),
            Vector2::new(2.0, 1.0),
            Vector2::new(1.0, 2.0),
            Vector2::new(2.0, 2.0)
        ]);
    }

    #[test]
    fn pattern_alternates() {
        let spec = spec75();
        for c in [0u8, 1] {
            let m = build_standard_model(&spec, c);
            assert_eq!(m.color_at(0.04, 0.04), Some(c));
            assert_eq!(m.color_at(0.12, 0.04), Some(c ^ 1));
            assert_eq!(m.color_at(0.04, 0.12), Some(c ^ 1));
            assert_eq!(m.color_at(0.12, 0.12), Some(c));
            assert_eq!(m.color_at(-0.01, 0.12), None);
        }
    }

    #[test]
    fn seven_by_five_corner_span() {
        let m = build_standard_model(&spec75(), 0);
        assert_eq!(m.std_corners.len(), 35);
        let xs: Vec<f64> = m.std_corners.iter().map(|c| c.x).collect();
        let ys: Vec<f64> = m.std_corners.iter().map(|c| c.y).collect();
        assert!((xs.iter().cloned().fold(f64::INFINITY, f64::min) - 0.08).abs() < 1e-15);
        assert!((xs.iter().cloned().fold(0.0, f64::max) - 0.56).abs() < 1e-15);
        assert!((ys.iter().cloned().fold(f64::INFINITY, f64::min) - 0.08).abs() < 1e-15);
        assert!((ys.iter().cloned().fold(0.0, f64::max) - 0.40).abs() < 1e-15);
    }

    #[test]
    fn otsu_separated_modes() {
        let mut pts = vec![Point3::new(0.0, 0.0, 1.0, 0.1); 50];
        pts.extend(vec![Point3::new(0.0, 0.0, 1.0, 0.8); 50]);
        let b = binarize_intensity(&PointCloud::new(pts)).unwrap();
        assert!(b.threshold > 0.1 && b.threshold < 0.8);
        assert_eq!(b.labels[..50], [0u8; 50]);
        assert_eq!(b.labels[50..], [1u8; 50]);
        let flat = PointCloud::new(vec![Point3::new(0.0, 0.0, 1.0, 0.5); 10]);
        assert!(matches!(binarize_intensity(&flat), Err(Error::NoReflectanceContrast)));
    }

    #[test]
    fn canonical_frame_cases() {
        let on_z0 = PointCloud::new(vec![
            Point3::new(1.0, 0.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0, 0.0),
            Point3::new(0.0, -1.0, 0.0, 0.0),
        ]);
        let (t, out) = canonical_plane_frame(&on_z0, &Plane::new(0.0, 0.0, -1.0, 0.0).unwrap());
        assert_eq!(t, RigidTransform::identity());
        assert_eq!(out.points, on_z0.points);

        let on_x2 = PointCloud::new(vec![
            Point3::new(2.0, 0.3, -0.1, 0.0),
            Point3::new(2.0, -0.4, 0.5, 0.0),
            Point3::new(2.0, 0.1, 0.2, 0.0),
        ]);
        let plane = Plane::new(1.0, 0.0, 0.0, -2.0).unwrap();
        let (t, out) = canonical_plane_frame(&on_x2, &plane);
        assert!(out.points.iter().all(|p| p.z.abs() < 1e-9));
        let back = crate::geometry::transform_cloud(&out, &t.inverse());
        for (a, b) in back.points.iter().zip(&on_x2.points) {
            assert!((a.pos() - b.pos()).norm() < 1e-9);
        }
    }

    #[test]
    fn cost_hand_cases() {
        let m = build_standard_model(&spec75(), 0);
        // Every point on a corner: d = 0 regardless of colour.
        let pts: Vec<Vector2<f64>> = m.std_corners.clone();
        let labels = vec![1u8; pts.len()];
        assert_eq!(similarity_cost(0.0, 0.0, 0.0, &pts, &labels, &m), 0.0);
        // (0.05, 0.07) lies in the dark cell (0,0); nearest corner (0.08, 0.08)
        // gives d = 0.03 + 0.01.
        let one = [Vector2::new(0.05, 0.07)];
        let c = similarity_cost(0.0, 0.0, 0.0, &one, &[1], &m);
        assert!((c - 0.04).abs() < 1e-15);
        assert_eq!(similarity_cost(0.0, 0.0, 0.0, &one, &[0], &m), 0.0);
        // Outside: plain distance.
        let out = [Vector2::new(-0.02, 0.08)];
        assert!((similarity_cost(0.0, 0.0, 0.0, &out, &[0], &m) - 0.10).abs() < 1e-15);
    }

    #[test]
    fn corners_under_pure_translation() {
        let spec = spec75();
        let m = build_standard_model(&spec, 0);
        let a = BoardAlignment {
            transform: RigidTransform::from_translation(Vector3::new(0.1, 0.0, 0.0)),
            cost: 0.0,
            start_index: 0,
            lower_left_color: 0,
            points: 1,
        };
        let c = corners_from_alignment(&a, &m);
        for (k, p) in c.iter().enumerate() {
            let s = m.std_corners[k];
            assert!((p - Vector3::new(s.x - 0.1, s.y, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn half_turn_is_equivalent() {
        for spec in [spec75(), CheckerboardSpec::new(6, 4, 0.1).unwrap()] {
            let m = build_standard_model(&spec, 1);
            let h = m.half_turn();
            for &(x, y) in &[(0.03, 0.05), (0.31, 0.17), (0.52, 0.33)] {
                let (fx, fy) = (m.width - x, m.height - y);
                assert_eq!(m.color_at(x, y), h.color_at(fx, fy));
                assert!((m.corner_distance(x, y) - h.corner_distance(fx, fy)).abs() < 1e-12);
            }
        }
    }
}
