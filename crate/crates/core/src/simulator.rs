//! Synthetic rosette-scan LiDAR frames and camera images of a checkerboard
//! scene, with per-point labels and exact ground truth.
//!
//! Board frame: origin at the physical board's lower-left corner, x to the
//! right, y up, z out of the printed face. It coincides with the standard
//! model frame of [`crate::corner3d`].

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corner3d::{build_standard_model, canonical_model_placement, Color};
use crate::error::{Error, Result};
use crate::geometry::{
    exp_so3, project_point, CameraIntrinsics, CheckerboardSpec, Point3, PointCloud,
    RigidTransform,
};
use crate::image::GrayImage;
use crate::rng::rng_from;

/// Two counter-rotating deflection stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanPattern {
    /// Angular amplitudes, radians.
    pub a1: f64,
    pub a2: f64,
    /// Angular rates, rad/s.
    pub w1: f64,
    pub w2: f64,
    /// Points per second.
    pub point_rate: f64,
    /// Seconds per frame.
    pub frame_duration: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self {
            a1: 0.25,
            a2: 0.25,
            w1: 2.0 * PI * 89.3,
            w2: -2.0 * PI * 64.617,
            point_rate: 100_000.0,
            frame_duration: 0.1,
        }
    }
}

impl ScanPattern {
    pub fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0 && self.a2 >= 0.0) {
            return Err(Error::Config("scan pattern amplitudes must be positive".into()));
        }
        if !(self.point_rate > 0.0 && self.frame_duration > 0.0) {
            return Err(Error::Config("scan pattern rates must be positive".into()));
        }
        Ok(())
    }

    pub fn points_per_frame(&self) -> usize {
        (self.point_rate * self.frame_duration).round() as usize
    }

    /// Largest angular offset reached by the pattern.
    pub fn max_angle(&self) -> f64 {
        self.a1 + self.a2
    }
}

/// Angular offsets `(u, v)` of `n` consecutive samples starting at `t0`.
pub fn rosette_angles(pattern: &ScanPattern, t0: f64, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let t = t0 + i as f64 / pattern.point_rate;
            let (s1, c1) = (pattern.w1 * t).sin_cos();
            let (s2, c2) = (pattern.w2 * t).sin_cos();
            (
                pattern.a1 * c1 + pattern.a2 * c2,
                pattern.a1 * s1 + pattern.a2 * s2,
            )
        })
        .collect()
}

/// Unit ray directions in the LiDAR frame: `normalize(1, tan u, tan v)`, with
/// `u` toward +Y (left) and `v` toward +Z (up).
pub fn rosette_directions(pattern: &ScanPattern, t0: f64, n: usize) -> Vec<Vector3<f64>> {
    rosette_angles(pattern, t0, n)
        .into_iter()
        .map(|(u, v)| Vector3::new(1.0, u.tan(), v.tan()).normalize())
        .collect()
}

/// Inverse of the direction mapping: the `(u, v)` offsets of a point.
pub fn direction_angles(p: &Vector3<f64>) -> (f64, f64) {
    (p.y.atan2(p.x), p.z.atan2(p.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Axial standard deviation at `d_near`, meters.
    pub sigma_axial_near: f64,
    pub d_near: f64,
    /// Axial standard deviation at `d_far`, meters.
    pub sigma_axial_far: f64,
    pub d_far: f64,
    /// Probability that a return is displaced along its ray.
    pub outlier_rate: f64,
    /// Largest outlier displacement, meters.
    pub outlier_spread: f64,
    pub sigma_intensity: f64,
    /// Additive Gaussian pixel noise of rendered images.
    pub sigma_image: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_axial_near: 0.03,
            d_near: 1.5,
            sigma_axial_far: 0.01,
            d_far: 10.0,
            outlier_rate: 0.05,
            outlier_spread: 1.0,
            sigma_intensity: 0.05,
            sigma_image: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            sigma_axial_near: 0.0,
            sigma_axial_far: 0.0,
            outlier_rate: 0.0,
            sigma_intensity: 0.0,
            sigma_image: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_axial_near,
            self.sigma_axial_far,
            self.outlier_rate,
            self.outlier_spread,
            self.sigma_intensity,
            self.sigma_image,
        ];
        if all.iter().any(|v| !(*v >= 0.0)) || self.outlier_rate > 1.0 {
            return Err(Error::Config("noise parameters must be non-negative".into()));
        }
        if !(self.d_far > self.d_near) {
            return Err(Error::Config("noise.d_far must exceed noise.d_near".into()));
        }
        Ok(())
    }

    /// Linear in range between the two reference distances, clamped outside.
    pub fn sigma_axial(&self, range: f64) -> f64 {
        let f = ((range - self.d_near) / (self.d_far - self.d_near)).clamp(0.0, 1.0);
        self.sigma_axial_near + f * (self.sigma_axial_far - self.sigma_axial_near)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum Surface {
    /// Parallelogram `origin + a·edge_u + b·edge_v`, `a, b ∈ [0, 1]`.
    Rectangle {
        origin: [f64; 3],
        edge_u: [f64; 3],
        edge_v: [f64; 3],
        reflectance: f64,
    },
    /// Vertical cylinder standing on `base`.
    Cylinder {
        base: [f64; 3],
        radius: f64,
        height: f64,
        reflectance: f64,
    },
}

impl Surface {
    /// Ray parameter of the first hit of `origin + t·dir`, `t > 1e-9`.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Surface::Rectangle {
                origin: o,
                edge_u,
                edge_v,
                ..
            } => {
                let o = Vector3::from(o);
                let eu = Vector3::from(edge_u);
                let ev = Vector3::from(edge_v);
                let n = eu.cross(&ev);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(o - origin)) / denom;
                if !(t > 1e-9) {
                    return None;
                }
                let q = origin + dir * t - o;
                let a = q.dot(&eu) / eu.norm_squared();
                let b = q.dot(&ev) / ev.norm_squared();
                ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some(t)
            }
            Surface::Cylinder {
                base, radius, height, ..
            } => {
                let ox = origin.x - base[0];
                let oy = origin.y - base[1];
                let a = dir.x * dir.x + dir.y * dir.y;
                if a < 1e-15 {
                    return None;
                }
                let b = 2.0 * (ox * dir.x + oy * dir.y);
                let c = ox * ox + oy * oy - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
                    .into_iter()
                    .find(|&t| {
                        let z = origin.z + t * dir.z;
                        t > 1e-9 && z >= base[2] && z <= base[2] + height
                    })
            }
        }
    }

    fn reflectance(&self) -> f64 {
        match *self {
            Surface::Rectangle { reflectance, .. } | Surface::Cylinder { reflectance, .. } => {
                reflectance
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimScene {
    /// Board frame to LiDAR frame.
    pub board_pose: RigidTransform,
    pub spec: CheckerboardSpec,
    /// Reflectance of (dark, bright) cells.
    pub board_reflectance: (f64, f64),
    /// Colour of the physical board's lower-left cell.
    pub lower_left_color: Color,
    /// LiDAR frame to camera frame.
    pub extrinsic_gt: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub extra_surfaces: Vec<Surface>,
}

/// LiDAR axes expressed in the optical frame: camera x = −Y, y = −Z, z = X.
pub fn lidar_to_optical() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

/// A camera mounted a few centimeters from the LiDAR with a slight
/// misalignment, and a 1600×1200 lens with mild distortion.
pub fn default_rig() -> (RigidTransform, CameraIntrinsics) {
    let tilt = exp_so3(&Vector3::new(0.021, -0.034, 0.012));
    let extrinsic = RigidTransform {
        rotation: tilt * lidar_to_optical(),
        translation: Vector3::new(0.062, -0.045, 0.021),
    };
    let intrinsics = CameraIntrinsics {
        fx: 1400.0,
        fy: 1398.0,
        cx: 801.3,
        cy: 598.7,
        k1: -0.08,
        k2: 0.02,
        p1: 0.0005,
        p2: -0.0003,
        width: 1600,
        height: 1200,
    };
    (extrinsic, intrinsics)
}

/// Flat ground at `z` and a back wall at `x = wall_x`, both of finite size.
pub fn room_surfaces(ground_z: f64, wall_x: f64) -> Vec<Surface> {
    vec![
        Surface::Rectangle {
            origin: [0.3, -8.0, ground_z],
            edge_u: [wall_x - 0.3, 0.0, 0.0],
            edge_v: [0.0, 16.0, 0.0],
            reflectance: 0.3,
        },
        Surface::Rectangle {
            origin: [wall_x, -8.0, ground_z],
            edge_u: [0.0, 16.0, 0.0],
            edge_v: [0.0, 0.0, 5.5],
            reflectance: 0.45,
        },
    ]
}

/// Thin pole from the ground up to just behind the middle of the board's
/// lowest edge.
pub fn upholder_for(board_pose: &RigidTransform, spec: &CheckerboardSpec, ground_z: f64) -> Surface {
    let radius = 0.02;
    let bottom = board_pose.apply(&Vector3::new(spec.board_width() / 2.0, 0.0, 0.0));
    let back = -board_pose.rotation.column(2).into_owned();
    let axis_xy = Vector3::new(back.x, back.y, 0.0);
    let offset = if axis_xy.norm() > 1e-9 {
        axis_xy.normalize() * (radius + 0.005)
    } else {
        Vector3::zeros()
    };
    Surface::Cylinder {
        base: [bottom.x + offset.x, bottom.y + offset.y, ground_z],
        radius,
        height: (bottom.z + spec.g_s / 2.0 - ground_z).max(0.0),
        reflectance: 0.6,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceId {
    Board,
    Extra(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointLabel {
    pub surface: SurfaceId,
    /// True pattern colour for board hits.
    pub cell_color: Option<Color>,
    pub is_outlier: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub labels: Vec<PointLabel>,
}

impl LabeledCloud {
    pub fn board_indices(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i].surface == SurfaceId::Board)
            .collect()
    }
}

impl SimScene {
    /// First board hit along `dir` from the LiDAR origin: range and colour.
    fn board_hit(&self, dir: &Vector3<f64>) -> Option<(f64, Color)> {
        let n = self.board_pose.rotation.column(2).into_owned();
        let o = self.board_pose.translation;
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&o) / denom;
        if !(t > 1e-9) {
            return None;
        }
        let q = self.board_pose.rotation.transpose() * (dir * t - o);
        self.color_at(q.x, q.y).map(|c| (t, c))
    }

    fn color_at(&self, x: f64, y: f64) -> Option<Color> {
        build_standard_model_color(&self.spec, self.lower_left_color, x, y)
    }

    fn reflectance_of(&self, color: Color) -> f64 {
        if color == 1 {
            self.board_reflectance.1
        } else {
            self.board_reflectance.0
        }
    }

    /// Model placement (model frame to LiDAR) and lower-left colour under the
    /// corner-order convention.
    pub fn canonical_placement(&self) -> (RigidTransform, Color) {
        canonical_model_placement(&self.board_pose, &self.spec, self.lower_left_color)
    }

    /// Inner corners in the LiDAR frame, canonical order.
    pub fn corners3d_gt(&self) -> Vec<Vector3<f64>> {
        let (placement, color) = self.canonical_placement();
        build_standard_model(&self.spec, color)
            .std_corners
            .iter()
            .map(|c| placement.apply(&Vector3::new(c.x, c.y, 0.0)))
            .collect()
    }

    /// Inner corners projected into the image, canonical order.
    pub fn corners2d_gt(&self) -> Result<Vec<Vector2<f64>>> {
        self.corners3d_gt()
            .iter()
            .map(|p| project_point(&self.extrinsic_gt.apply(p), &self.intrinsics))
            .collect()
    }
}

fn build_standard_model_color(spec: &CheckerboardSpec, ll: Color, x: f64, y: f64) -> Option<Color> {
    if !(x >= 0.0 && y >= 0.0 && x <= spec.board_width() && y <= spec.board_height()) {
        return None;
    }
    let i = ((x / spec.g_s).floor() as usize).min(spec.n_w);
    let j = ((y / spec.g_s).floor() as usize).min(spec.n_h);
    Some(ll ^ (((i + j) & 1) as u8))
}

/// One frame of returns. Each ray keeps its nearest hit; the range is
/// perturbed by axial Gaussian noise, or with probability `outlier_rate`
/// displaced along the ray by a magnitude uniform in
/// `[0.1·outlier_spread, outlier_spread]` with random sign.
pub fn scan_frame(
    scene: &SimScene,
    pattern: &ScanPattern,
    noise: &NoiseModel,
    t0: f64,
    seed: u64,
) -> LabeledCloud {
    let dirs = rosette_directions(pattern, t0, pattern.points_per_frame());
    let mut rng = rng_from(seed, &[]);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let origin = Vector3::zeros();
    let mut points = Vec::with_capacity(dirs.len());
    let mut labels = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let mut best: Option<(f64, SurfaceId, f64, Option<Color>)> = None;
        if let Some((t, c)) = scene.board_hit(dir) {
            best = Some((t, SurfaceId::Board, scene.reflectance_of(c), Some(c)));
        }
        for (k, s) in scene.extra_surfaces.iter().enumerate() {
            if let Some(t) = s.intersect(&origin, dir) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, SurfaceId::Extra(k), s.reflectance(), None));
                }
            }
        }
        let Some((range, surface, reflectance, cell_color)) = best else {
            continue;
        };
        let z: f64 = unit.sample(&mut rng);
        let zi: f64 = unit.sample(&mut rng);
        let u: f64 = rng.random();
        let mut r = range + noise.sigma_axial(range) * z;
        let is_outlier = noise.outlier_rate > 0.0 && u < noise.outlier_rate;
        if is_outlier {
            let mag = rng.random_range(0.1..=1.0) * noise.outlier_spread;
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            r = range + sign * mag;
            if r < 0.1 {
                r = range + mag;
            }
        }
        let intensity = (reflectance + noise.sigma_intensity * zi).clamp(0.0, 1.0);
        points.push(Point3::from_vector(&(dir * r), intensity));
        labels.push(PointLabel {
            surface,
            cell_color,
            is_outlier,
        });
    }
    LabeledCloud {
        cloud: PointCloud::new(points),
        labels,
    }
}

pub const IMAGE_DARK: f64 = 0.1;
pub const IMAGE_BRIGHT: f64 = 0.9;
pub const IMAGE_BACKGROUND: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub image: GrayImage,
    /// Projected inner corners, canonical order.
    pub corners: Vec<Vector2<f64>>,
    /// Pixels whose center ray hits the board, row-major.
    pub mask: Vec<bool>,
}

/// Label of the board cell seen through a pixel position: 0 for the
/// background, otherwise 1 + cell index.
fn pixel_label(
    scene: &SimScene,
    board_in_camera: &RigidTransform,
    u: f64,
    v: f64,
) -> (usize, Option<Color>) {
    let xy = scene.intrinsics.unproject(&Vector2::new(u, v), 20);
    let dir = Vector3::new(xy.x, xy.y, 1.0);
    let n = board_in_camera.rotation.column(2).into_owned();
    let o = board_in_camera.translation;
    let denom = n.dot(&dir);
    if denom.abs() < 1e-12 {
        return (0, None);
    }
    let t = n.dot(&o) / denom;
    if !(t > 0.0) {
        return (0, None);
    }
    let q = board_in_camera.rotation.transpose() * (dir * t - o);
    match scene.color_at(q.x, q.y) {
        Some(c) => {
            let i = ((q.x / scene.spec.g_s).floor() as usize).min(scene.spec.n_w);
            let j = ((q.y / scene.spec.g_s).floor() as usize).min(scene.spec.n_h);
            (1 + j * (scene.spec.n_w + 1) + i, Some(c))
        }
        None => (0, None),
    }
}

fn shade(c: Option<Color>) -> f64 {
    match c {
        Some(1) => IMAGE_BRIGHT,
        Some(_) => IMAGE_DARK,
        None => IMAGE_BACKGROUND,
    }
}

/// Ray-cast render through the distorted camera. Pixels whose corners and
/// center do not all see the same cell are averaged over a
/// `supersample × supersample` grid.
pub fn render_image(scene: &SimScene, supersample: usize) -> Result<RenderedImage> {
    let board_in_camera = scene.extrinsic_gt.compose(&scene.board_pose);
    let center = board_in_camera.apply(&Vector3::new(
        scene.spec.board_width() / 2.0,
        scene.spec.board_height() / 2.0,
        0.0,
    ));
    if center.z <= 0.0 {
        return Err(Error::BehindCamera(center.z));
    }
    let (w, h) = (scene.intrinsics.width as usize, scene.intrinsics.height as usize);
    let vertex_labels: Vec<usize> = (0..(h + 1) * (w + 1))
        .into_par_iter()
        .map(|k| {
            let (u, v) = ((k % (w + 1)) as f64 - 0.5, (k / (w + 1)) as f64 - 0.5);
            pixel_label(scene, &board_in_camera, u, v).0
        })
        .collect();
    let s = supersample.max(1);
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut vals = Vec::with_capacity(w);
            let mut mask = Vec::with_capacity(w);
            for u in 0..w {
                let (lc, cc) = pixel_label(scene, &board_in_camera, u as f64, v as f64);
                mask.push(lc != 0);
                let corners = [
                    vertex_labels[v * (w + 1) + u],
                    vertex_labels[v * (w + 1) + u + 1],
                    vertex_labels[(v + 1) * (w + 1) + u],
                    vertex_labels[(v + 1) * (w + 1) + u + 1],
                ];
                if corners.iter().all(|&c| c == lc) {
                    vals.push(shade(cc));
                    continue;
                }
                let mut sum = 0.0;
                for a in 0..s {
                    for b in 0..s {
                        let du = (b as f64 + 0.5) / s as f64 - 0.5;
                        let dv = (a as f64 + 0.5) / s as f64 - 0.5;
                        let (_, c) =
                            pixel_label(scene, &board_in_camera, u as f64 + du, v as f64 + dv);
                        sum += shade(c);
                    }
                }
                vals.push(sum / (s * s) as f64);
            }
            (vals, mask)
        })
        .collect();
    let mut pixels = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (vals, m) in rows {
        pixels.extend(vals);
        mask.extend(m);
    }
    Ok(RenderedImage {
        image: GrayImage::from_pixels(w, h, pixels)?,
        corners: scene.corners2d_gt()?,
        mask,
    })
}

/// Adds Gaussian noise and quantizes to 8 bits.
pub fn degrade_image(image: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    let mut rng = rng_from(seed, &[]);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = image.clone();
    if sigma > 0.0 {
        for p in out.pixels.iter_mut() {
            let z: f64 = unit.sample(&mut rng);
            *p += sigma * z;
        }
    }
    out.quantized(255)
}

/// Everything needed to synthesize a calibration dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub spec: CheckerboardSpec,
    pub n_placements: usize,
    pub frames: usize,
    pub pattern: ScanPattern,
    pub noise: NoiseModel,
    /// `None` uses the built-in rig.
    pub intrinsics: Option<CameraIntrinsics>,
    pub extrinsic_gt: Option<RigidTransform>,
    pub board_reflectance: (f64, f64),
    pub lower_left_color: Color,
    /// Ground plane height; `None` for no ground (and no upholder).
    pub ground_z: Option<f64>,
    /// Back wall distance; `None` for no wall.
    pub wall_x: Option<f64>,
    pub upholder: bool,
    /// Board-center range interval, meters.
    pub min_distance: f64,
    pub max_distance: f64,
    /// Largest yaw and pitch of the board, degrees.
    pub max_tilt_deg: f64,
    pub supersample: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            spec: CheckerboardSpec {
                n_w: 7,
                n_h: 5,
                g_s: 0.12,
            },
            n_placements: 6,
            frames: 50,
            pattern: ScanPattern::default(),
            noise: NoiseModel::default(),
            intrinsics: None,
            extrinsic_gt: None,
            board_reflectance: (0.12, 0.78),
            lower_left_color: 0,
            ground_z: Some(-1.2),
            wall_x: Some(13.0),
            upholder: true,
            min_distance: 1.5,
            max_distance: 10.0,
            max_tilt_deg: 35.0,
            supersample: 8,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.pattern.validate()?;
        self.noise.validate()?;
        if self.n_placements < 1 || self.frames < 1 {
            return Err(Error::Config("n_placements and frames must be >= 1".into()));
        }
        if !(self.min_distance > 0.0 && self.max_distance > self.min_distance) {
            return Err(Error::Config("need 0 < min_distance < max_distance".into()));
        }
        if let Some(i) = &self.intrinsics {
            i.validate()?;
        }
        Ok(())
    }

    pub fn rig(&self) -> (RigidTransform, CameraIntrinsics) {
        let (e, i) = default_rig();
        (self.extrinsic_gt.unwrap_or(e), self.intrinsics.unwrap_or(i))
    }

    /// Scene for one board pose, with room surfaces and the optional pole.
    pub fn scene(&self, board_pose: RigidTransform) -> SimScene {
        let (extrinsic_gt, intrinsics) = self.rig();
        let mut extra = Vec::new();
        if let Some(g) = self.ground_z {
            let wall = self.wall_x.unwrap_or(30.0);
            extra.extend(room_surfaces(g, wall).into_iter().take(1));
            if self.upholder {
                extra.push(upholder_for(&board_pose, &self.spec, g));
            }
        }
        if let Some(wx) = self.wall_x {
            let g = self.ground_z.unwrap_or(-3.0);
            extra.push(room_surfaces(g, wx)[1]);
        }
        SimScene {
            board_pose,
            spec: self.spec,
            board_reflectance: self.board_reflectance,
            lower_left_color: self.lower_left_color,
            extrinsic_gt,
            intrinsics,
            extra_surfaces: extra,
        }
    }
}

/// Board corners (physical outline) in the LiDAR frame.
fn outline(pose: &RigidTransform, spec: &CheckerboardSpec) -> [Vector3<f64>; 4] {
    let (w, h) = (spec.board_width(), spec.board_height());
    [
        pose.apply(&Vector3::new(0.0, 0.0, 0.0)),
        pose.apply(&Vector3::new(w, 0.0, 0.0)),
        pose.apply(&Vector3::new(0.0, h, 0.0)),
        pose.apply(&Vector3::new(w, h, 0.0)),
    ]
}

/// Checks that a pose lies inside both fields of view, faces both sensors and
/// clears the ground.
fn pose_is_viable(cfg: &SimConfig, pose: &RigidTransform) -> bool {
    let (extrinsic, intr) = cfg.rig();
    let margin = 0.95 * cfg.pattern.max_angle();
    let pixel_margin = 20.0;
    for p in outline(pose, &cfg.spec) {
        if p.x <= 0.0 {
            return false;
        }
        let (u, v) = direction_angles(&p);
        if u.hypot(v) > margin {
            return false;
        }
        let Ok(uv) = project_point(&extrinsic.apply(&p), &intr) else {
            return false;
        };
        if uv.x < pixel_margin
            || uv.y < pixel_margin
            || uv.x > intr.width as f64 - 1.0 - pixel_margin
            || uv.y > intr.height as f64 - 1.0 - pixel_margin
        {
            return false;
        }
        if let Some(g) = cfg.ground_z {
            if p.z < g + 0.3 {
                return false;
            }
        }
    }
    let center = pose.apply(&Vector3::new(
        cfg.spec.board_width() / 2.0,
        cfg.spec.board_height() / 2.0,
        0.0,
    ));
    let normal = pose.rotation.column(2).into_owned();
    let cam_center = extrinsic.inverse().translation;
    let facing = |eye: Vector3<f64>| normal.dot(&(eye - center).normalize()) > 60f64.to_radians().cos();
    facing(Vector3::zeros()) && facing(cam_center)
}

/// Board frame axes when facing the LiDAR: x = −Y, y = Z, z = −X.
fn facing_rotation() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
}

/// Samples `n` board poses with stratified center ranges, tilts up to
/// `max_tilt_deg`, and pairwise center separation of at least 0.5 m.
pub fn sample_board_poses(cfg: &SimConfig, seed: u64) -> Result<Vec<RigidTransform>> {
    let mut poses: Vec<RigidTransform> = Vec::with_capacity(cfg.n_placements);
    let mut centers: Vec<Vector3<f64>> = Vec::new();
    let n = cfg.n_placements;
    let (w, h) = (cfg.spec.board_width(), cfg.spec.board_height());
    let tilt = cfg.max_tilt_deg.to_radians();
    for i in 0..n {
        let mut rng = rng_from(seed, &[0x706f7365, i as u64]);
        let mut found = None;
        for _ in 0..2000 {
            let f: f64 = rng.random();
            let d = cfg.min_distance + (cfg.max_distance - cfg.min_distance) * (i as f64 + f) / n as f64;
            let r = cfg.pattern.max_angle() * 0.6 * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..2.0 * PI);
            let dir = Vector3::new(1.0, (r * phi.cos()).tan(), (r * phi.sin()).tan()).normalize();
            let c = dir * d;
            let yaw = rng.random_range(-tilt..=tilt);
            let pitch = rng.random_range(-tilt..=tilt);
            let roll = rng.random_range(-8f64.to_radians()..=8f64.to_radians());
            // Tilts act in the board frame: yaw about y, pitch about x, roll about z.
            let r_board = exp_so3(&Vector3::new(0.0, yaw, 0.0))
                * exp_so3(&Vector3::new(pitch, 0.0, 0.0))
                * exp_so3(&Vector3::new(0.0, 0.0, roll));
            // Face the board toward the sensor along the viewing ray.
            let look = crate::geometry::rotation_aligning(&Vector3::x(), &dir);
            let rotation = look * facing_rotation() * r_board;
            let pose = RigidTransform {
                rotation,
                translation: c - rotation * Vector3::new(w / 2.0, h / 2.0, 0.0),
            };
            if !pose_is_viable(cfg, &pose) {
                continue;
            }
            if centers.iter().any(|q| (q - c).norm() < 0.5) {
                continue;
            }
            found = Some((pose, c));
            break;
        }
        let (pose, c) = found.ok_or_else(|| {
            Error::InvalidInput(format!("could not place board {i} inside both fields of view"))
        })?;
        poses.push(pose);
        centers.push(c);
    }
    Ok(poses)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPlacement {
    pub scene: SimScene,
    pub frames: Vec<LabeledCloud>,
    /// 8-bit, noise-degraded render.
    pub image: GrayImage,
    pub mask: Vec<bool>,
    pub corners2d_gt: Vec<Vector2<f64>>,
    pub corners3d_gt: Vec<Vector3<f64>>,
}

/// Frames and image of placement `id`; frame `k` starts at
/// `k·frame_duration` and draws from the stream `(seed, id, k)`.
pub fn simulate_placement(cfg: &SimConfig, pose: RigidTransform, id: usize, seed: u64) -> Result<SimPlacement> {
    let scene = cfg.scene(pose);
    let frames: Vec<LabeledCloud> = (0..cfg.frames)
        .into_par_iter()
        .map(|k| {
            let t0 = k as f64 * cfg.pattern.frame_duration;
            let s = crate::rng::derive_seed(seed, &[id as u64, k as u64]);
            let mut f = scan_frame(&scene, &cfg.pattern, &cfg.noise, t0, s);
            f.cloud.frame_id = Some(k as u32);
            f
        })
        .collect();
    let rendered = render_image(&scene, cfg.supersample)?;
    let image = degrade_image(
        &rendered.image,
        cfg.noise.sigma_image,
        crate::rng::derive_seed(seed, &[id as u64, u64::MAX]),
    );
    Ok(SimPlacement {
        corners3d_gt: scene.corners3d_gt(),
        corners2d_gt: rendered.corners,
        scene,
        frames,
        image,
        mask: rendered.mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    pub config: SimConfig,
    pub extrinsic_gt: RigidTransform,
    pub intrinsics: CameraIntrinsics,
    pub placements: Vec<SimPlacement>,
}

pub fn make_calibration_dataset(cfg: &SimConfig, seed: u64) -> Result<CalibrationDataset> {
    cfg.validate()?;
    let poses = sample_board_poses(cfg, seed)?;
    let placements = poses
        .into_iter()
        .enumerate()
        .map(|(id, pose)| simulate_placement(cfg, pose, id, seed))
        .collect::<Result<Vec<_>>>()?;
    let (extrinsic_gt, intrinsics) = cfg.rig();
    Ok(CalibrationDataset {
        config: cfg.clone(),
        extrinsic_gt,
        intrinsics,
        placements,
    })
}
