//! Geometric primitives shared by every stage: points, clouds, rigid
//! transforms, planes, the checkerboard description and the pinhole camera
//! with radial-tangential distortion.
//!
//! Frames: the LiDAR frame is right-handed with X forward, Y left, Z up.
//! The camera frame is the usual optical frame (X right, Y down, Z forward).

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance, normalized to `[0, 1]` at ingestion.
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn from_vector(v: &Vector3<f64>, intensity: f64) -> Self {
        Self::new(v.x, v.y, v.z, intensity)
    }

    #[inline]
    pub fn pos(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// An ordered point cloud. Order is significant: every stage preserves it
/// so pipelines stay deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: Option<u32>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            frame_id: None,
        }
    }

    pub fn with_frame_id(mut self, id: u32) -> Self {
        self.frame_id = Some(id);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(Point3::pos).collect()
    }

    /// New cloud holding the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            frame_id: self.frame_id,
        }
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self
            .points
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.pos());
        Some(sum / self.points.len() as f64)
    }
}

/// An element of SE(3): `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validated constructor: `rotation` must be orthonormal with det +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation) {
            return Err(Error::InvalidInput(
                "rotation is not orthonormal with determinant +1".into(),
            ));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Rotation from an axis-angle vector (radians) plus a translation.
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: exp_so3(&axis_angle),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// The homogeneous 4×4 matrix flattened row-major.
    pub fn to_row_major(&self) -> [f64; 16] {
        let m = self.to_matrix4();
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        out
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::InvalidInput(format!(
                "expected 16 matrix entries, got {}",
                values.len()
            )));
        }
        let bottom = &values[12..16];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidInput(
                "last row of a rigid transform must be [0, 0, 0, 1]".into(),
            ));
        }
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9],
            values[10],
        );
        let translation = Vector3::new(values[3], values[7], values[11]);
        Self::new(rotation, translation)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_row_major().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        RigidTransform::from_row_major(&values).map_err(serde::de::Error::custom)
    }
}

pub fn is_rotation(r: &Matrix3<f64>) -> bool {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    err <= ROTATION_TOLERANCE && (r.determinant() - 1.0).abs() <= ROTATION_TOLERANCE
}

/// Rodrigues' formula.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    Rotation3::new(*w).into_inner()
}

/// Inverse of [`exp_so3`]; the angle is in `[0, π]`.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Nearest rotation to `m` in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Geodesic angle in degrees between the rotations of `a` and `b`.
pub fn rotation_angle_between(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let rel = a.rotation.transpose() * b.rotation;
    let cos = (rel.trace() - 1.0) / 2.0;
    let sin = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    )
    .norm()
        / 2.0;
    sin.atan2(cos).to_degrees()
}

/// Smallest rotation taking the unit vector `from` onto the unit vector `to`.
/// Antiparallel inputs get a half turn about an axis perpendicular to `from`.
pub fn rotation_aligning(from: &Vector3<f64>, to: &Vector3<f64>) -> Matrix3<f64> {
    let a = from.normalize();
    let b = to.normalize();
    let axis = a.cross(&b);
    let sin = axis.norm();
    let cos = a.dot(&b);
    if sin < 1e-12 {
        if cos > 0.0 {
            return Matrix3::identity();
        }
        let helper = if a.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let perp = a.cross(&helper).normalize();
        return exp_so3(&(perp * std::f64::consts::PI));
    }
    exp_so3(&(axis / sin * sin.atan2(cos)))
}

/// Least-squares plane through `points`: the centroid plus the eigenvector of
/// the scatter matrix with the smallest eigenvalue. Also returns the three
/// eigenvalues of the covariance, ascending. `None` for fewer than 3 points.
pub fn fit_plane_pca(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>, [f64; 3])> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let normal = eig.eigenvectors.column(idx[0]).into_owned().normalize();
    if !normal.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((
        c,
        normal,
        [
            eig.eigenvalues[idx[0]],
            eig.eigenvalues[idx[1]],
            eig.eigenvalues[idx[2]],
        ],
    ))
}

/// Applies `t` to every point's geometry; intensities are carried over.
pub fn transform_cloud(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| Point3::from_vector(&t.apply(&p.pos()), p.intensity))
            .collect(),
        frame_id: cloud.frame_id,
    }
}

/// Pinhole camera with the 4-coefficient radial-tangential distortion model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            p1: 0.0,
            p2: 0.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        let all = [self.cx, self.cy, self.k1, self.k2, self.p1, self.p2];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("intrinsics must be finite".into()));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0 || self.p1 != 0.0 || self.p2 != 0.0
    }

    /// Applies the distortion polynomial to normalized image coordinates.
    #[inline]
    pub fn distort(&self, xy: &Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (xy.x, xy.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
        Vector2::new(
            x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y,
        )
    }

    /// Fixed-point inversion of [`CameraIntrinsics::distort`].
    pub fn undistort(&self, distorted: &Vector2<f64>, iterations: usize) -> Vector2<f64> {
        if !self.has_distortion() {
            return *distorted;
        }
        let mut xy = *distorted;
        for _ in 0..iterations {
            let (x, y) = (xy.x, xy.y);
            let r2 = x * x + y * y;
            let radial = 1.0 + self.k1 * r2 + self.k2 * r2 * r2;
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            xy = Vector2::new((distorted.x - dx) / radial, (distorted.y - dy) / radial);
        }
        xy
    }

    #[inline]
    pub fn normalized_to_pixel(&self, xy: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * xy.x + self.cx, self.fy * xy.y + self.cy)
    }

    #[inline]
    pub fn pixel_to_normalized(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((uv.x - self.cx) / self.fx, (uv.y - self.cy) / self.fy)
    }

    /// Pixel → undistorted normalized coordinates.
    pub fn unproject(&self, uv: &Vector2<f64>, iterations: usize) -> Vector2<f64> {
        self.undistort(&self.pixel_to_normalized(uv), iterations)
    }

    /// Scales every pixel-valued parameter by `s` (focal lengths, principal
    /// point and image size); distortion is unitless and unchanged.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: (self.width as f64 * s).round() as u32,
            height: (self.height as f64 * s).round() as u32,
            ..*self
        }
    }

    pub fn contains(&self, uv: &Vector2<f64>) -> bool {
        uv.x >= -0.5
            && uv.y >= -0.5
            && uv.x < self.width as f64 - 0.5
            && uv.y < self.height as f64 - 0.5
    }
}

/// Projects a camera-frame point to pixels: perspective division, then
/// distortion, then the focal/principal-point map.
pub fn project_point(p: &Vector3<f64>, intr: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if p.z <= 0.0 {
        return Err(Error::BehindCamera(p.z));
    }
    let xy = Vector2::new(p.x / p.z, p.y / p.z);
    Ok(intr.normalized_to_pixel(&intr.distort(&xy)))
}

/// Inner-corner grid dimensions and cell edge length of a checkerboard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerboardSpec {
    /// Inner corners along the board's width.
    pub n_w: usize,
    /// Inner corners along the board's height.
    pub n_h: usize,
    /// Cell edge length in meters.
    pub g_s: f64,
}

impl CheckerboardSpec {
    pub fn new(n_w: usize, n_h: usize, g_s: f64) -> Result<Self> {
        let spec = Self { n_w, n_h, g_s };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_w < 2 || self.n_h < 2 {
            return Err(Error::Config("board needs at least 2×2 inner corners".into()));
        }
        if self.n_w == self.n_h {
            return Err(Error::Config(
                "n_w must differ from n_h to break the 90° ambiguity".into(),
            ));
        }
        if !(self.g_s > 0.0 && self.g_s.is_finite()) {
            return Err(Error::Config("cell size must be positive".into()));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        self.n_w * self.n_h
    }

    /// Physical width including the outer ring of cells.
    pub fn board_width(&self) -> f64 {
        (self.n_w + 1) as f64 * self.g_s
    }

    pub fn board_height(&self) -> f64 {
        (self.n_h + 1) as f64 * self.g_s
    }

    /// True when a 180° in-plane turn maps the colour pattern onto its
    /// complement, so cell colour alone tells the two orientations apart.
    pub fn parity_breaks_half_turn(&self) -> bool {
        (self.n_w + self.n_h) % 2 == 1
    }
}

/// `a·x + b·y + c·z + d = 0` with `(a, b, c)` of unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Plane {
    /// Normalizes the coefficients; fails on a zero normal.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let n = (a * a + b * b + c * c).sqrt();
        if !(n > 0.0) || !n.is_finite() || !d.is_finite() {
            return Err(Error::InvalidInput("plane normal must be non-zero".into()));
        }
        Ok(Self {
            a: a / n,
            b: b / n,
            c: c / n,
            d: d / n,
        })
    }

    pub fn from_point_normal(point: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Self> {
        Self::new(normal.x, normal.y, normal.z, -normal.dot(point))
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    #[inline]
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.a * p.x + self.b * p.y + self.c * p.z + self.d
    }

    /// Same plane with the normal flipped, if needed, so that `d < 0`;
    /// the normal then points from the sensor origin toward the plane.
    pub fn oriented_away_from_origin(&self) -> Plane {
        if self.d > 0.0 {
            Plane {
                a: -self.a,
                b: -self.b,
                c: -self.c,
                d: -self.d,
            }
        } else {
            *self
        }
    }
}

pub fn plane_point_distance(p: &Point3, plane: &Plane) -> f64 {
    let n = plane.normal().norm();
    plane.signed_distance(&p.pos()).abs() / n
}
