//! LiDAR-to-camera pose from index-matched 3D–2D corner pairs: linear
//! initialization, Levenberg–Marquardt refinement, RANSAC, and iterative
//! dropping of high-error pairs.

use nalgebra::{DMatrix, Matrix2, Matrix2x3, Matrix3, Matrix3x4, Matrix6, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, nearest_rotation, project_point, skew, CameraIntrinsics, RigidTransform};
use crate::rng::rng_from;

pub const MIN_ENTRIES: usize = 6;
pub const DEFAULT_DELTA_REPROJ: f64 = 2.0;
pub const DEFAULT_RANSAC_ITERATIONS: usize = 500;
const UNDISTORT_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub placement_id: usize,
    pub corner_index: usize,
    /// LiDAR frame, meters.
    pub p3d: Vector3<f64>,
    /// Pixels.
    pub p2d: Vector2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub entries: Vec<Correspondence>,
    pub intrinsics: CameraIntrinsics,
}

impl CorrespondenceSet {
    pub fn new(entries: Vec<Correspondence>, intrinsics: CameraIntrinsics) -> Self {
        Self { entries, intrinsics }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            entries: indices.iter().map(|&i| self.entries[i]).collect(),
            intrinsics: self.intrinsics,
        }
    }

    fn require_solvable(&self) -> Result<()> {
        if self.entries.len() < MIN_ENTRIES {
            return Err(Error::InsufficientPoints {
                needed: MIN_ENTRIES,
                got: self.entries.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// LiDAR frame to camera frame.
    pub extrinsic: RigidTransform,
    /// Pixel error of every entry against the final pose.
    pub per_entry_error: Vec<f64>,
    pub inlier_mask: Vec<bool>,
    /// Drop rounds after the initial RANSAC solve.
    pub rounds: usize,
}

/// Pixel reprojection error of one pair; infinite when the point is behind
/// the camera.
pub fn reprojection_error(c: &Correspondence, extrinsic: &RigidTransform, intr: &CameraIntrinsics) -> f64 {
    match project_point(&extrinsic.apply(&c.p3d), intr) {
        Ok(uv) => (uv - c.p2d).norm(),
        Err(_) => f64::INFINITY,
    }
}

pub fn reprojection_errors(corr: &CorrespondenceSet, extrinsic: &RigidTransform) -> Vec<f64> {
    corr.entries
        .iter()
        .map(|c| reprojection_error(c, extrinsic, &corr.intrinsics))
        .collect()
}

/// Rigid pose from a projection matrix known up to scale and sign. The sign
/// is chosen so that most points lie in front of the camera.
pub(crate) fn pose_from_projection(p: &Matrix3x4<f64>, points: &[Vector3<f64>]) -> Result<RigidTransform> {
    let m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let sv = m.singular_values();
    let mean = sv.sum() / 3.0;
    if !(mean > 0.0) || sv.min() < 1e-12 * sv.max() {
        return Err(Error::DegenerateConfiguration("singular projection matrix".into()));
    }
    let col3 = p.column(3).into_owned();
    let in_front = |s: f64| {
        points
            .iter()
            .filter(|x| (s * (m * *x + col3)).z > 0.0)
            .count()
    };
    let mut s = 1.0 / mean;
    if 2 * in_front(s) < points.len() {
        s = -s;
    }
    Ok(RigidTransform {
        rotation: nearest_rotation(&(m * s)),
        translation: col3 * s,
    })
}

/// Direct linear solve on undistorted normalized image points.
pub fn pnp_dlt(corr: &CorrespondenceSet) -> Result<RigidTransform> {
    corr.require_solvable()?;
    let n = corr.len();
    let pts: Vec<Vector3<f64>> = corr.entries.iter().map(|c| c.p3d).collect();
    let centroid = pts.iter().fold(Vector3::zeros(), |a, p| a + p) / n as f64;
    let spread = pts.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n as f64;
    if !(spread > 1e-12) {
        return Err(Error::DegenerateConfiguration("coincident 3D points".into()));
    }
    let scale = 3f64.sqrt() / spread;
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (k, c) in corr.entries.iter().enumerate() {
        let xy = corr.intrinsics.unproject(&c.p2d, UNDISTORT_ITERATIONS);
        let q = (c.p3d - centroid) * scale;
        let h = [q.x, q.y, q.z, 1.0];
        for j in 0..4 {
            a[(2 * k, j)] = h[j];
            a[(2 * k, 8 + j)] = -xy.x * h[j];
            a[(2 * k + 1, 4 + j)] = h[j];
            a[(2 * k + 1, 8 + j)] = -xy.y * h[j];
        }
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (l0, l1, lmax) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[11]],
    );
    if l1 <= 1e-12 * lmax || l1 <= l0 * (1.0 + 1e-9) {
        return Err(Error::DegenerateConfiguration("rank-deficient DLT system".into()));
    }
    let v = eig.eigenvectors.column(order[0]);
    let pn = Matrix3x4::from_row_slice(v.as_slice());
    // Undo the 3D normalization: X_n = scale·(X − c).
    let mut t3 = nalgebra::Matrix4::<f64>::identity() * scale;
    t3[(3, 3)] = 1.0;
    for r in 0..3 {
        t3[(r, 3)] = -scale * centroid[r];
    }
    let p = pn * t3;
    pose_from_projection(&p, &pts)
}

/// Pixel Jacobian of the distortion-and-intrinsics map at normalized `xy`.
fn pixel_jacobian(intr: &CameraIntrinsics, x: f64, y: f64) -> Matrix2<f64> {
    let r2 = x * x + y * y;
    let radial = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2;
    let dr = 2.0 * intr.k1 + 4.0 * intr.k2 * r2;
    let (p1, p2) = (intr.p1, intr.p2);
    let dxx = radial + x * x * dr + 2.0 * p1 * y + 6.0 * p2 * x;
    let dxy = x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y;
    let dyx = x * y * dr + 2.0 * p1 * x + 2.0 * p2 * y;
    let dyy = radial + y * y * dr + 6.0 * p1 * y + 2.0 * p2 * x;
    Matrix2::new(intr.fx * dxx, intr.fx * dxy, intr.fy * dyx, intr.fy * dyy)
}

fn total_sq_error(corr: &CorrespondenceSet, pose: &RigidTransform) -> f64 {
    corr.entries
        .iter()
        .map(|c| {
            let e = reprojection_error(c, pose, &corr.intrinsics);
            e * e
        })
        .sum()
}

/// Damped least squares on `(ω, δt)` with the update
/// `R ← exp(ω)·R, t ← t + δt`, minimizing summed squared pixel error.
pub fn pnp_refine(corr: &CorrespondenceSet, init: &RigidTransform) -> RigidTransform {
    let intr = &corr.intrinsics;
    let mut pose = *init;
    let mut cost = total_sq_error(corr, &pose);
    if !cost.is_finite() || corr.is_empty() {
        return pose;
    }
    let mut lambda = -1.0;
    let mut rejected = 0;
    for _ in 0..100 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in &corr.entries {
            let rx = pose.rotation * c.p3d;
            let pc = rx + pose.translation;
            let (x, y) = (pc.x / pc.z, pc.y / pc.z);
            let uv = intr.normalized_to_pixel(&intr.distort(&Vector2::new(x, y)));
            let r = uv - c.p2d;
            let dproj = Matrix2x3::new(
                1.0 / pc.z,
                0.0,
                -pc.x / (pc.z * pc.z),
                0.0,
                1.0 / pc.z,
                -pc.y / (pc.z * pc.z),
            );
            let dpix = pixel_jacobian(intr, x, y) * dproj;
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dpix * -skew(&rx)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpix);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        if lambda < 0.0 {
            lambda = 1e-3 * (0..6).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
        }
        loop {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = damped.cholesky().map(|ch| ch.solve(&-jtr)) else {
                lambda *= 10.0;
                rejected += 1;
                if rejected >= 5 {
                    break;
                }
                continue;
            };
            let candidate = RigidTransform {
                rotation: exp_so3(&Vector3::new(delta[0], delta[1], delta[2])) * pose.rotation,
                translation: pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
            };
            let new_cost = total_sq_error(corr, &candidate);
            // Gain the linearized model predicts for this step.
            let predicted = -(2.0 * delta.dot(&jtr) + delta.dot(&(jtj * delta)));
            if new_cost < cost {
                let improvement = cost - new_cost;
                pose = candidate;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-12);
                rejected = 0;
                if improvement < 1e-10 * (1.0 + cost) {
                    return pose;
                }
                break;
            }
            if predicted <= 1e-10 * (1.0 + cost) {
                // Already at the noise floor of the cost.
                return pose;
            }
            lambda *= 10.0;
            rejected += 1;
            if rejected >= 5 {
                break;
            }
        }
        if rejected >= 5 {
            log::debug!("pose refinement stalled after 5 rejected steps; keeping best pose");
            return pose;
        }
    }
    pose
}

/// Consensus over seeded 6-pair hypotheses; hypothesis `h` samples from the
/// stream `(seed, h)` so the result is independent of the worker count.
pub fn ransac_pnp(
    corr: &CorrespondenceSet,
    iterations: usize,
    inlier_gate: f64,
    seed: u64,
) -> Result<(RigidTransform, Vec<bool>)> {
    corr.require_solvable()?;
    let n = corr.len();
    let hypotheses = if n == MIN_ENTRIES { 1 } else { iterations.max(1) };
    let best = (0..hypotheses)
        .into_par_iter()
        .filter_map(|h| {
            let idx: Vec<usize> = if n == MIN_ENTRIES {
                (0..n).collect()
            } else {
                let mut rng = rng_from(seed, &[h as u64]);
                let mut s = sample(&mut rng, n, MIN_ENTRIES).into_vec();
                s.sort_unstable();
                s
            };
            // The rigid pose nearest a minimal DLT is poor under noise; polish
            // it on its own sample before scoring.
            let sample = corr.subset(&idx);
            let pose = pnp_refine(&sample, &pnp_dlt(&sample).ok()?);
            let errs = reprojection_errors(corr, &pose);
            let inl: Vec<f64> = errs.into_iter().filter(|e| *e < inlier_gate).collect();
            let rms = (inl.iter().map(|e| e * e).sum::<f64>() / inl.len().max(1) as f64).sqrt();
            Some((inl.len(), rms, h, pose))
        })
        .reduce_with(|a, b| {
            let ord = b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2));
            if ord.is_le() {
                a
            } else {
                b
            }
        });
    let Some((count, _, _, pose)) = best else {
        return Err(Error::NoConsensus);
    };
    if count < MIN_ENTRIES {
        return Err(Error::NoConsensus);
    }
    let inliers: Vec<usize> = reprojection_errors(corr, &pose)
        .iter()
        .enumerate()
        .filter(|(_, e)| **e < inlier_gate)
        .map(|(i, _)| i)
        .collect();
    let refined = pnp_refine(&corr.subset(&inliers), &pose);
    let mask = reprojection_errors(corr, &refined)
        .iter()
        .map(|e| *e < inlier_gate)
        .collect();
    Ok((refined, mask))
}

/// RANSAC solve, then repeated rounds that drop every surviving pair with
/// error `≥ delta_reproj` and refine on the rest, until all survivors are
/// below the threshold or 20 rounds have run.
pub fn calibrate(
    corr: &CorrespondenceSet,
    delta_reproj: f64,
    ransac_iterations: usize,
    seed: u64,
) -> Result<CalibrationResult> {
    if !(delta_reproj > 0.0) {
        return Err(Error::Config("delta_reproj must be positive".into()));
    }
    let (mut pose, _) = ransac_pnp(corr, ransac_iterations, delta_reproj, seed)?;
    let mut survivors = vec![true; corr.len()];
    let mut errors = reprojection_errors(corr, &pose);
    let mut rounds = 0;
    while rounds < 20 {
        let bad = (0..corr.len()).any(|i| survivors[i] && errors[i] >= delta_reproj);
        if !bad {
            break;
        }
        for i in 0..corr.len() {
            if errors[i] >= delta_reproj {
                survivors[i] = false;
            }
        }
        let kept: Vec<usize> = (0..corr.len()).filter(|&i| survivors[i]).collect();
        if kept.len() < MIN_ENTRIES {
            return Err(Error::OverPruned(kept.len()));
        }
        pose = pnp_refine(&corr.subset(&kept), &pose);
        errors = reprojection_errors(corr, &pose);
        rounds += 1;
    }
    for i in 0..corr.len() {
        if errors[i] >= delta_reproj {
            survivors[i] = false;
        }
    }
    if survivors.iter().filter(|s| **s).count() < MIN_ENTRIES {
        return Err(Error::OverPruned(survivors.iter().filter(|s| **s).count()));
    }
    Ok(CalibrationResult {
        extrinsic: pose,
        per_entry_error: errors,
        inlier_mask: survivors,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pose() -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::new(0.3, -1.2, 0.4), Vector3::new(0.1, -0.05, 0.3))
    }

    fn intr() -> CameraIntrinsics {
        let mut i = CameraIntrinsics::pinhole(900.0, 905.0, 640.0, 360.0, 1280, 720);
        i.k1 = -0.1;
        i.k2 = 0.01;
        i.p1 = 0.001;
        i
    }

    /// Random points in front of the camera for `pose`.
    fn synthetic(n: usize, seed: u64) -> CorrespondenceSet {
        let mut rng = rng_from(seed, &[]);
        let inv = pose().inverse();
        let intr = intr();
        let entries = (0..n)
            .map(|k| {
                let pc = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.6..0.6),
                    rng.random_range(2.0..6.0),
                );
                Correspondence {
                    placement_id: 0,
                    corner_index: k,
                    p3d: inv.apply(&pc),
                    p2d: project_point(&pc, &intr).unwrap(),
                }
            })
            .collect();
        CorrespondenceSet::new(entries, intr)
    }

    fn close(a: &RigidTransform, b: &RigidTransform) -> (f64, f64) {
        (
            crate::geometry::rotation_angle_between(a, b),
            (a.translation - b.translation).norm(),
        )
    }

    #[test]
    fn projection_sign_is_fixed_by_cheirality() {
        let p = pose();
        let m = Matrix3x4::from_fn(|r, c| if c < 3 { p.rotation[(r, c)] } else { p.translation[r] });
        let pts: Vec<Vector3<f64>> = synthetic(10, 3).entries.iter().map(|c| c.p3d).collect();
        for s in [2.5, -2.5] {
            let got = pose_from_projection(&(m * s), &pts).unwrap();
            let (r, t) = close(&got, &p);
            assert!(r < 1e-9 && t < 1e-12);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let mut c = synthetic(8, 1);
        for (k, e) in c.entries.iter_mut().enumerate() {
            e.p3d = Vector3::new(k as f64, 2.0 * k as f64, 1.0);
        }
        assert!(matches!(pnp_dlt(&c), Err(Error::DegenerateConfiguration(_))));
    }

    #[test]
    fn pixel_jacobian_matches_finite_differences() {
        let i = intr();
        let (x, y) = (0.31, -0.22);
        let j = pixel_jacobian(&i, x, y);
        let f = |x: f64, y: f64| i.normalized_to_pixel(&i.distort(&Vector2::new(x, y)));
        let h = 1e-6;
        let dx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let dy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        assert!((j.column(0) - dx).norm() < 1e-5);
        assert!((j.column(1) - dy).norm() < 1e-5);
    }

    #[test]
    fn refine_from_perturbed_start() {
        let c = synthetic(40, 5);
        let start = RigidTransform {
            rotation: exp_so3(&Vector3::new(0.05, -0.06, 0.04)) * pose().rotation,
            translation: pose().translation + Vector3::new(0.06, -0.05, 0.05),
        };
        let got = pnp_refine(&c, &start);
        let (r, t) = close(&got, &pose());
        assert!(r < 1e-6 && t < 1e-6, "{r} {t}");
    }
}
