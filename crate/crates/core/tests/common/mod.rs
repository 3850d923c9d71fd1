#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use sslcal::geometry::{exp_so3, CheckerboardSpec, RigidTransform};
use sslcal::simulator::{default_rig, SimScene};

/// Board axes facing the LiDAR: x = −Y, y = Z, z = −X.
pub fn facing() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0)
}

/// Board centered at `(distance, 0, 0)` turned by `yaw` about its vertical
/// axis and `roll` in-plane, both in degrees.
pub fn board_pose(spec: &CheckerboardSpec, distance: f64, yaw_deg: f64, roll_deg: f64) -> RigidTransform {
    let r = facing()
        * exp_so3(&Vector3::new(0.0, yaw_deg.to_radians(), 0.0))
        * exp_so3(&Vector3::new(0.0, 0.0, roll_deg.to_radians()));
    let c = Vector3::new(distance, 0.0, 0.0);
    RigidTransform {
        rotation: r,
        translation: c - r * Vector3::new(spec.board_width() / 2.0, spec.board_height() / 2.0, 0.0),
    }
}

/// Board-only scene on the default rig.
pub fn bare_scene(spec: CheckerboardSpec, pose: RigidTransform) -> SimScene {
    let (extrinsic_gt, intrinsics) = default_rig();
    SimScene {
        board_pose: pose,
        spec,
        board_reflectance: (0.12, 0.78),
        lower_left_color: 0,
        extrinsic_gt,
        intrinsics,
        extra_surfaces: Vec::new(),
    }
}

pub fn spec(n_w: usize, n_h: usize, g_s: f64) -> CheckerboardSpec {
    CheckerboardSpec::new(n_w, n_h, g_s).unwrap()
}

/// `n` consecutive frames of a scene, frame `k` seeded by `(seed, k)`.
pub fn frames(
    scene: &SimScene,
    n: usize,
    noise: &sslcal::simulator::NoiseModel,
    seed: u64,
) -> Vec<sslcal::simulator::LabeledCloud> {
    let pattern = sslcal::simulator::ScanPattern::default();
    (0..n)
        .map(|k| {
            sslcal::simulator::scan_frame(
                scene,
                &pattern,
                noise,
                k as f64 * pattern.frame_duration,
                sslcal::rng::derive_seed(seed, &[k as u64]),
            )
        })
        .collect()
}

/// Concatenated clouds and labels.
pub fn stack(
    frames: &[sslcal::simulator::LabeledCloud],
) -> (sslcal::geometry::PointCloud, Vec<sslcal::simulator::PointLabel>) {
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for f in frames {
        pts.extend_from_slice(&f.cloud.points);
        labels.extend_from_slice(&f.labels);
    }
    (sslcal::geometry::PointCloud::new(pts), labels)
}
