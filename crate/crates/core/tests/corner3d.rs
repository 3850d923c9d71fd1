mod common;

use common::{bare_scene, board_pose, frames, spec, stack};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use sslcal::config::PipelineConfig;
use sslcal::corner3d::{binarize_intensity, build_standard_model, estimate_alignment, similarity_cost};
use sslcal::geometry::{exp_so3, rotation_angle_between, transform_cloud, PointCloud, RigidTransform};
use sslcal::integration::integrate_frames;
use sslcal::optimize::central_gradient;
use sslcal::pipeline::{lidar_corners_from_board, LidarCorners};
use sslcal::simulator::{NoiseModel, SimScene};

fn board_scene(distance: f64, yaw: f64, roll: f64) -> SimScene {
    let s = spec(7, 5, 0.12);
    bare_scene(s, board_pose(&s, distance, yaw, roll))
}

fn extract(scene: &SimScene, noise: &NoiseModel, seed: u64) -> LidarCorners {
    let cfg = PipelineConfig::default();
    let clouds: Vec<PointCloud> = frames(scene, 50, noise, seed).into_iter().map(|f| f.cloud).collect();
    let cloud = integrate_frames(&clouds, &cfg.integration).unwrap();
    lidar_corners_from_board(&cloud, &cfg, seed).unwrap()
}

fn rms(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
}

/// Board points in the ground-truth model frame, with their binarized labels.
fn model_frame_points(scene: &SimScene, board: &PointCloud) -> (Vec<Vector2<f64>>, Vec<u8>, u8) {
    let (placement, color) = scene.canonical_placement();
    let inv = placement.inverse();
    let pts = board
        .points
        .iter()
        .map(|p| {
            let q = inv.apply(&p.pos());
            Vector2::new(q.x, q.y)
        })
        .collect();
    (pts, binarize_intensity(board).unwrap().labels, color)
}

#[test]
fn binarization_matches_cell_colors() {
    let scene = board_scene(3.0, 20.0, 0.0);
    let noise = NoiseModel {
        sigma_intensity: 0.05,
        ..NoiseModel::none()
    };
    let (cloud, labels) = stack(&frames(&scene, 5, &noise, 1));
    let b = binarize_intensity(&cloud).unwrap();
    let right = b
        .labels
        .iter()
        .zip(&labels)
        .filter(|(a, l)| Some(**a) == l.cell_color)
        .count();
    assert!(right as f64 >= 0.98 * labels.len() as f64, "{right}/{}", labels.len());
}

#[test]
fn noise_free_board_corners_and_pose() {
    let scene = board_scene(3.0, 25.0, 10.0);
    let got = extract(&scene, &NoiseModel::none(), 2);
    let truth = scene.corners3d_gt();
    let g_s = scene.spec.g_s;
    let e = rms(&got.corners, &truth);
    assert!(e < g_s / 100.0, "rms {e}");
    let (placement, _) = scene.canonical_placement();
    let found = got.alignment.transform.inverse();
    assert!(rotation_angle_between(&found, &placement) < 0.01);
    assert!((found.translation - placement.translation).norm() < 1e-4, "{}", (found.translation - placement.translation).norm());
}

#[test]
fn cost_landscape_minimum_is_at_truth() {
    let scene = board_scene(3.0, 15.0, 0.0);
    let got = extract(&scene, &NoiseModel::none(), 3);
    let (pts, labels, color) = model_frame_points(&scene, &got.board);
    let model = build_standard_model(&scene.spec, color);
    let at = |tx: f64, ty: f64| similarity_cost(0.0, tx, ty, &pts, &labels, &model);
    let truth = at(0.0, 0.0);
    assert!(truth < at(0.01, 0.0));
    let half = scene.spec.g_s / 2.0;
    for i in -10..=10 {
        for j in -10..=10 {
            if (i, j) != (0, 0) {
                let c = at(i as f64 * half / 10.0, j as f64 * half / 10.0);
                assert!(truth <= c, "({i},{j}) {c} < {truth}");
            }
        }
    }
}

#[test]
fn quarter_turned_cloud_reaches_the_same_cost() {
    let cfg = PipelineConfig::default();
    let scene = board_scene(3.0, 0.0, 0.0);
    let got = extract(&scene, &NoiseModel::none(), 4);
    let c = got.board.centroid().unwrap();
    let n = got.plane.normal();
    let r = exp_so3(&(n * std::f64::consts::FRAC_PI_2));
    let spin = RigidTransform {
        rotation: r,
        translation: c - r * c,
    };
    let turned = transform_cloud(&got.board, &spin);
    let plane = sslcal::geometry::Plane::from_point_normal(&c, &n).unwrap();
    let a = estimate_alignment(&got.board, &got.plane, &cfg.spec, &cfg.corner3d).unwrap();
    let b = estimate_alignment(&turned, &plane, &cfg.spec, &cfg.corner3d).unwrap();
    assert!((a.cost - b.cost).abs() <= 1e-6 * a.cost.max(1.0), "{} vs {}", a.cost, b.cost);
}

#[test]
fn inverted_reflectance_flips_the_colour_hypothesis() {
    let cfg = PipelineConfig::default();
    let scene = board_scene(3.0, 10.0, 0.0);
    let got = extract(&scene, &NoiseModel::none(), 5);
    let mut inverted = got.board.clone();
    for p in inverted.points.iter_mut() {
        p.intensity = 1.0 - p.intensity;
    }
    let a = estimate_alignment(&got.board, &got.plane, &cfg.spec, &cfg.corner3d).unwrap();
    let b = estimate_alignment(&inverted, &got.plane, &cfg.spec, &cfg.corner3d).unwrap();
    assert_ne!(a.lower_left_color, b.lower_left_color);
    let ca = build_standard_model(&cfg.spec, 0)
        .std_corners
        .iter()
        .map(|q| a.transform.inverse().apply(&Vector3::new(q.x, q.y, 0.0)))
        .collect::<Vec<_>>();
    let cb = build_standard_model(&cfg.spec, 0)
        .std_corners
        .iter()
        .map(|q| b.transform.inverse().apply(&Vector3::new(q.x, q.y, 0.0)))
        .collect::<Vec<_>>();
    assert!(rms(&ca, &cb) < 1e-6);
}

#[test]
fn finite_difference_gradient_matches_five_point_stencil() {
    let s = spec(7, 5, 0.12);
    let model = build_standard_model(&s, 0);
    let margin = s.g_s / 100.0;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    // Kinks of the cost: cell lines and ties between the two nearest corners.
    let clear = |q: &Vector2<f64>| {
        let fx = (q.x / s.g_s).fract();
        let fy = (q.y / s.g_s).fract();
        if fx.min(1.0 - fx) * s.g_s < margin || fy.min(1.0 - fy) * s.g_s < margin {
            return false;
        }
        let mut d: Vec<f64> = model
            .std_corners
            .iter()
            .map(|c| (c.x - q.x).abs() + (c.y - q.y).abs())
            .collect();
        d.sort_by(f64::total_cmp);
        d[1] - d[0] > 2.0 * margin
    };
    for _ in 0..10 {
        let x: [f64; 3] = [rng.random_range(-3.0..3.0), rng.random_range(0.2..0.8), rng.random_range(0.2..0.6)];
        let (sn, cs) = x[0].sin_cos();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        while pts.len() < 200 {
            let q = Vector2::new(
                rng.random_range(-0.1..model.width + 0.1),
                rng.random_range(-0.1..model.height + 0.1),
            );
            let near_edge = [q.x, model.width - q.x, q.y, model.height - q.y]
                .iter()
                .any(|d| d.abs() < margin);
            if near_edge || !clear(&q) {
                continue;
            }
            // Invert p ↦ R(θ)p + t.
            let d = q - Vector2::new(x[1], x[2]);
            pts.push(Vector2::new(cs * d.x + sn * d.y, -sn * d.x + cs * d.y));
            labels.push(rng.random_range(0..2u8));
        }
        let f = |v: &[f64]| similarity_cost(v[0], v[1], v[2], &pts, &labels, &model);
        let g = central_gradient(&f, &x, 1e-6);
        let h = 1e-5;
        for i in 0..3 {
            let at = |k: f64| {
                let mut y = x;
                y[i] += k * h;
                f(&y)
            };
            let five = (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * h);
            assert!((g[i] - five).abs() <= 1e-4 * five.abs().max(1e-3), "{i}: {} vs {five}", g[i]);
        }
    }
}
