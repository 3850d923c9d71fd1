mod common;

use common::{board_pose, frames, spec, stack};
use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use sslcal::evaluation::{
    colorize_cloud, normalized_reprojection_error, normalized_reprojection_error_labeled,
    reprojection_overlay,
};
use sslcal::geometry::{CameraIntrinsics, RigidTransform};
use sslcal::rng::rng_from;
use sslcal::simulator::{render_image, sample_board_poses, NoiseModel, SimConfig, SurfaceId};

/// Ground-truth corners of `n` simulated placements.
fn corner_sets(n: usize, seed: u64) -> (Vec<Vector3<f64>>, Vec<Vector2<f64>>, RigidTransform, CameraIntrinsics) {
    let sim = SimConfig {
        n_placements: n,
        ..SimConfig::default()
    };
    let mut c3 = Vec::new();
    let mut c2 = Vec::new();
    let mut rig = None;
    for pose in sample_board_poses(&sim, seed).unwrap() {
        let scene = sim.scene(pose);
        c3.extend(scene.corners3d_gt());
        c2.extend(scene.corners2d_gt().unwrap());
        rig = Some((scene.extrinsic_gt, scene.intrinsics));
    }
    let (e, i) = rig.unwrap();
    (c3, c2, e, i)
}

#[test]
fn pixel_noise_gives_the_expected_weighted_error() {
    let sigma = 0.3;
    let g = Normal::new(0.0, sigma).unwrap();
    let (mut observed, mut expected) = (0.0, 0.0);
    for seed in 0..20 {
        let (c3, c2, e, intr) = corner_sets(6, 200 + seed);
        let mut rng = rng_from(seed, &[5]);
        let noisy: Vec<Vector2<f64>> = c2
            .iter()
            .map(|q| q + Vector2::new(g.sample(&mut rng), g.sample(&mut rng)))
            .collect();
        let r = normalized_reprojection_error(&c3, &noisy, &e, &intr).unwrap();
        observed += r.mean_weighted_error;
        // Mean of a 2D isotropic Gaussian's norm is σ·√(π/2).
        let d_max = c3.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let mean_w = c3.iter().map(|p| p.norm() / d_max).sum::<f64>() / c3.len() as f64;
        expected += sigma * (std::f64::consts::PI / 2.0).sqrt() * mean_w;
    }
    observed /= 20.0;
    expected /= 20.0;
    assert!((0.15..=0.45).contains(&observed), "{observed}");
    assert!((observed - expected).abs() < 0.05 * expected, "{observed} vs {expected}");
}

#[test]
fn board_overlay_matches_rendered_mask() {
    let s = spec(7, 5, 0.12);
    let cfg = SimConfig::default();
    let mut scene = common::bare_scene(s, board_pose(&s, 2.0, 15.0, 0.0));
    // A coarse camera so the scan fills every board pixel.
    scene.intrinsics = scene.intrinsics.scaled(0.125);
    let (cloud, labels) = stack(&frames(&scene, 50, &NoiseModel::none(), 9));
    let board: Vec<usize> = (0..cloud.len()).filter(|&i| labels[i].surface == SurfaceId::Board).collect();
    let overlay = reprojection_overlay(&cloud.select(&board), &scene.extrinsic_gt, &scene.intrinsics);
    let mask = render_image(&scene, cfg.supersample).unwrap().mask;
    let w = scene.intrinsics.width as usize;
    let (mut inter, mut union) = (0, 0);
    for (k, m) in mask.iter().enumerate() {
        let lit = overlay.lit(k % w, k / w);
        inter += (lit && *m) as usize;
        union += (lit || *m) as usize;
    }
    let iou = inter as f64 / union as f64;
    assert!(iou >= 0.9, "IoU {iou}");
}

#[test]
fn colorized_board_agrees_with_reflectance() {
    let s = spec(7, 5, 0.12);
    let scene = common::bare_scene(s, board_pose(&s, 2.5, 20.0, 0.0));
    let (cloud, labels) = stack(&frames(&scene, 20, &NoiseModel::default(), 10));
    let board: Vec<usize> = (0..cloud.len())
        .filter(|&i| labels[i].surface == SurfaceId::Board && !labels[i].is_outlier)
        .collect();
    let board = cloud.select(&board);
    let image = render_image(&scene, 4).unwrap().image;
    let colored = colorize_cloud(&board, &image, &scene.extrinsic_gt, &scene.intrinsics);
    let (lo, hi) = scene.board_reflectance;
    let cut = (lo + hi) / 2.0;
    let (mut agree, mut n) = (0, 0);
    for (p, c) in board.points.iter().zip(&colored.colors) {
        if let Some(c) = c {
            n += 1;
            agree += ((p.intensity > cut) == (*c > 0.5)) as usize;
        }
    }
    assert!(n as f64 > 0.99 * board.len() as f64);
    assert!(agree as f64 >= 0.95 * n as f64, "{agree}/{n}");
}

#[test]
fn nre_ignores_corner_order() {
    let (c3, c2, e, intr) = corner_sets(3, 300);
    let g = Normal::new(0.0, 0.7).unwrap();
    let mut rng = rng_from(300, &[]);
    let c2: Vec<Vector2<f64>> = c2
        .iter()
        .map(|q| q + Vector2::new(g.sample(&mut rng), g.sample(&mut rng)))
        .collect();
    let ids: Vec<(usize, usize)> = (0..c3.len()).map(|k| (k / 35, k % 35)).collect();
    let a = normalized_reprojection_error_labeled(&ids, &c3, &c2, &e, &intr).unwrap();
    let mut perm: Vec<usize> = (0..c3.len()).collect();
    perm.shuffle(&mut rng);
    let pick = |v: &[Vector3<f64>]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let b = normalized_reprojection_error_labeled(
        &perm.iter().map(|&i| ids[i]).collect::<Vec<_>>(),
        &pick(&c3),
        &perm.iter().map(|&i| c2[i]).collect::<Vec<_>>(),
        &e,
        &intr,
    )
    .unwrap();
    assert!((a.nre_total - b.nre_total).abs() < 1e-9 * a.nre_total);
    assert_eq!(a.fraction_below, b.fraction_below);
    for c in &b.per_corner {
        let m = a
            .per_corner
            .iter()
            .find(|x| (x.placement_id, x.corner_index) == (c.placement_id, c.corner_index))
            .unwrap();
        assert_eq!(m.weighted_error, c.weighted_error);
    }
}

#[test]
fn equidistant_corners_sum_plain_pixel_error() {
    // All corners on a sphere about the LiDAR origin, so every weight is 1.
    let intr = CameraIntrinsics::pinhole(700.0, 700.0, 320.0, 240.0, 640, 480);
    let e = RigidTransform::identity();
    let mut rng = rng_from(400, &[]);
    let g = Normal::new(0.0, 2.0).unwrap();
    let mut c3 = Vec::new();
    let mut c2 = Vec::new();
    let mut plain = 0.0;
    for k in 0..40 {
        let dir = Vector3::new(-0.3 + 0.015 * k as f64, 0.2 - 0.01 * k as f64, 1.0).normalize();
        let p = dir * 4.0;
        let uv = Vector2::new(700.0 * p.x / p.z + 320.0, 700.0 * p.y / p.z + 240.0);
        let off = Vector2::new(g.sample(&mut rng), g.sample(&mut rng));
        plain += off.norm();
        c3.push(p);
        c2.push(uv + off);
    }
    let r = normalized_reprojection_error(&c3, &c2, &e, &intr).unwrap();
    assert!(r.per_corner.iter().all(|c| (c.weight - 1.0).abs() < 1e-12));
    assert!((r.nre_total - plain).abs() < 1e-9 * plain, "{} vs {plain}", r.nre_total);
    let p = |t| r.percent_below(t).unwrap();
    assert!(p(10.0) >= p(5.0) && p(5.0) >= p(1.0) && p(1.0) >= p(0.5));
}
