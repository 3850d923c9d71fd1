mod common;

use common::{bare_scene, board_pose, spec};
use nalgebra::Vector3;
use sslcal::geometry::project_point;
use sslcal::simulator::*;

fn std_dev(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn constant_noise(sigma: f64) -> NoiseModel {
    NoiseModel {
        sigma_axial_near: sigma,
        sigma_axial_far: sigma,
        ..NoiseModel::none()
    }
}

#[test]
fn consecutive_frames_do_not_repeat_directions() {
    let p = ScanPattern::default();
    let n = p.points_per_frame();
    let a: Vec<(f64, f64)> = rosette_angles(&p, 0.0, n);
    let b: Vec<(f64, f64)> = rosette_angles(&p, p.frame_duration, n);
    // Bucket the second frame on a 1e-3 rad grid so the check stays linear.
    let mut grid = std::collections::HashMap::<(i64, i64), Vec<(f64, f64)>>::new();
    for &(u, v) in &b {
        grid.entry(((u * 1e3).floor() as i64, (v * 1e3).floor() as i64)).or_default().push((u, v));
    }
    for &(u, v) in &a {
        let (i, j) = ((u * 1e3).floor() as i64, (v * 1e3).floor() as i64);
        for di in -1..=1 {
            for dj in -1..=1 {
                for &(x, y) in grid.get(&(i + di, j + dj)).map(Vec::as_slice).unwrap_or(&[]) {
                    assert!((x - u).hypot(y - v) > 1e-6);
                }
            }
        }
    }
}

#[test]
fn fifty_frames_cover_the_disk() {
    let p = ScanPattern::default();
    let n = p.points_per_frame() * 50;
    let radius = p.a1 + p.a2;
    let cell = 0.2f64.to_radians();
    let mut hit = std::collections::HashSet::new();
    for (u, v) in rosette_angles(&p, 0.0, n) {
        hit.insert(((u / cell).floor() as i64, (v / cell).floor() as i64));
    }
    // Every grid cell lying wholly inside the disk holds a sample.
    let k = (radius / cell).ceil() as i64;
    let mut missing = 0;
    for i in -k..k {
        for j in -k..k {
            let far = ((i as f64 + 0.5).abs() + 0.5).hypot((j as f64 + 0.5).abs() + 0.5) * cell;
            if far <= radius && !hit.contains(&(i, j)) {
                missing += 1;
            }
        }
    }
    assert_eq!(missing, 0);
}

#[test]
fn axial_noise_matches_sigma() {
    let s = spec(7, 5, 0.12);
    let scene = bare_scene(s, board_pose(&s, 2.0, 0.0, 0.0));
    let inv = scene.board_pose.inverse();
    let mut d = Vec::new();
    for k in 0..20 {
        let f = scan_frame(&scene, &ScanPattern::default(), &constant_noise(0.02), 0.1 * k as f64, k);
        d.extend(f.cloud.points.iter().map(|p| inv.apply(&p.pos()).z));
    }
    assert!(d.len() >= 10_000, "{}", d.len());
    let sd = std_dev(&d);
    assert!((0.018..=0.022).contains(&sd), "{sd}");
}

#[test]
fn outlier_fraction_matches_rate() {
    let s = spec(7, 5, 0.12);
    let scene = bare_scene(s, board_pose(&s, 2.0, 0.0, 0.0));
    let noise = NoiseModel {
        outlier_rate: 0.05,
        ..NoiseModel::none()
    };
    let (mut n, mut out) = (0usize, 0usize);
    for k in 0..20 {
        let f = scan_frame(&scene, &ScanPattern::default(), &noise, 0.1 * k as f64, 100 + k);
        n += f.labels.len();
        out += f.labels.iter().filter(|l| l.is_outlier).count();
    }
    assert!(n >= 10_000);
    let frac = out as f64 / n as f64;
    assert!((0.045..=0.055).contains(&frac), "{frac}");
}

#[test]
fn far_board_gets_far_fewer_points() {
    let s = spec(7, 5, 0.12);
    let count = |d: f64| {
        let scene = bare_scene(s, board_pose(&s, d, 0.0, 0.0));
        scan_frame(&scene, &ScanPattern::default(), &NoiseModel::none(), 0.0, 1)
            .board_indices()
            .len()
    };
    let (near, far) = (count(1.5), count(7.6));
    assert!(near > 0);
    assert!((far as f64) < 0.25 * near as f64, "{far} vs {near}");
}

#[test]
fn noiseless_scan_lands_inside_render_mask() {
    let s = spec(7, 5, 0.12);
    let scene = bare_scene(s, board_pose(&s, 3.0, 25.0, 5.0));
    let r = render_image(&scene, 4).unwrap();
    let w = scene.intrinsics.width as usize;
    let f = scan_frame(&scene, &ScanPattern::default(), &NoiseModel::none(), 0.0, 3);
    let board = f.board_indices();
    assert!(!board.is_empty());
    let inside = board
        .iter()
        .filter(|&&i| {
            let p = f.cloud.points[i].pos();
            let uv = project_point(&scene.extrinsic_gt.apply(&p), &scene.intrinsics).unwrap();
            let (u, v) = (uv.x.round() as usize, uv.y.round() as usize);
            r.mask[v * w + u]
        })
        .count();
    assert!(inside as f64 >= 0.999 * board.len() as f64, "{inside}/{}", board.len());
}

#[test]
fn fronto_render_has_balanced_cells() {
    // 8×6 cells: equal dark and bright area.
    let s = spec(7, 5, 0.12);
    let r = render_image(&bare_scene(s, board_pose(&s, 1.0, 0.0, 0.0)), 4).unwrap();
    let dark = r.image.pixels.iter().filter(|&&p| p < 0.3).count() as f64;
    let bright = r.image.pixels.iter().filter(|&&p| p > 0.7).count() as f64;
    assert!(dark > 1e5);
    assert!((dark / bright - 1.0).abs() < 0.02, "{}", dark / bright);
}

#[test]
fn scans_are_reproducible() {
    let s = spec(7, 5, 0.12);
    let scene = bare_scene(s, board_pose(&s, 4.0, 10.0, 0.0));
    let noise = NoiseModel::default();
    let a = scan_frame(&scene, &ScanPattern::default(), &noise, 0.3, 42);
    let b = scan_frame(&scene, &ScanPattern::default(), &noise, 0.3, 42);
    let c = scan_frame(&scene, &ScanPattern::default(), &noise, 0.3, 43);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn sampled_poses_are_spread_out() {
    let cfg = SimConfig::default();
    let poses = sample_board_poses(&cfg, 9).unwrap();
    assert_eq!(poses.len(), 6);
    let centers: Vec<Vector3<f64>> = poses
        .iter()
        .map(|p| p.apply(&Vector3::new(cfg.spec.board_width() / 2.0, cfg.spec.board_height() / 2.0, 0.0)))
        .collect();
    for i in 0..centers.len() {
        let d = centers[i].norm();
        assert!((cfg.min_distance..=cfg.max_distance).contains(&d), "{d}");
        for j in 0..i {
            assert!((centers[i] - centers[j]).norm() >= 0.5);
        }
    }
}

#[test]
fn single_placement_dataset_is_consistent() {
    let cfg = SimConfig {
        n_placements: 1,
        frames: 2,
        noise: NoiseModel::none(),
        ..SimConfig::default()
    };
    let ds = make_calibration_dataset(&cfg, 4).unwrap();
    assert_eq!(ds.placements.len(), 1);
    let p = &ds.placements[0];
    assert_eq!(p.frames.len(), 2);
    assert_eq!(p.corners3d_gt.len(), 35);
    for (c3, c2) in p.corners3d_gt.iter().zip(&p.corners2d_gt) {
        let uv = project_point(&ds.extrinsic_gt.apply(c3), &ds.intrinsics).unwrap();
        assert!((uv - c2).norm() < 1e-9);
    }
    for f in &p.frames {
        assert_eq!(f.cloud.len(), f.labels.len());
    }
}
