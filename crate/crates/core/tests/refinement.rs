mod common;

use common::{bare_scene, board_pose, frames, spec, stack};
use sslcal::geometry::{PointCloud, Point3};
use sslcal::refinement::{
    flatten_to_plane, grid_cell_counts, grid_uniform_downsample, iterative_plane_refine, RefinementParams,
};
use sslcal::simulator::{NoiseModel, SurfaceId};

fn board(distance: f64, frames_n: usize, sigma: f64, seed: u64) -> (PointCloud, sslcal::simulator::SimScene) {
    let s = spec(7, 5, 0.12);
    let scene = bare_scene(s, board_pose(&s, distance, 20.0, 0.0));
    let noise = NoiseModel {
        sigma_axial_near: sigma,
        sigma_axial_far: sigma,
        ..NoiseModel::none()
    };
    let (cloud, labels) = stack(&frames(&scene, frames_n, &noise, seed));
    assert!(labels.iter().all(|l| l.surface == SurfaceId::Board));
    (cloud, scene)
}

fn rms_to(cloud: &PointCloud, plane: &sslcal::geometry::Plane) -> f64 {
    (cloud.points.iter().map(|p| plane.signed_distance(&p.pos()).powi(2)).sum::<f64>() / cloud.len() as f64).sqrt()
}

#[test]
fn noisy_board_refinement_tightens_every_pass() {
    let (cloud, _) = board(3.0, 10, 0.02, 1);
    let r = iterative_plane_refine(&cloud, &RefinementParams::default(), 2).unwrap();
    assert!(r.rms.len() >= 2);
    for w in r.rms.windows(2) {
        assert!(w[1] < w[0], "{:?}", r.rms);
    }
    for w in r.survivors.windows(2) {
        assert!(w[1] <= w[0]);
    }
}

#[test]
fn flattened_board_lies_on_its_plane() {
    let (cloud, _) = board(3.0, 10, 0.02, 3);
    let r = iterative_plane_refine(&cloud, &RefinementParams::default(), 4).unwrap();
    let flat = flatten_to_plane(&r.cloud, &r.plane);
    assert_eq!(flat.len(), r.cloud.len());
    assert!(rms_to(&flat, &r.plane) < 1e-9);
    let again = flatten_to_plane(&flat, &r.plane);
    for (a, b) in flat.points.iter().zip(&again.points) {
        assert!((a.pos() - b.pos()).norm() < 1e-12);
    }
    // Every point stays on its own ray, on the same side of the sensor.
    for (a, b) in r.cloud.points.iter().zip(&flat.points) {
        let (u, v) = (a.pos(), b.pos());
        assert!(u.cross(&v).norm() < 1e-9 * u.norm() * v.norm());
        assert!(u.dot(&v) > 0.0);
        assert_eq!(a.intensity, b.intensity);
    }
}

#[test]
fn near_field_density_is_evened_out() {
    let s = spec(7, 5, 0.12);
    // Noise-free, so the unevenness left is the rosette's own.
    let (cloud, scene) = board(1.5, 50, 0.0, 5);
    let params = RefinementParams::default();
    let r = iterative_plane_refine(&cloud, &params, 6).unwrap();
    let flat = flatten_to_plane(&r.cloud, &r.plane);
    let cell = params.cell_size(s.g_s);
    let thin = grid_uniform_downsample(&flat, &r.plane, cell, params.delta_rho, 7);
    // Only cells whose points all lie well inside the board outline.
    let inv = scene.board_pose.inverse();
    let margin = 0.05;
    let inner = |p: &Point3| {
        let q = inv.apply(&p.pos());
        q.x > margin && q.y > margin && q.x < s.board_width() - margin && q.y < s.board_height() - margin
    };
    let outer = PointCloud::new(flat.points.iter().filter(|p| !inner(p)).copied().collect());
    let edge_cells = grid_cell_counts(&outer, &r.plane, cell);
    let before = grid_cell_counts(&flat, &r.plane, cell);
    let after = grid_cell_counts(&thin, &r.plane, cell);
    let interior: Vec<usize> = after
        .iter()
        .filter(|(k, _)| !edge_cells.contains_key(k))
        .map(|(_, &n)| n)
        .collect();
    assert!(interior.len() > 100, "{}", interior.len());
    let max = *interior.iter().max().unwrap() as f64;
    let min = *interior.iter().min().unwrap() as f64;
    assert!(max / min <= 2.0, "{max} / {min}");
    assert!(before.values().max().unwrap() > &(2 * params.delta_rho));
    // Downsampling only removes points.
    let originals: std::collections::HashSet<[u64; 3]> = flat
        .points
        .iter()
        .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
        .collect();
    assert!(thin.points.iter().all(|p| originals.contains(&[p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])));
}
