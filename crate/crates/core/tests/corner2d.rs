mod common;

use common::{bare_scene, board_pose, spec};
use nalgebra::Vector2;
use sslcal::corner2d::{canonicalize_order, detect_corners, load_external_corners, save_corners, CornerSet2D};
use sslcal::error::Error;
use sslcal::image::GrayImage;
use sslcal::simulator::{degrade_image, render_image, RenderedImage};

fn render(n_w: usize, n_h: usize, distance: f64, yaw: f64, roll: f64) -> RenderedImage {
    let s = spec(n_w, n_h, 0.12);
    render_image(&bare_scene(s, board_pose(&s, distance, yaw, roll)), 8).unwrap()
}

fn detect_canonical(image: &GrayImage, n_w: usize, n_h: usize) -> Vec<Vector2<f64>> {
    let s = spec(n_w, n_h, 0.12);
    let raw = detect_corners(image, &s).unwrap();
    canonicalize_order(&raw, &s, image).unwrap().corners
}

fn max_error(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn blank_image_has_no_board() {
    let img = GrayImage::new(320, 240, 0.5);
    assert!(matches!(detect_corners(&img, &spec(7, 5, 0.12)), Err(Error::BoardNotFound(_))));
}

#[test]
fn fronto_parallel_corners_are_sub_tenth_pixel_and_unbiased() {
    let r = render(7, 5, 2.5, 0.0, 0.0);
    let got = detect_canonical(&r.image, 7, 5);
    assert!(max_error(&got, &r.corners) < 0.1);
    let n = got.len() as f64;
    let bias = got.iter().zip(&r.corners).fold(Vector2::zeros(), |a, (g, t)| a + (g - t)) / n;
    assert!(bias.x.abs() < 0.05 && bias.y.abs() < 0.05, "{bias:?}");
}

#[test]
fn upright_board_starts_at_lowest_leftmost_corner() {
    let r = render(7, 5, 2.5, 0.0, 0.0);
    let got = detect_canonical(&r.image, 7, 5);
    // Of the four grid extremes, the first sits lowest and leftmost.
    let score = |c: &Vector2<f64>| c.y - c.x;
    for k in [6, 28, 34] {
        assert!(score(&got[0]) > score(&got[k]) + 50.0);
    }
    assert!(got[0].x < got[6].x && got[0].y > got[28].y);
}

#[test]
fn yawed_noisy_board_within_half_pixel() {
    let r = render(7, 5, 3.0, 40.0, 0.0);
    let noisy = degrade_image(&r.image, 2.0 / 255.0, 11);
    let got = detect_canonical(&noisy, 7, 5);
    assert!(max_error(&got, &r.corners) < 0.5);
}

#[test]
fn half_turn_pair_keeps_board_correspondence() {
    // n_w + n_h odd: the cell colours tell the two orientations apart.
    for roll in [0.0, 180.0] {
        let r = render(6, 5, 2.5, 0.0, roll);
        let got = detect_canonical(&r.image, 6, 5);
        assert!(max_error(&got, &r.corners) < 0.1, "roll {roll}");
    }
}

#[test]
fn quarter_turn_rows_follow_n_w() {
    let r = render(7, 5, 3.0, 0.0, 90.0);
    let got = detect_canonical(&r.image, 7, 5);
    assert!(max_error(&got, &r.corners) < 0.1);
    // Along a row the board x axis now runs vertically in the image.
    let step = got[1] - got[0];
    assert!(step.y.abs() > 5.0 * step.x.abs());
}

#[test]
fn canonicalize_is_idempotent_and_order_free() {
    let s = spec(7, 5, 0.12);
    let r = render(7, 5, 3.0, 20.0, 10.0);
    let raw = detect_corners(&r.image, &s).unwrap();
    let once = canonicalize_order(&raw, &s, &r.image).unwrap();
    let twice = canonicalize_order(&once, &s, &r.image).unwrap();
    assert_eq!(once, twice);
    let reversed = CornerSet2D {
        corners: raw.corners.iter().rev().copied().collect(),
        canonical: false,
    };
    assert_eq!(canonicalize_order(&reversed, &s, &r.image).unwrap(), once);
}

#[test]
fn canonicalize_rejects_wrong_count() {
    let s = spec(7, 5, 0.12);
    let r = render(7, 5, 3.0, 0.0, 0.0);
    let short = CornerSet2D {
        corners: r.corners[..34].to_vec(),
        canonical: false,
    };
    assert!(matches!(
        canonicalize_order(&short, &s, &r.image),
        Err(Error::DimensionMismatch { expected: 35, got: 34 })
    ));
}

#[test]
fn affine_intensity_change_leaves_corners() {
    let r = render(7, 5, 2.5, 15.0, 0.0);
    let mut dim = r.image.clone();
    for p in dim.pixels.iter_mut() {
        *p = 0.6 * *p + 0.2;
    }
    let a = detect_canonical(&r.image, 7, 5);
    let b = detect_canonical(&dim, 7, 5);
    assert!(max_error(&a, &b) < 0.1);
}

#[test]
fn external_corner_files() {
    let s = spec(7, 5, 0.12);
    let dir = tempfile::tempdir().unwrap();
    let corners: Vec<Vector2<f64>> = (0..35)
        .map(|k| Vector2::new(100.0 + k as f64 * 1.000000000000123, 0.1 + 7.0 / 3.0 * k as f64))
        .collect();
    let set = CornerSet2D {
        corners: corners.clone(),
        canonical: false,
    };
    let p35 = dir.path().join("c35.txt");
    save_corners(&p35, &set).unwrap();
    let back = load_external_corners(&p35, &s).unwrap();
    assert_eq!(back.corners, corners);
    assert!(!back.canonical);

    let p34 = dir.path().join("c34.txt");
    save_corners(
        &p34,
        &CornerSet2D {
            corners: corners[..34].to_vec(),
            canonical: false,
        },
    )
    .unwrap();
    assert!(matches!(
        load_external_corners(&p34, &s),
        Err(Error::DimensionMismatch { expected: 35, got: 34 })
    ));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "# header\n1 2\n3 x\n").unwrap();
    assert!(matches!(load_external_corners(&bad, &s), Err(Error::Parse { .. })));
}
