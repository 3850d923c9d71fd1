//! Inner-corner detection in camera images and the canonical corner order
//! shared with the LiDAR side.
//!
//! Detection: saddle response `max(0, −det H)` of the Gaussian-smoothed
//! image, non-maximum suppression, lattice growth from strong seeds, a
//! homography consistency check, then sub-pixel peaks from iterated 5×5
//! quadratic fits of the response.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::CheckerboardSpec;
use crate::image::GrayImage;
use crate::spatial::KdTree;

#[derive(Debug, Clone, PartialEq)]
pub struct CornerSet2D {
    pub corners: Vec<Vector2<f64>>,
    /// Row-major from the lower-left, rows along `n_w`.
    pub canonical: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner2dParams {
    /// Smallest smoothing scale, pixels.
    pub min_sigma: f64,
    /// Peaks below this fraction of the strongest response are ignored.
    pub relative_threshold: f64,
    /// Largest lattice-to-pixel homography residual, as a fraction of the
    /// local cell size.
    pub homography_tolerance: f64,
    pub max_seeds: usize,
}

impl Default for Corner2dParams {
    fn default() -> Self {
        Self {
            min_sigma: 1.5,
            relative_threshold: 0.05,
            homography_tolerance: 0.15,
            max_seeds: 12,
        }
    }
}

/// Saddle response of the image smoothed at scale `sigma`, with the
/// Hessian taken by central differences.
pub fn saddle_response(image: &GrayImage, sigma: f64) -> GrayImage {
    let b = image.gaussian_blur(sigma);
    let (w, h) = (image.width, image.height);
    let mut out = GrayImage::new(w, h, 0.0);
    if w < 3 || h < 3 {
        return out;
    }
    for v in 1..h - 1 {
        for u in 1..w - 1 {
            let c = b.get(u, v);
            let ixx = b.get(u + 1, v) - 2.0 * c + b.get(u - 1, v);
            let iyy = b.get(u, v + 1) - 2.0 * c + b.get(u, v - 1);
            let ixy = (b.get(u + 1, v + 1) - b.get(u + 1, v - 1) - b.get(u - 1, v + 1)
                + b.get(u - 1, v - 1))
                / 4.0;
            out.set(u, v, (ixy * ixy - ixx * iyy).max(0.0));
        }
    }
    out
}

/// Saddle response at an arbitrary sub-pixel position, from sampled
/// Gaussian second-derivative kernels on the raw image.
pub fn saddle_response_at(image: &GrayImage, u: f64, v: f64, sigma: f64) -> f64 {
    let r = (4.0 * sigma).ceil() as isize;
    let (u0, v0) = (u.round() as isize, v.round() as isize);
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    let (mut hxx, mut hyy, mut hxy) = (0.0, 0.0, 0.0);
    let (w, h) = (image.width as isize, image.height as isize);
    for y in v0 - r..=v0 + r {
        let yc = y.clamp(0, h - 1) as usize;
        let dy = y as f64 - v;
        for x in u0 - r..=u0 + r {
            let xc = x.clamp(0, w - 1) as usize;
            let dx = x as f64 - u;
            let g = (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
            let i = image.get(xc, yc) * g;
            hxx += i * (dx * dx / s4 - 1.0 / s2);
            hyy += i * (dy * dy / s4 - 1.0 / s2);
            hxy += i * dx * dy / s4;
        }
    }
    (hxy * hxy - hxx * hyy).max(0.0)
}

/// Local maxima of `response` within a `(2r+1)²` window, strongest first.
fn non_maximum_suppression(response: &GrayImage, radius: usize, threshold: f64) -> Vec<(usize, usize, f64)> {
    let (w, h) = (response.width, response.height);
    let mut peaks = Vec::new();
    for v in radius..h.saturating_sub(radius) {
        for u in radius..w.saturating_sub(radius) {
            let c = response.get(u, v);
            if c <= threshold {
                continue;
            }
            let mut is_max = true;
            'win: for y in v - radius..=v + radius {
                for x in u - radius..=u + radius {
                    if (x, y) == (u, v) {
                        continue;
                    }
                    let o = response.get(x, y);
                    // Ties go to the earliest pixel in row-major order.
                    if o > c || (o == c && (y, x) < (v, u)) {
                        is_max = false;
                        break 'win;
                    }
                }
            }
            if is_max {
                peaks.push((u, v, c));
            }
        }
    }
    peaks.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.1, a.0).cmp(&(b.1, b.0))));
    peaks
}

/// Planar homography mapping `src` to `dst` by normalized DLT.
pub fn fit_homography(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    if src.len() < 4 || src.len() != dst.len() {
        return None;
    }
    let norm = |pts: &[Vector2<f64>]| {
        let n = pts.len() as f64;
        let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
        let d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
        let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
        Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
    };
    let (ts, td) = (norm(src), norm(dst));
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (k, (p, q)) in src.iter().zip(dst).enumerate() {
        let p = ts * Vector3::new(p.x, p.y, 1.0);
        let q = td * Vector3::new(q.x, q.y, 1.0);
        let (x, y) = (p.x / p.z, p.y / p.z);
        let (u, v) = (q.x / q.z, q.y / q.z);
        a.row_mut(2 * k)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(2 * k + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let k = eig.eigenvalues.imin();
    let hvec = eig.eigenvectors.column(k);
    let hn = Matrix3::new(
        hvec[0], hvec[1], hvec[2], hvec[3], hvec[4], hvec[5], hvec[6], hvec[7], hvec[8],
    );
    let h = td.try_inverse()? * hn * ts;
    let scale = h[(2, 2)];
    if !(scale.abs() > 1e-15) {
        return None;
    }
    Some(h / scale)
}

pub fn apply_homography(h: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    Vector2::new(q.x / q.z, q.y / q.z)
}

/// Lattice of peaks around a seed, keyed by integer grid coordinates.
fn grow_lattice(points: &[Vector2<f64>], tree: &KdTree, seed: usize) -> HashMap<(i32, i32), usize> {
    let mut grid = HashMap::new();
    let nn = tree.knn(&Vector3::new(points[seed].x, points[seed].y, 0.0), 8, Some(seed));
    let Some(first) = nn.first() else {
        return grid;
    };
    let a = points[first.index] - points[seed];
    let b = nn.iter().skip(1).map(|n| points[n.index] - points[seed]).find(|v| {
        let c = v.dot(&a) / (v.norm() * a.norm());
        c.abs() < std::f64::consts::FRAC_1_SQRT_2 && v.norm() < 2.0 * a.norm()
    });
    let Some(b) = b else {
        return grid;
    };
    let mut owner: HashMap<usize, (i32, i32)> = HashMap::new();
    grid.insert((0, 0), seed);
    owner.insert(seed, (0, 0));
    let mut queue = VecDeque::from([(0i32, 0i32)]);
    while let Some((i, j)) = queue.pop_front() {
        let p = points[grid[&(i, j)]];
        let step = |di: i32, dj: i32, fallback: Vector2<f64>| -> Vector2<f64> {
            if let Some(&q) = grid.get(&(i - di, j - dj)) {
                return p - points[q];
            }
            if let Some(&q) = grid.get(&(i + di, j + dj)) {
                return points[q] - p;
            }
            fallback
        };
        let sx = step(1, 0, a);
        let sy = step(0, 1, b);
        for (di, dj, d) in [(1, 0, sx), (-1, 0, -sx), (0, 1, sy), (0, -1, -sy)] {
            let key = (i + di, j + dj);
            if grid.contains_key(&key) {
                continue;
            }
            let pred = p + d;
            let hits = tree.within_radius(&Vector3::new(pred.x, pred.y, 0.0), 0.35 * d.norm());
            let best = hits
                .into_iter()
                .filter(|k| !owner.contains_key(k))
                .min_by(|&x, &y| {
                    (points[x] - pred)
                        .norm_squared()
                        .total_cmp(&(points[y] - pred).norm_squared())
                        .then(x.cmp(&y))
                });
            if let Some(k) = best {
                grid.insert(key, k);
                owner.insert(k, key);
                queue.push_back(key);
            }
        }
    }
    grid
}

/// Grid-consistent corners in lattice row-major order, with the window
/// shape `(cols, rows)`.
struct LatticeWindow {
    corners: Vec<Vector2<f64>>,
    cols: usize,
}

/// Best fully populated `n_w × n_h` (or transposed) window of a grown
/// lattice by total response.
fn select_window(
    grid: &HashMap<(i32, i32), usize>,
    points: &[Vector2<f64>],
    strength: &[f64],
    spec: &CheckerboardSpec,
) -> Option<LatticeWindow> {
    let (imin, imax) = grid.keys().fold((i32::MAX, i32::MIN), |(a, b), k| (a.min(k.0), b.max(k.0)));
    let (jmin, jmax) = grid.keys().fold((i32::MAX, i32::MIN), |(a, b), k| (a.min(k.1), b.max(k.1)));
    let mut best: Option<(f64, i32, i32, usize, usize)> = None;
    let mut shapes = vec![(spec.n_w, spec.n_h)];
    if spec.n_w != spec.n_h {
        shapes.push((spec.n_h, spec.n_w));
    }
    for (cols, rows) in shapes {
        for j0 in jmin..=jmax - rows as i32 + 1 {
            for i0 in imin..=imax - cols as i32 + 1 {
                let mut total = 0.0;
                let mut full = true;
                'cells: for j in 0..rows as i32 {
                    for i in 0..cols as i32 {
                        match grid.get(&(i0 + i, j0 + j)) {
                            Some(&k) => total += strength[k],
                            None => {
                                full = false;
                                break 'cells;
                            }
                        }
                    }
                }
                if full && best.is_none_or(|b| total > b.0) {
                    best = Some((total, i0, j0, cols, rows));
                }
            }
        }
    }
    let (_, i0, j0, cols, rows) = best?;
    let mut corners = Vec::with_capacity(cols * rows);
    for j in 0..rows as i32 {
        for i in 0..cols as i32 {
            corners.push(points[grid[&(i0 + i, j0 + j)]]);
        }
    }
    Some(LatticeWindow { corners, cols })
}

/// Lattice coordinates of a row-major grid with `cols` columns.
fn lattice_coords(n: usize, cols: usize) -> Vec<Vector2<f64>> {
    (0..n)
        .map(|k| Vector2::new((k % cols) as f64, (k / cols) as f64))
        .collect()
}

/// Largest homography residual relative to the mean spacing.
fn homography_residual(corners: &[Vector2<f64>], cols: usize) -> Option<(Matrix3<f64>, f64)> {
    let lat = lattice_coords(corners.len(), cols);
    let h = fit_homography(&lat, corners)?;
    let mut worst = 0.0f64;
    for (l, c) in lat.iter().zip(corners) {
        let p = apply_homography(&h, l);
        let local = (apply_homography(&h, &(l + Vector2::new(1.0, 0.0))) - p)
            .norm()
            .min((apply_homography(&h, &(l + Vector2::new(0.0, 1.0))) - p).norm());
        worst = worst.max((p - c).norm() / local);
    }
    Some((h, worst))
}

/// Sub-pixel response peak by re-centred quadratic fits over a 5×5 sample
/// window; a symmetric peak is a fixed point of the iteration.
fn refine_peak(image: &GrayImage, start: Vector2<f64>, sigma: f64) -> Option<Vector2<f64>> {
    // Normal matrix of the 6-term quadratic over the fixed 5×5 design.
    let offsets: Vec<(f64, f64)> = (-2..=2)
        .flat_map(|y| (-2..=2).map(move |x| (x as f64, y as f64)))
        .collect();
    let row = |x: f64, y: f64| Vector6::new(1.0, x, y, x * x, x * y, y * y);
    let mut ata = Matrix6::zeros();
    for &(x, y) in &offsets {
        let r = row(x, y);
        ata += r * r.transpose();
    }
    let inv = ata.try_inverse()?;
    let mut p = start;
    for _ in 0..20 {
        let mut atb = Vector6::zeros();
        for &(x, y) in &offsets {
            atb += row(x, y) * saddle_response_at(image, p.x + x, p.y + y, sigma);
        }
        let c = inv * atb;
        let m = nalgebra::Matrix2::new(2.0 * c[3], c[4], c[4], 2.0 * c[5]);
        if !(m.determinant() > 0.0 && m[(0, 0)] < 0.0) {
            return None;
        }
        let step = m.try_inverse()? * -Vector2::new(c[1], c[2]);
        let step = if step.norm() > 1.0 { step / step.norm() } else { step };
        p += step;
        if (p - start).norm() > 3.0 {
            return None;
        }
        if step.norm() < 1e-4 {
            break;
        }
    }
    Some(p)
}

fn detect_at_scale(
    image: &GrayImage,
    spec: &CheckerboardSpec,
    sigma: f64,
    params: &Corner2dParams,
) -> Result<LatticeWindow> {
    let n = spec.corner_count();
    let response = saddle_response(image, sigma);
    let peak = response.pixels.iter().cloned().fold(0.0, f64::max);
    if !(peak > 1e-12) {
        return Err(Error::BoardNotFound("no saddle response".into()));
    }
    let radius = (sigma.round() as usize).max(2);
    let mut peaks = non_maximum_suppression(&response, radius, params.relative_threshold * peak);
    peaks.truncate(4 * n + 64);
    if peaks.len() < n {
        return Err(Error::BoardNotFound(format!(
            "{} saddle candidates, need {n}",
            peaks.len()
        )));
    }
    let points: Vec<Vector2<f64>> = peaks.iter().map(|p| Vector2::new(p.0 as f64, p.1 as f64)).collect();
    let strength: Vec<f64> = peaks.iter().map(|p| p.2).collect();
    let tree = KdTree::new(points.iter().map(|p| Vector3::new(p.x, p.y, 0.0)).collect());
    for seed in 0..params.max_seeds.min(points.len()) {
        let grid = grow_lattice(&points, &tree, seed);
        if grid.len() < n {
            continue;
        }
        let Some(win) = select_window(&grid, &points, &strength, spec) else {
            continue;
        };
        match homography_residual(&win.corners, win.cols) {
            Some((_, r)) if r <= params.homography_tolerance => return Ok(win),
            _ => continue,
        }
    }
    Err(Error::BoardNotFound(format!(
        "no consistent {}x{} corner grid",
        spec.n_w, spec.n_h
    )))
}

/// Inner corners of a fully visible board, in a grid-consistent but not yet
/// canonical order.
pub fn detect_corners(image: &GrayImage, spec: &CheckerboardSpec) -> Result<CornerSet2D> {
    detect_corners_with(image, spec, &Corner2dParams::default())
}

pub fn detect_corners_with(
    image: &GrayImage,
    spec: &CheckerboardSpec,
    params: &Corner2dParams,
) -> Result<CornerSet2D> {
    spec.validate()?;
    let mut sigma = params.min_sigma;
    let mut win = detect_at_scale(image, spec, sigma, params)?;
    let cell = mean_spacing(&win.corners, win.cols);
    let adapted = (cell / 10.0).max(params.min_sigma);
    if adapted > sigma * 1.05 {
        if let Ok(w) = detect_at_scale(image, spec, adapted, params) {
            win = w;
            sigma = adapted;
        }
    }
    let corners = win
        .corners
        .iter()
        .map(|c| {
            refine_peak(image, *c, sigma).ok_or_else(|| {
                Error::BoardNotFound(format!("sub-pixel fit failed near ({}, {})", c.x, c.y))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CornerSet2D {
        corners,
        canonical: false,
    })
}

fn mean_spacing(corners: &[Vector2<f64>], cols: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, c) in corners.iter().enumerate() {
        if k % cols + 1 < cols {
            sum += (corners[k + 1] - c).norm();
            count += 1;
        }
        if k + cols < corners.len() {
            sum += (corners[k + cols] - c).norm();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Puts grid-consistent corners (row-major over either axis) into canonical
/// order: rows along the `n_w` direction, handedness such that board "up"
/// points up in the image, starting corner chosen by the lower-left cell
/// colour when `n_w + n_h` is odd and by the lower-left-most board corner
/// (largest `v − u`) otherwise.
pub fn canonicalize_order(corners: &CornerSet2D, spec: &CheckerboardSpec, image: &GrayImage) -> Result<CornerSet2D> {
    let n = spec.corner_count();
    if corners.corners.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: corners.corners.len(),
        });
    }
    // Recover the grid shape from the given order.
    let mut shapes = vec![spec.n_w];
    if spec.n_h != spec.n_w {
        shapes.push(spec.n_h);
    }
    let (cols, h) = shapes
        .into_iter()
        .filter_map(|cols| homography_residual(&corners.corners, cols).map(|(h, r)| (r, cols, h)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .filter(|(r, _, _)| *r < 0.25)
        .map(|(_, c, h)| (c, h))
        .ok_or_else(|| Error::InvalidInput("corners are not grid-consistent".into()))?;
    let rows = n / cols;
    let at = |i: f64, j: f64| apply_homography(&h, &Vector2::new(i, j));
    let ax_i = at(1.0, 0.0) - at(0.0, 0.0);
    let ax_j = at(0.0, 1.0) - at(0.0, 0.0);
    // Which lattice axis runs along n_w.
    let i_is_x = if spec.n_w != spec.n_h {
        cols == spec.n_w
    } else {
        ax_i.x.abs() / ax_i.norm() >= ax_j.x.abs() / ax_j.norm()
    };
    // Lattice coordinates of board corner (x, y) for an orientation with
    // axis signs (sx, sy); extrapolates linearly outside the grid.
    let (ci, cj) = (cols as f64 - 1.0, rows as f64 - 1.0);
    let to_lattice = |x: f64, y: f64, sx: f64, sy: f64| -> (f64, f64) {
        if i_is_x {
            (if sx > 0.0 { x } else { ci - x }, if sy > 0.0 { y } else { cj - y })
        } else {
            (if sy > 0.0 { y } else { ci - y }, if sx > 0.0 { x } else { cj - x })
        }
    };
    let mut candidates = Vec::new();
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            let (ox, oy) = to_lattice(0.0, 0.0, sx, sy);
            let (xx, xy) = to_lattice(1.0, 0.0, sx, sy);
            let (yx, yy) = to_lattice(0.0, 1.0, sx, sy);
            let a_x = at(xx, xy) - at(ox, oy);
            let a_y = at(yx, yy) - at(ox, oy);
            if a_x.x * a_y.y - a_x.y * a_y.x < 0.0 {
                candidates.push((sx, sy));
            }
        }
    }
    if candidates.len() != 2 {
        return Err(Error::InvalidInput("cannot orient corner grid".into()));
    }
    // Board-coordinate point (x, y) in corner units, origin at the first
    // inner corner, mapped to pixels for a candidate.
    let board_px = |x: f64, y: f64, (sx, sy): (f64, f64)| -> Vector2<f64> {
        let (lx, ly) = to_lattice(x, y, sx, sy);
        at(lx, ly)
    };
    let choice = if spec.parity_breaks_half_turn() {
        // Threshold every cell center against the grid-wide median.
        let mut samples = Vec::new();
        for j in 0..=spec.n_h {
            for i in 0..=spec.n_w {
                let p = board_px(i as f64 - 0.5, j as f64 - 0.5, candidates[0]);
                if let Some(val) = image.bilinear(p.x, p.y) {
                    samples.push(val);
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("cell centers fall outside the image".into()));
        }
        samples.sort_by(f64::total_cmp);
        let median = samples[samples.len() / 2];
        let ll = board_px(-0.5, -0.5, candidates[0]);
        let dark = image
            .bilinear(ll.x, ll.y)
            .ok_or_else(|| Error::InvalidInput("lower-left cell outside the image".into()))?
            < median;
        if dark {
            candidates[0]
        } else {
            candidates[1]
        }
    } else {
        let score = |c: (f64, f64)| {
            let p = board_px(-1.0, -1.0, c);
            p.y - p.x
        };
        if score(candidates[0]) >= score(candidates[1]) {
            candidates[0]
        } else {
            candidates[1]
        }
    };
    let mut out = Vec::with_capacity(n);
    for y in 0..spec.n_h {
        for x in 0..spec.n_w {
            let (lx, ly) = to_lattice(x as f64, y as f64, choice.0, choice.1);
            out.push(corners.corners[ly.round() as usize * cols + lx.round() as usize]);
        }
    }
    Ok(CornerSet2D {
        corners: out,
        canonical: true,
    })
}

/// Reads "u v" lines; blank lines and `#` comments are skipped.
pub fn load_external_corners(path: &Path, spec: &CheckerboardSpec) -> Result<CornerSet2D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corners = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
        if vals.len() != 2 || !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::parse(path, format!("line {}: expected \"u v\"", lineno + 1)));
        }
        corners.push(Vector2::new(vals[0], vals[1]));
    }
    if corners.len() != spec.corner_count() {
        return Err(Error::DimensionMismatch {
            expected: spec.corner_count(),
            got: corners.len(),
        });
    }
    Ok(CornerSet2D {
        corners,
        canonical: false,
    })
}

/// Writes "u v" lines with shortest round-trip formatting.
pub fn save_corners(path: &Path, corners: &CornerSet2D) -> Result<()> {
    let mut s = String::new();
    for c in &corners.corners {
        s.push_str(&format!("{} {}\n", c.x, c.y));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
