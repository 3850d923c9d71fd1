//! On-disk formats: ASCII PLY clouds, binary PGM/PPM images, JSON records,
//! and the per-placement dataset layout.
//!
//! ```text
//! <root>/intrinsics.json
//! <root>/ground_truth.json            (simulated data only)
//! <root>/placement_<id>/frames/frame_<n>.ply
//! <root>/placement_<id>/image.pgm
//! <root>/placement_<id>/corners2d.txt (optional)
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::image::GrayImage;

/// Writes x, y, z, intensity as 32-bit floats in shortest round-trip form.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_ply_with(path, cloud, None)
}

/// PLY with an extra per-point `color` property.
pub fn write_ply_with(path: &Path, cloud: &PointCloud, colors: Option<&[f64]>) -> Result<()> {
    let mut s = String::with_capacity(64 + cloud.len() * 40);
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", cloud.len()));
    for p in ["x", "y", "z", "intensity"] {
        s.push_str(&format!("property float {p}\n"));
    }
    if colors.is_some() {
        s.push_str("property float color\n");
    }
    s.push_str("end_header\n");
    for (k, p) in cloud.points.iter().enumerate() {
        s.push_str(&format!(
            "{} {} {} {}",
            p.x as f32, p.y as f32, p.z as f32, p.intensity as f32
        ));
        if let Some(c) = colors {
            s.push_str(&format!(" {}", c[k] as f32));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads an ASCII PLY whose first four vertex properties are x, y, z and
/// intensity; further properties are ignored.
pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::parse(path, "missing ply magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    let mut ascii = false;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => ascii = true,
            ["format", ..] => return Err(Error::parse(path, "only ascii PLY is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|e| Error::parse(path, e.to_string()))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["property", ..] => {}
            _ => return Err(Error::parse(path, format!("unexpected header line {line:?}"))),
        }
    }
    if !ascii {
        return Err(Error::parse(path, "missing format line"));
    }
    let n = count.ok_or_else(|| Error::parse(path, "missing vertex element"))?;
    if props.len() < 4 || props[..4] != ["x", "y", "z", "intensity"] {
        return Err(Error::parse(path, "vertex properties must begin with x y z intensity"));
    }
    let mut points = Vec::with_capacity(n);
    for (k, line) in lines.take(n).enumerate() {
        let v: Vec<f64> = line
            .split_whitespace()
            .take(4)
            // Declared `float`: parse at that width so written values return exactly.
            .map(|t| t.parse::<f32>().map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("vertex {k}: {e}")))?;
        if v.len() < 4 {
            return Err(Error::parse(path, format!("vertex {k}: too few values")));
        }
        points.push(Point3::new(v[0], v[1], v[2], v[3]));
    }
    if points.len() != n {
        return Err(Error::parse(path, format!("expected {n} vertices, found {}", points.len())));
    }
    Ok(PointCloud::new(points))
}

/// Binary graymap, maxval 255.
pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    buf.extend(image.pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Binary pixmap, maxval 255.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[[u8; 3]]) -> Result<()> {
    if rgb.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: width * height,
            got: rgb.len(),
        });
    }
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    for px in rgb {
        buf.extend_from_slice(px);
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn header_token(data: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

/// Binary graymap with 8- or 16-bit samples, scaled to [0, 1].
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let magic = header_token(&data, &mut pos);
    if magic.as_deref() != Some("P5") {
        return Err(Error::parse(path, "expected binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        header_token(&data, &mut pos)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(path, format!("bad {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if !(1..=65535).contains(&maxval) {
        return Err(Error::parse(path, "maxval must lie in 1..=65535"));
    }
    pos += 1;
    let bytes = if maxval < 256 { 1 } else { 2 };
    let body = data.get(pos..).unwrap_or(&[]);
    if body.len() < w * h * bytes {
        return Err(Error::parse(path, "truncated pixel data"));
    }
    let m = maxval as f64;
    let pixels = (0..w * h)
        .map(|k| {
            let v = if bytes == 1 {
                body[k] as f64
            } else {
                u16::from_be_bytes([body[2 * k], body[2 * k + 1]]) as f64
            };
            v / m
        })
        .collect();
    GrayImage::from_pixels(w, h, pixels)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Paths of the dataset layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn placement_dir(&self, id: usize) -> PathBuf {
        self.root.join(format!("placement_{id}"))
    }

    pub fn frames_dir(&self, id: usize) -> PathBuf {
        self.placement_dir(id).join("frames")
    }

    pub fn frame_path(&self, id: usize, frame: usize) -> PathBuf {
        self.frames_dir(id).join(format!("frame_{frame}.ply"))
    }

    pub fn image_path(&self, id: usize) -> PathBuf {
        self.placement_dir(id).join("image.pgm")
    }

    pub fn corners_path(&self, id: usize) -> PathBuf {
        self.placement_dir(id).join("corners2d.txt")
    }

    pub fn intrinsics_path(&self) -> PathBuf {
        self.root.join("intrinsics.json")
    }

    pub fn ground_truth_path(&self) -> PathBuf {
        self.root.join("ground_truth.json")
    }

    /// Placement ids, which must run contiguously from 0.
    pub fn placements(&self) -> Result<Vec<usize>> {
        let ids = numbered_entries(&self.root, "placement_", "")?;
        check_contiguous(&self.root, &ids, "placement")?;
        Ok(ids)
    }

    /// Frame count of a placement; frame indices must run contiguously
    /// from 0.
    pub fn frame_count(&self, id: usize) -> Result<usize> {
        let dir = self.frames_dir(id);
        let ids = numbered_entries(&dir, "frame_", ".ply")?;
        check_contiguous(&dir, &ids, "frame")?;
        Ok(ids.len())
    }

    pub fn read_frames(&self, id: usize, max_frames: usize) -> Result<Vec<PointCloud>> {
        let n = self.frame_count(id)?.min(max_frames);
        (0..n)
            .map(|k| Ok(read_ply(&self.frame_path(id, k))?.with_frame_id(k as u32)))
            .collect()
    }
}

fn numbered_entries(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<usize>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_suffix(suffix))
            .and_then(|r| r.parse::<usize>().ok())
        {
            ids.push(id);
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

fn check_contiguous(dir: &Path, ids: &[usize], what: &str) -> Result<()> {
    if let Some((k, _)) = ids.iter().enumerate().find(|(k, id)| *k != **id) {
        return Err(Error::InvalidInput(format!(
            "{what} ids in {} are not contiguous from 0 (missing {k})",
            dir.display()
        )));
    }
    Ok(())
}
