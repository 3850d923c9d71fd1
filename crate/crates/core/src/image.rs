//! Row-major grayscale images with values in [0, 1]. Pixel `(u, v)` has its
//! center at integer coordinates, `u` to the right and `v` down.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.pixels[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.pixels[v * self.width + u] = value;
    }

    /// Bilinear interpolation between pixel centers; `None` outside the
    /// convex hull of the centers.
    pub fn bilinear(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (w, h) = (self.width as f64, self.height as f64);
        if u > w - 1.0 || v > h - 1.0 {
            return None;
        }
        let u0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let v0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let (fu, fv) = (u - u0 as f64, v - v0 as f64);
        let u1 = (u0 + 1).min(self.width - 1);
        let v1 = (v0 + 1).min(self.height - 1);
        let top = self.get(u0, v0) * (1.0 - fu) + self.get(u1, v0) * fu;
        let bottom = self.get(u0, v1) * (1.0 - fu) + self.get(u1, v1) * fu;
        Some(top * (1.0 - fv) + bottom * fv)
    }

    /// Separable Gaussian blur with clamped borders.
    pub fn gaussian_blur(&self, sigma: f64) -> GrayImage {
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
        let (w, h) = (self.width as isize, self.height as isize);
        let mut tmp = vec![0.0; self.pixels.len()];
        for v in 0..h {
            let row = &self.pixels[(v * w) as usize..((v + 1) * w) as usize];
            for u in 0..w {
                let mut s = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let x = (u + k as isize - radius).clamp(0, w - 1);
                    s += kv * row[x as usize];
                }
                tmp[(v * w + u) as usize] = s;
            }
        }
        let mut out = vec![0.0; self.pixels.len()];
        for v in 0..h {
            for u in 0..w {
                let mut s = 0.0;
                for (k, kv) in kernel.iter().enumerate() {
                    let y = (v + k as isize - radius).clamp(0, h - 1);
                    s += kv * tmp[(y * w + u) as usize];
                }
                out[(v * w + u) as usize] = s;
            }
        }
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: out,
        }
    }

    /// Values quantized to `levels` equal steps, as an 8-bit store would do.
    pub fn quantized(&self, levels: u32) -> GrayImage {
        let m = levels as f64;
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| (p.clamp(0.0, 1.0) * m).round() / m)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_nodes_and_midpoints() {
        let img = GrayImage::from_pixels(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        assert_eq!(img.bilinear(1.0, 0.0), Some(1.0));
        assert_eq!(img.bilinear(0.5, 0.0), Some(0.5));
        assert_eq!(img.bilinear(0.5, 0.5), Some(0.4375));
        assert_eq!(img.bilinear(1.5, 0.0), None);
    }

    #[test]
    fn blur_preserves_constant() {
        let img = GrayImage::new(9, 7, 0.3);
        let b = img.gaussian_blur(1.5);
        assert!(b.pixels.iter().all(|p| (p - 0.3).abs() < 1e-12));
    }

    #[test]
    fn size_checked() {
        assert!(GrayImage::from_pixels(3, 3, vec![0.0; 8]).is_err());
    }
}
