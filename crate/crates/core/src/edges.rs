//! Sobel gradients and sparse strong edge points.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Percentile of the nonzero gradient magnitudes used as the strong-edge threshold.
pub const MAGNITUDE_PERCENTILE: f64 = 0.9;
/// Lower bound of the strong-edge threshold, in 8-bit Sobel units.
pub const MAGNITUDE_FLOOR: f64 = 40.0;
/// Side of the sparsification cell, in pixels.
pub const SPARSE_WINDOW: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgePoint {
    pub u: f64,
    pub v: f64,
    pub magnitude: f64,
    /// Gradient direction (normal to the contour) in `[−π, π)`.
    pub direction: f64,
}

/// Per-pixel Sobel response. The one-pixel frame is zero.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<f64>,
    gy: Vec<f64>,
    magnitude: Vec<f64>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn gx(&self, x: usize, y: usize) -> f64 {
        self.gx[y * self.width + x]
    }

    pub fn gy(&self, x: usize, y: usize) -> f64 {
        self.gy[y * self.width + x]
    }

    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        self.magnitude[y * self.width + x]
    }

    pub fn direction(&self, x: usize, y: usize) -> f64 {
        wrap_direction(self.gy(x, y).atan2(self.gx(x, y)))
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitude
    }

    /// Bilinearly interpolated magnitude, `None` outside the interior where all
    /// four neighbours are available.
    pub fn magnitude_at(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            return None;
        }
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let m = |xx, yy| self.magnitude(xx, yy);
        let top = m(x0, y0) * (1.0 - fx) + m(x0 + 1, y0) * fx;
        let bottom = m(x0, y0 + 1) * (1.0 - fx) + m(x0 + 1, y0 + 1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }
}

fn wrap_direction(a: f64) -> f64 {
    if a >= PI {
        a - 2.0 * PI
    } else {
        a
    }
}

pub fn sobel(img: &GrayImage) -> Result<GradientField> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall { width: w, height: h });
    }
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    let mut magnitude = vec![0.0; w * h];
    let p = |x: usize, y: usize| img.get(x, y) as i32;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let dx = (p(x + 1, y - 1) + 2 * p(x + 1, y) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2 * p(x - 1, y) + p(x - 1, y + 1));
            let dy = (p(x - 1, y + 1) + 2 * p(x, y + 1) + p(x + 1, y + 1))
                - (p(x - 1, y - 1) + 2 * p(x, y - 1) + p(x + 1, y - 1));
            let i = y * w + x;
            gx[i] = dx as f64;
            gy[i] = dy as f64;
            magnitude[i] = (dx as f64).hypot(dy as f64);
        }
    }
    Ok(GradientField { width: w, height: h, gx, gy, magnitude })
}

/// `max(floor, nearest-rank 90th percentile of nonzero magnitudes)`.
pub fn magnitude_threshold(field: &GradientField) -> f64 {
    let mut nonzero: Vec<f64> = field.magnitudes().iter().copied().filter(|&m| m > 0.0).collect();
    if nonzero.is_empty() {
        return MAGNITUDE_FLOOR;
    }
    nonzero.sort_by(f64::total_cmp);
    let rank = ((MAGNITUDE_PERCENTILE * nonzero.len() as f64).ceil() as usize).max(1);
    nonzero[rank - 1].max(MAGNITUDE_FLOOR)
}

/// Strong points at or above `threshold`, thinned to the strongest per
/// `SPARSE_WINDOW × SPARSE_WINDOW` cell. Sorted by `(v, u)`.
pub fn extract_strong_points_with(field: &GradientField, threshold: f64) -> Result<Vec<EdgePoint>> {
    let cells_x = field.width().div_ceil(SPARSE_WINDOW);
    let cells_y = field.height().div_ceil(SPARSE_WINDOW);
    let mut best: Vec<Option<(usize, usize)>> = vec![None; cells_x * cells_y];
    for y in 0..field.height() {
        for x in 0..field.width() {
            let m = field.magnitude(x, y);
            if !(m >= threshold) || m == 0.0 {
                continue;
            }
            let cell = (y / SPARSE_WINDOW) * cells_x + x / SPARSE_WINDOW;
            // Scan order makes the earliest (v, u) win ties.
            match best[cell] {
                Some((bx, by)) if field.magnitude(bx, by) >= m => {}
                _ => best[cell] = Some((x, y)),
            }
        }
    }
    let mut points: Vec<EdgePoint> = best
        .into_iter()
        .flatten()
        .map(|(x, y)| EdgePoint {
            u: x as f64,
            v: y as f64,
            magnitude: field.magnitude(x, y),
            direction: field.direction(x, y),
        })
        .collect();
    if points.is_empty() {
        return Err(Error::NoEdges);
    }
    points.sort_by(|a, b| a.v.total_cmp(&b.v).then(a.u.total_cmp(&b.u)));
    Ok(points)
}

pub fn extract_strong_points(field: &GradientField) -> Result<Vec<EdgePoint>> {
    extract_strong_points_with(field, magnitude_threshold(field))
}

/// Gradient field, threshold and strong points of one image.
#[derive(Debug, Clone)]
pub struct EdgeMap {
    pub gradient: GradientField,
    pub threshold: f64,
    pub points: Vec<EdgePoint>,
}

impl EdgeMap {
    pub fn compute(img: &GrayImage) -> Result<Self> {
        let gradient = sobel(img)?;
        let threshold = magnitude_threshold(&gradient);
        let points = extract_strong_points_with(&gradient, threshold)?;
        Ok(Self { gradient, threshold, points })
    }
}
