//! 2D rasters on the normalized slab domain `[-1, 1]^2`.
//!
//! Pixel `(i, j)` (column, row) sits at `(index_to_norm(i, w), index_to_norm(j, h))`.
//! The first normalized coordinate maps to canonical x, the second to canonical z.

use crate::error::{Error, Result};
use crate::geometry::{index_to_norm, norm_to_index};

/// Coordinate value marking background pixels of a coordinate map. It lies
/// outside `[-1, 1]^3`, so accidental inclusion in a fit is detectable.
pub const SENTINEL: [f64; 3] = [-2.0, -2.0, -2.0];

#[inline]
pub fn is_sentinel(c: &[f64; 3]) -> bool {
    *c == SENTINEL
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type Image2D = Grid2<f64>;
pub type Mask = Grid2<bool>;
pub type LabelImage = Grid2<u32>;
pub type CoordMap2D = Grid2<[f64; 3]>;

impl<T: Clone> Grid2<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimMismatch(format!(
                "{}x{} grid needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: T) {
        self.data[j * self.width + i] = value;
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn same_dims<U>(&self, other: &Grid2<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid2<U> {
        Grid2 {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Sub-window starting at `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self::from_fn(w, h, |i, j| self.get(x0 + i, y0 + j).clone())
    }

    /// Normalized coordinate of pixel `(i, j)`.
    #[inline]
    pub fn pixel_norm(&self, i: usize, j: usize) -> [f64; 2] {
        [index_to_norm(i, self.width), index_to_norm(j, self.height)]
    }

    /// Continuous pixel index of a normalized coordinate.
    #[inline]
    pub fn norm_to_pixel(&self, uv: [f64; 2]) -> [f64; 2] {
        [norm_to_index(uv[0], self.width), norm_to_index(uv[1], self.height)]
    }

    fn nearest_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = x.round();
        let j = y.round();
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 || !i.is_finite() || !j.is_finite() {
            return None;
        }
        Some((i as usize, j as usize))
    }

    /// Nearest pixel at continuous pixel position `(x, y)`, `None` outside.
    pub fn nearest_px(&self, x: f64, y: f64) -> Option<&T> {
        self.nearest_index(x, y).map(|(i, j)| self.get(i, j))
    }
}

/// Bilinear corner set for a continuous pixel position: up to four
/// `(index, weight)` pairs, edge-clamped inside `[-0.5, n - 0.5]`.
fn bilinear_taps(x: f64, y: f64, w: usize, h: usize) -> Option<[(usize, f64); 4]> {
    if !(x >= -0.5 && y >= -0.5 && x <= w as f64 - 0.5 && y <= h as f64 - 0.5) {
        return None;
    }
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = (xc.floor() as usize).min(w.saturating_sub(2));
    let y0 = (yc.floor() as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = if x1 == x0 { 0.0 } else { xc - x0 as f64 };
    let fy = if y1 == y0 { 0.0 } else { yc - y0 as f64 };
    Some([
        (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * w + x1, fx * (1.0 - fy)),
        (y1 * w + x0, (1.0 - fx) * fy),
        (y1 * w + x1, fx * fy),
    ])
}

impl Image2D {
    /// Bilinear sample at continuous pixel position; 0 outside the image.
    pub fn bilinear_px(&self, x: f64, y: f64) -> f64 {
        match bilinear_taps(x, y, self.width, self.height) {
            Some(taps) => taps.iter().map(|&(k, wgt)| wgt * self.data[k]).sum(),
            None => 0.0,
        }
    }

    pub fn bilinear_norm(&self, uv: [f64; 2]) -> f64 {
        let [x, y] = self.norm_to_pixel(uv);
        self.bilinear_px(x, y)
    }
}

impl CoordMap2D {
    pub fn background(width: usize, height: usize) -> Self {
        Self::filled(width, height, SENTINEL)
    }

    /// Bilinear sample where every contributing neighbour holds a valid
    /// coordinate, nearest neighbour otherwise. Sentinel outside the map.
    pub fn sample_px(&self, x: f64, y: f64) -> [f64; 3] {
        let Some(taps) = bilinear_taps(x, y, self.width, self.height) else {
            return SENTINEL;
        };
        let all_valid = taps
            .iter()
            .all(|&(k, wgt)| wgt == 0.0 || !is_sentinel(&self.data[k]));
        if all_valid {
            let mut out = [0.0; 3];
            for &(k, wgt) in &taps {
                if wgt != 0.0 {
                    for c in 0..3 {
                        out[c] += wgt * self.data[k][c];
                    }
                }
            }
            out
        } else {
            self.nearest_px(x, y).copied().unwrap_or(SENTINEL)
        }
    }

    /// Mask of non-sentinel pixels.
    pub fn validity(&self) -> Mask {
        self.map(|c| !is_sentinel(c))
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

impl LabelImage {
    pub fn foreground(&self) -> Mask {
        self.map(|&l| l != 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_midpoint_and_edges() {
        let img = Image2D::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(img.bilinear_px(0.5, 0.0), 0.5);
        assert_eq!(img.bilinear_px(-0.4, 0.0), 0.0);
        assert_eq!(img.bilinear_px(1.4, 0.0), 1.0);
        assert_eq!(img.bilinear_px(2.0, 0.0), 0.0);
        assert_eq!(img.bilinear_norm([0.5, 0.0]), 1.0);
    }

    #[test]
    fn coord_sampling_avoids_sentinel_bleed() {
        let mut c = CoordMap2D::background(2, 1);
        c.set(0, 0, [0.1, 0.2, 0.3]);
        // Half-way to a background pixel falls back to nearest.
        assert_eq!(c.sample_px(0.4, 0.0), [0.1, 0.2, 0.3]);
        assert_eq!(c.sample_px(0.6, 0.0), SENTINEL);
        c.set(1, 0, [0.3, 0.2, 0.1]);
        let mid = c.sample_px(0.5, 0.0);
        assert!((mid[0] - 0.2).abs() < 1e-15 && (mid[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn crop_and_dims() {
        let g = Grid2::from_fn(4, 3, |i, j| (i + 10 * j) as u32);
        let c = g.crop(1, 1, 2, 2);
        assert_eq!(c.data, vec![11, 12, 21, 22]);
        assert!(Grid2::<u8>::from_vec(2, 2, vec![0; 3]).is_err());
    }
}
