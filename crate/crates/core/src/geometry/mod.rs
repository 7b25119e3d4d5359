//! Silhouette border extraction and dominant-point contour approximation.

mod approx;
mod components;
mod raster;
mod trace;

pub use approx::{approximate_dominant_points, ApproxConfig, SignificanceMeasure};
pub use components::{fill_holes, select_largest_component};
pub use raster::{fill_polygon, mask_iou};
pub use trace::trace_border;

use crate::error::{Error, Result};

/// Integer pixel coordinate; x grows right, y grows down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub x: i32,
    pub y: i32,
}

impl Pixel {
    pub const fn new(x: i32, y: i32) -> Self {
        Pixel { x, y }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Pixel::new(self.x + dx, self.y + dy)
    }

    pub fn is_8_adjacent(self, other: Pixel) -> bool {
        self != other && (self.x - other.x).abs() <= 1 && (self.y - other.y).abs() <= 1
    }

    pub fn to_f64(self) -> [f64; 2] {
        [self.x as f64, self.y as f64]
    }
}

/// One binary silhouette mask (1 = foreground), row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SilhouetteFrame {
    height: usize,
    width: usize,
    mask: Vec<u8>,
}

impl SilhouetteFrame {
    pub fn new(height: usize, width: usize, mask: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty frame {height}x{width}")));
        }
        if mask.len() != height * width {
            return Err(Error::shape(format!(
                "mask of {} values for a {height}x{width} frame",
                mask.len()
            )));
        }
        if mask.iter().any(|&v| v > 1) {
            return Err(Error::format("mask", "values must be 0 or 1"));
        }
        Ok(SilhouetteFrame { height, width, mask })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        SilhouetteFrame {
            height,
            width,
            mask: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut mask = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                mask.push(f(x, y) as u8);
            }
        }
        SilhouetteFrame { height, width, mask }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.mask[y * self.width + x] = on as u8;
    }

    /// Out-of-frame pixels read as background.
    pub fn is_foreground(&self, p: Pixel) -> bool {
        p.x >= 0
            && p.y >= 0
            && (p.x as usize) < self.width
            && (p.y as usize) < self.height
            && self.get(p.x as usize, p.y as usize)
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&v| v != 0).count()
    }

    /// Copy shifted by `(dx, dy)`; pixels moved out of frame are dropped.
    pub fn translated(&self, dx: i32, dy: i32) -> Self {
        let mut out = SilhouetteFrame::empty(self.height, self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let (nx, ny) = (x as i64 + dx as i64, y as i64 + dy as i64);
                if nx >= 0 && ny >= 0 && (nx as usize) < self.width && (ny as usize) < self.height {
                    out.set(nx as usize, ny as usize, true);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Clockwise as displayed, i.e. with y growing downward.
    Clockwise,
}

/// Closed outer border of a foreground component, traversed clockwise.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClosedContour {
    pub points: Vec<Pixel>,
    pub orientation: Orientation,
}

impl ClosedContour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Twice the signed shoelace area in image coordinates; positive for a
    /// clockwise traversal as displayed.
    pub fn signed_area2(&self) -> i64 {
        signed_area2(&self.points)
    }
}

pub(crate) fn signed_area2(points: &[Pixel]) -> i64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a.x as i64 * b.y as i64 - b.x as i64 * a.y as i64
        })
        .sum()
}

/// Dominant points of a border: a cyclic-order-preserving subsequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ApproxContour {
    pub points: Vec<Pixel>,
    /// Position of every point in the source border.
    pub source_indices: Vec<usize>,
    pub source_len: usize,
}

impl ApproxContour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points_f64(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(|p| p.to_f64()).collect()
    }
}
