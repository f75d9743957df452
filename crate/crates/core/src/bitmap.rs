//! Dense boolean raster used for mask channels.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::geometry::PixelRect;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bitmap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, bits: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(param(format!(
                "bitmap data has {} entries, expected {}x{}",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn row(&self, y: usize) -> &[bool] {
        &self.bits[y * self.width..(y + 1) * self.width]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [bool] {
        &mut self.bits[y * self.width..(y + 1) * self.width]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_dims(&self, other: &Bitmap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copies the sub-rectangle at `(x0, y0)` (local coordinates).
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Bitmap {
        assert!(x0 + width <= self.width && y0 + height <= self.height, "crop out of bounds");
        let mut bits = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            bits.extend_from_slice(&self.row(y)[x0..x0 + width]);
        }
        Bitmap { width, height, bits }
    }

    /// ORs `other` into this bitmap with its top-left corner at `(x0, y0)`.
    pub fn or_at(&mut self, other: &Bitmap, x0: usize, y0: usize) {
        assert!(x0 + other.width <= self.width && y0 + other.height <= self.height, "or_at out of bounds");
        for y in 0..other.height {
            let dst = &mut self.row_mut(y0 + y)[x0..x0 + other.width];
            for (d, &s) in dst.iter_mut().zip(other.row(y)) {
                *d |= s;
            }
        }
    }

    pub fn complement(&self) -> Bitmap {
        Bitmap { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    /// Ones inside a rectangle given in local coordinates.
    pub fn count_ones_in(&self, rect: &PixelRect) -> usize {
        (rect.y0..rect.y1()).map(|y| self.row(y)[rect.x0..rect.x1()].iter().filter(|&&b| b).count()).sum()
    }
}
