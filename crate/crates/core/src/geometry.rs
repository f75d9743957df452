//! Pixel-rectangle arithmetic: sub-patch grids and HPF window enumeration.
//!
//! All grids are row-major with the origin at the top-left corner.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Axis-aligned pixel rectangle. Coordinates are non-negative by type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl PixelRect {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(param(format!("rectangle must be non-empty, got {width}x{height}")));
        }
        Ok(Self { x0, y0, width, height })
    }

    pub fn square(x0: usize, y0: usize, side: usize) -> Result<Self> {
        Self::new(x0, y0, side, side)
    }

    /// Exclusive right edge.
    pub fn x1(&self) -> usize {
        self.x0 + self.width
    }

    /// Exclusive bottom edge.
    pub fn y1(&self) -> usize {
        self.y0 + self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains_rect(&self, other: &PixelRect) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1() <= self.x1() && other.y1() <= self.y1()
    }

    pub fn contains_point(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    pub fn intersect(&self, other: &PixelRect) -> Option<PixelRect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1().min(other.x1());
        let y1 = self.y1().min(other.y1());
        (x1 > x0 && y1 > y0).then(|| PixelRect { x0, y0, width: x1 - x0, height: y1 - y0 })
    }
}

/// Overlapping tiles covering a region, e.g. the 25 network-input sub-patches of an HPF.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub region: PixelRect,
    pub tile_size: usize,
    pub overlap: usize,
    pub n_cols: usize,
    pub n_rows: usize,
    /// Row-major.
    pub tiles: Vec<PixelRect>,
}

/// Tile offsets along one axis of length `side`. The last tile is clamped
/// flush to the far edge, so its overlap with the previous one may exceed
/// `overlap` when the step does not divide evenly.
fn axis_offsets(side: usize, tile: usize, overlap: usize) -> Vec<usize> {
    let step = tile - overlap;
    let mut offsets = Vec::new();
    let mut pos = 0;
    loop {
        if pos + tile >= side {
            offsets.push(side - tile);
            break;
        }
        offsets.push(pos);
        pos += step;
    }
    offsets
}

pub fn subpatch_grid(region: PixelRect, tile_size: usize, overlap: usize) -> Result<TileGrid> {
    if tile_size == 0 {
        return Err(param("tile size must be positive"));
    }
    if overlap >= tile_size {
        return Err(param(format!("overlap {overlap} must be smaller than tile size {tile_size}")));
    }
    if tile_size > region.width || tile_size > region.height {
        return Err(param(format!(
            "tile size {tile_size} exceeds region {}x{}",
            region.width, region.height
        )));
    }
    let xs = axis_offsets(region.width, tile_size, overlap);
    let ys = axis_offsets(region.height, tile_size, overlap);
    let tiles = ys
        .iter()
        .flat_map(|&dy| {
            xs.iter().map(move |&dx| PixelRect {
                x0: region.x0 + dx,
                y0: region.y0 + dy,
                width: tile_size,
                height: tile_size,
            })
        })
        .collect();
    Ok(TileGrid { region, tile_size, overlap, n_cols: xs.len(), n_rows: ys.len(), tiles })
}

/// Strided HPF windows over a slide. Only windows lying fully inside the
/// slide are enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub slide_width: usize,
    pub slide_height: usize,
    pub kernel: usize,
    pub stride: usize,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl WindowGrid {
    pub fn len(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Window at grid position `(row, col)`; origin is `(col·stride, row·stride)`.
    pub fn window(&self, row: usize, col: usize) -> PixelRect {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        PixelRect { x0: col * self.stride, y0: row * self.stride, width: self.kernel, height: self.kernel }
    }

    /// Window for a row-major cell index.
    pub fn window_at(&self, index: usize) -> PixelRect {
        self.window(index / self.n_cols, index % self.n_cols)
    }

    /// Row-major iterator over `(row, col, window)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, PixelRect)> + '_ {
        (0..self.n_rows).flat_map(move |r| (0..self.n_cols).map(move |c| (r, c, self.window(r, c))))
    }
}

fn window_count(side: usize, kernel: usize, stride: usize) -> usize {
    if side < kernel {
        0
    } else {
        (side - kernel) / stride + 1
    }
}

pub fn hpf_windows(slide_width: usize, slide_height: usize, kernel: usize, stride: usize) -> Result<WindowGrid> {
    if kernel == 0 || stride == 0 {
        return Err(param(format!("kernel ({kernel}) and stride ({stride}) must be positive")));
    }
    let n_cols = window_count(slide_width, kernel, stride);
    let n_rows = window_count(slide_height, kernel, stride);
    Ok(WindowGrid { slide_width, slide_height, kernel, stride, n_cols, n_rows })
}
