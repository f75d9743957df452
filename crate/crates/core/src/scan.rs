//! Whole-slide HPF scan.
//!
//! Each HPF window is segmented as a grid of overlapping sub-patches whose
//! masks are OR-merged, noise-filtered, and reduced to a [`LocalScore`].
//! Windows are independent and evaluated in parallel; results are gathered
//! in row-major order so the maps do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{tissue_fraction, SemanticMask, TissueMask};
use crate::error::{param, Error, Result};
use crate::geometry::{hpf_windows, subpatch_grid, PixelRect, WindowGrid};
use crate::segmentation::{NoiseFilter, SegmentationBackend};

pub const DEFAULT_KERNEL: usize = 2144;
pub const DEFAULT_STRIDE: usize = 500;
pub const DEFAULT_SUBPATCH: usize = 448;
pub const DEFAULT_SUBPATCH_OVERLAP: usize = 24;
pub const DEFAULT_TISSUE_THRESHOLD: f64 = 0.15;

/// Where the noise filter runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    /// Once per assembled HPF mask, after the OR-merge.
    #[default]
    AssembledHpf,
    /// On every sub-patch before the OR-merge (sensitivity analysis).
    SubPatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub kernel: usize,
    pub stride: usize,
    pub subpatch: usize,
    pub subpatch_overlap: usize,
    pub noise: NoiseFilter,
    pub filter_stage: FilterStage,
    pub tissue_threshold: f64,
    /// Worker threads; `None` uses the global rayon pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            kernel: DEFAULT_KERNEL,
            stride: DEFAULT_STRIDE,
            subpatch: DEFAULT_SUBPATCH,
            subpatch_overlap: DEFAULT_SUBPATCH_OVERLAP,
            noise: NoiseFilter::default(),
            filter_stage: FilterStage::AssembledHpf,
            tissue_threshold: DEFAULT_TISSUE_THRESHOLD,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalScore {
    pub eos_count: u32,
    pub bz_fraction: f64,
    pub is_tissue: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    EosIntact,
    Bz,
}

/// One local score per HPF window, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    pub feature: Feature,
    pub grid: WindowGrid,
    pub kernel: usize,
    pub stride: usize,
    pub cells: Vec<LocalScore>,
}

impl ScoreMap {
    pub fn new(feature: Feature, grid: WindowGrid, cells: Vec<LocalScore>) -> Result<Self> {
        if cells.len() != grid.len() {
            return Err(param(format!("{} cells for a {}x{} grid", cells.len(), grid.n_rows, grid.n_cols)));
        }
        Ok(Self { feature, grid, kernel: grid.kernel, stride: grid.stride, cells })
    }

    pub fn cell(&self, row: usize, col: usize) -> &LocalScore {
        &self.cells[row * self.grid.n_cols + col]
    }

    /// The mapped feature as a row-major matrix.
    pub fn heat_values(&self) -> Vec<Vec<f64>> {
        (0..self.grid.n_rows)
            .map(|r| {
                (0..self.grid.n_cols)
                    .map(|c| {
                        let s = self.cell(r, c);
                        match self.feature {
                            Feature::EosIntact => s.eos_count as f64,
                            Feature::Bz => s.bz_fraction,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn heat_csv(&self) -> String {
        let mut out = String::new();
        for row in self.heat_values() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOutput {
    pub eos_map: ScoreMap,
    pub bz_map: ScoreMap,
}

impl ScanOutput {
    /// CSV with columns row, col, x0, y0, eos_count, bz_fraction, is_tissue.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,x0,y0,eos_count,bz_fraction,is_tissue\n");
        for (r, c, win) in self.eos_map.grid.iter() {
            let e = self.eos_map.cell(r, c);
            let b = self.bz_map.cell(r, c);
            out.push_str(&format!(
                "{r},{c},{},{},{},{},{}\n",
                win.x0,
                win.y0,
                e.eos_count,
                b.bz_fraction,
                u8::from(b.is_tissue)
            ));
        }
        out
    }
}

fn wrap(window: &PixelRect, e: Error) -> Error {
    Error::Scan { x0: window.x0, y0: window.y0, source: Box::new(e) }
}

/// Segments `window` as overlapping sub-patches and ORs them together.
/// With `prefilter`, each sub-patch is noise-filtered before merging.
pub fn assemble_hpf_mask(
    backend: &dyn SegmentationBackend,
    window: PixelRect,
    subpatch: usize,
    overlap: usize,
    prefilter: Option<&NoiseFilter>,
) -> Result<SemanticMask> {
    let grid = subpatch_grid(window, subpatch, overlap).map_err(|e| wrap(&window, e))?;
    let mut merged = SemanticMask::empty(window);
    for tile in &grid.tiles {
        let mut sub = backend.segment(*tile).map_err(|e| wrap(&window, e))?;
        if sub.region != *tile {
            return Err(wrap(
                &window,
                Error::Backend { backend: backend.name().into(), reason: format!("returned region {:?} for {tile:?}", sub.region) },
            ));
        }
        if let Some(f) = prefilter {
            f.apply(&mut sub);
        }
        merged.or_assign(&sub);
    }
    Ok(merged)
}

/// Scores one HPF. With `filter`, the mask is noise-filtered first.
pub fn local_score(
    mask: &SemanticMask,
    tissue: &TissueMask,
    window: PixelRect,
    tissue_threshold: f64,
    filter: Option<&NoiseFilter>,
) -> LocalScore {
    assert_eq!(mask.region, window, "mask must cover exactly the window");
    score_owned(mask.clone(), tissue, tissue_threshold, filter, NoiseFilter::default().connectivity)
}

fn score_owned(
    mut mask: SemanticMask,
    tissue: &TissueMask,
    tissue_threshold: f64,
    filter: Option<&NoiseFilter>,
    connectivity: crate::segmentation::Connectivity,
) -> LocalScore {
    let window = mask.region;
    let is_tissue = tissue_fraction(tissue, &window) >= tissue_threshold;
    let eos_count = match filter {
        Some(f) => f.apply(&mut mask).0,
        None => crate::segmentation::component_areas(&mask.eos, connectivity).len(),
    };
    LocalScore {
        eos_count: eos_count as u32,
        bz_fraction: mask.bz.count_ones() as f64 / window.area() as f64,
        is_tissue,
    }
}

fn score_window(
    backend: &dyn SegmentationBackend,
    tissue: &TissueMask,
    window: PixelRect,
    cfg: &ScanConfig,
) -> Result<LocalScore> {
    let (pre, post) = match cfg.filter_stage {
        FilterStage::AssembledHpf => (None, Some(&cfg.noise)),
        FilterStage::SubPatch => (Some(&cfg.noise), None),
    };
    let mask = assemble_hpf_mask(backend, window, cfg.subpatch, cfg.subpatch_overlap, pre)?;
    Ok(score_owned(mask, tissue, cfg.tissue_threshold, post, cfg.noise.connectivity))
}

pub fn scan(
    backend: &dyn SegmentationBackend,
    tissue: &TissueMask,
    slide_width: usize,
    slide_height: usize,
    cfg: &ScanConfig,
) -> Result<ScanOutput> {
    let grid = hpf_windows(slide_width, slide_height, cfg.kernel, cfg.stride)?;
    let slide = PixelRect::new(0, 0, slide_width, slide_height)?;
    if !tissue.region.contains_rect(&slide) {
        return Err(param(format!("tissue mask {:?} does not cover the {slide_width}x{slide_height} slide", tissue.region)));
    }
    if !(0.0..=1.0).contains(&cfg.tissue_threshold) {
        return Err(param(format!("tissue threshold {} outside [0, 1]", cfg.tissue_threshold)));
    }
    let run = || -> Result<Vec<LocalScore>> {
        (0..grid.len())
            .into_par_iter()
            .map(|i| score_window(backend, tissue, grid.window_at(i), cfg))
            .collect()
    };
    let cells = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| param(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    Ok(ScanOutput {
        eos_map: ScoreMap::new(Feature::EosIntact, grid, cells.clone())?,
        bz_map: ScoreMap::new(Feature::Bz, grid, cells)?,
    })
}
