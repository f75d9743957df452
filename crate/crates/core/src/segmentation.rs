//! Segmentation backends and post-processing.
//!
//! The trained network is not part of this crate. Backends produce
//! [`SemanticMask`]s for arbitrary regions: the oracle backend rasterizes
//! ground-truth annotations, the degraded backend corrupts another backend
//! with seeded pixel flips, the threshold backend is a naive colour rule,
//! and the mask backend serves precomputed masks exported by any model.

use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{luminance, rasterize, SemanticMask, SlideAnnotation};
use crate::bitmap::Bitmap;
use crate::error::{param, Error, Result};
use crate::geometry::PixelRect;
use crate::io;

pub const DEFAULT_EOS_MIN_AREA: usize = 1800;
/// 1% of a 448×448 sub-patch, truncated.
pub const DEFAULT_BZ_MIN_AREA: usize = 2007;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Per-pixel component ids (0 = background, 1..=K in raster order of each
/// component's first pixel) and the area of each component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// `areas[k - 1]` is the pixel count of component `k`.
    pub areas: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.areas.len()
    }

    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy)]
struct Run {
    y: usize,
    x0: usize,
    x1: usize,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    // keep the earlier run as root so roots stay in raster order
    if ra < rb {
        parent[rb] = ra;
    } else if rb < ra {
        parent[ra] = rb;
    }
}

/// Horizontal runs and their component ids (0-based, raster order).
struct RunLabels {
    runs: Vec<Run>,
    component: Vec<u32>,
    areas: Vec<usize>,
}

fn label_runs(channel: &Bitmap, connectivity: Connectivity) -> RunLabels {
    let reach = match connectivity {
        Connectivity::Four => 0,
        Connectivity::Eight => 1,
    };
    let mut runs: Vec<Run> = Vec::new();
    let mut parent: Vec<usize> = Vec::new();
    let mut prev_start = 0;
    for y in 0..channel.height() {
        let row = channel.row(y);
        let row_start = runs.len();
        let mut x = 0;
        let w = row.len();
        while x < w {
            if !row[x] {
                x += 1;
                continue;
            }
            let x0 = x;
            while x < w && row[x] {
                x += 1;
            }
            runs.push(Run { y, x0, x1: x });
            parent.push(runs.len() - 1);
        }
        // merge with the previous row's runs
        if y > 0 {
            let mut p = prev_start;
            for c in row_start..runs.len() {
                let cur = runs[c];
                while p < row_start && runs[p].x1 + reach <= cur.x0 {
                    p += 1;
                }
                let mut q = p;
                while q < row_start && runs[q].x0 < cur.x1 + reach {
                    union(&mut parent, q, c);
                    q += 1;
                }
            }
        }
        prev_start = row_start;
    }
    let mut component = vec![u32::MAX; runs.len()];
    let mut areas = Vec::new();
    for i in 0..runs.len() {
        let root = find(&mut parent, i);
        if component[root] == u32::MAX {
            component[root] = areas.len() as u32;
            areas.push(0);
        }
        let id = component[root];
        component[i] = id;
        areas[id as usize] += runs[i].x1 - runs[i].x0;
    }
    RunLabels { runs, component, areas }
}

pub fn connected_components(channel: &Bitmap, connectivity: Connectivity) -> ComponentLabeling {
    let rl = label_runs(channel, connectivity);
    let width = channel.width();
    let mut labels = vec![0u32; channel.len()];
    for (run, &id) in rl.runs.iter().zip(&rl.component) {
        labels[run.y * width + run.x0..run.y * width + run.x1].fill(id + 1);
    }
    ComponentLabeling { width, height: channel.height(), labels, areas: rl.areas }
}

/// Component areas only, without materialising a label image.
pub fn component_areas(channel: &Bitmap, connectivity: Connectivity) -> Vec<usize> {
    label_runs(channel, connectivity).areas
}

/// Clears every component with area strictly below `min_area`; returns the
/// number of surviving components.
pub fn filter_channel_in_place(channel: &mut Bitmap, min_area: usize, connectivity: Connectivity) -> usize {
    let rl = label_runs(channel, connectivity);
    let width = channel.width();
    let data = channel.as_mut_slice();
    for (run, &id) in rl.runs.iter().zip(&rl.component) {
        if rl.areas[id as usize] < min_area {
            data[run.y * width + run.x0..run.y * width + run.x1].fill(false);
        }
    }
    rl.areas.iter().filter(|&&a| a >= min_area).count()
}

/// Noise-filter thresholds applied to segmentation output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseFilter {
    pub eos_min_area: usize,
    pub bz_min_area: usize,
    #[serde(default)]
    pub connectivity: Connectivity,
}

impl Default for NoiseFilter {
    fn default() -> Self {
        Self { eos_min_area: DEFAULT_EOS_MIN_AREA, bz_min_area: DEFAULT_BZ_MIN_AREA, connectivity: Connectivity::Eight }
    }
}

impl NoiseFilter {
    /// Filters both channels in place; returns surviving (eos, bz) component counts.
    pub fn apply(&self, mask: &mut SemanticMask) -> (usize, usize) {
        let eos = filter_channel_in_place(&mut mask.eos, self.eos_min_area, self.connectivity);
        let bz = filter_channel_in_place(&mut mask.bz, self.bz_min_area, self.connectivity);
        (eos, bz)
    }
}

pub fn filter_small_components(mask: &SemanticMask, eos_min_area: usize, bz_min_area: usize) -> SemanticMask {
    let mut out = mask.clone();
    NoiseFilter { eos_min_area, bz_min_area, connectivity: Connectivity::Eight }.apply(&mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Annotation,
    Rgb,
    Masks,
}

/// Produces semantic masks for arbitrary slide regions.
///
/// Implementations must return bit-identical masks for repeated calls on the
/// same region and must tolerate concurrent calls.
pub trait SegmentationBackend: Send + Sync {
    fn name(&self) -> &str;
    fn input_kind(&self) -> InputKind;
    fn slide_size(&self) -> (usize, usize);
    fn segment(&self, region: PixelRect) -> Result<SemanticMask>;
}

impl<B: SegmentationBackend + ?Sized> SegmentationBackend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn input_kind(&self) -> InputKind {
        (**self).input_kind()
    }
    fn slide_size(&self) -> (usize, usize) {
        (**self).slide_size()
    }
    fn segment(&self, region: PixelRect) -> Result<SemanticMask> {
        (**self).segment(region)
    }
}

impl<B: SegmentationBackend + ?Sized> SegmentationBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn input_kind(&self) -> InputKind {
        (**self).input_kind()
    }
    fn slide_size(&self) -> (usize, usize) {
        (**self).slide_size()
    }
    fn segment(&self, region: PixelRect) -> Result<SemanticMask> {
        (**self).segment(region)
    }
}

/// Perfect segmentation: the rasterized annotation.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    annotation: SlideAnnotation,
}

pub fn oracle_backend(annotation: SlideAnnotation) -> OracleBackend {
    OracleBackend { annotation }
}

impl OracleBackend {
    pub fn annotation(&self) -> &SlideAnnotation {
        &self.annotation
    }
}

impl SegmentationBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }
    fn input_kind(&self) -> InputKind {
        InputKind::Annotation
    }
    fn slide_size(&self) -> (usize, usize) {
        (self.annotation.width, self.annotation.height)
    }
    fn segment(&self, region: PixelRect) -> Result<SemanticMask> {
        rasterize(&self.annotation, region)
    }
}

/// Flips each pixel of each channel of `base` with probability `flip_rate`.
#[derive(Debug, Clone)]
pub struct DegradedBackend<B> {
    base: B,
    flip_rate: f64,
    seed: u64,
}

pub fn degraded_backend<B: SegmentationBackend>(base: B, flip_rate: f64, seed: u64) -> Result<DegradedBackend<B>> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(param(format!("flip rate {flip_rate} outside [0, 1]")));
    }
    Ok(DegradedBackend { base, flip_rate, seed })
}

fn region_seed(seed: u64, region: &PixelRect) -> u64 {
    // splitmix-style mixing of the seed with the region geometry
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [region.x0, region.y0, region.width, region.height] {
        h = (h ^ v as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

impl<B: SegmentationBackend> SegmentationBackend for DegradedBackend<B> {
    fn name(&self) -> &str {
        "degraded"
    }
    fn input_kind(&self) -> InputKind {
        self.base.input_kind()
    }
    fn slide_size(&self) -> (usize, usize) {
        self.base.slide_size()
    }
    fn segment(&self, region: PixelRect) -> Result<SemanticMask> {
        let mut mask = self.base.segment(region)?;
        if self.flip_rate == 0.0 {
            return Ok(mask);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(region_seed(self.seed, &region));
        for channel in [&mut mask.eos, &mut mask.bz] {
            for px in channel.as_mut_slice() {
                if rng.gen::<f64>() < self.flip_rate {
                    *px = !*px;
                }
            }
        }
        Ok(mask)
    }
}

/// Naive colour rule over an RGB raster, a stand-in when no model output is
/// available: eosinophil pixels are strongly red-shifted, basal-zone pixels
/// are dark.
#[derive(Debug, Clone)]
pub struct ThresholdBackend {
    raster: Arc<RgbImage>,
    /// Minimum `R - G` for an eosinophil pixel.
    pub eos_red_margin: i32,
    /// Basal zone iff luminance below this.
    pub bz_luminance_cutoff: f64,
}

impl ThresholdBackend {
    pub fn new(raster: Arc<RgbImage>) -> Self {
        Self { raster, eos_red_margin: 60, bz_luminance_cutoff: 100.0 }
    }
}

impl SegmentationBackend for ThresholdBackend {
    fn name(&self) -> &str {
        "threshold"
    }
    fn input_kind(&self) -> InputKind {
        InputKind::Rgb
    }
    fn slide_size(&self) -> (usize, usize) {
        (self.raster.width() as usize, self.raster.height() as usize)
    }
    fn segment(&self, region: PixelRect) -> Result<SemanticMask> {
        let (w, h) = self.slide_size();
        if region.x1() > w || region.y1() > h {
            return Err(param(format!("region {region:?} exceeds raster {w}x{h}")));
        }
        let px = |x: usize, y: usize| self.raster.get_pixel((region.x0 + x) as u32, (region.y0 + y) as u32).0;
        let eos = Bitmap::from_fn(region.width, region.height, |x, y| {
            let [r, g, _] = px(x, y);
            r as i32 - g as i32 >= self.eos_red_margin
        });
        let bz = Bitmap::from_fn(region.width, region.height, |x, y| luminance(px(x, y)) < self.bz_luminance_cutoff);
        Ok(SemanticMask { region, eos, bz })
    }
}

/// Serves crops of precomputed full-slide masks.
#[derive(Debug, Clone)]
pub struct MaskBackend {
    full: SemanticMask,
}

impl MaskBackend {
    pub fn new(eos: Bitmap, bz: Bitmap) -> Result<Self> {
        if !eos.same_dims(&bz) {
            return Err(Error::Validation {
                what: "mask pair".into(),
                reason: format!("eos is {}x{}, bz is {}x{}", eos.width(), eos.height(), bz.width(), bz.height()),
            });
        }
        let region = PixelRect::new(0, 0, eos.width(), eos.height())?;
        Ok(Self { full: SemanticMask { region, eos, bz } })
    }

    /// Loads `<stem>.eos.pgm` and `<stem>.bz.pgm`.
    pub fn load(eos_path: &Path, bz_path: &Path) -> Result<Self> {
        Self::new(io::read_pgm(eos_path)?, io::read_pgm(bz_path)?)
    }
}

impl SegmentationBackend for MaskBackend {
    fn name(&self) -> &str {
        "masks"
    }
    fn input_kind(&self) -> InputKind {
        InputKind::Masks
    }
    fn slide_size(&self) -> (usize, usize) {
        (self.full.region.width, self.full.region.height)
    }
    fn segment(&self, region: PixelRect) -> Result<SemanticMask> {
        if !self.full.region.contains_rect(&region) {
            return Err(param(format!("region {region:?} exceeds mask {:?}", self.full.region)));
        }
        Ok(self.full.crop(region))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Independent flood-fill labeling for comparison.
    fn flood_fill(channel: &Bitmap, eight: bool) -> Vec<u32> {
        let (w, h) = (channel.width(), channel.height());
        let mut labels = vec![0u32; w * h];
        let mut next = 0;
        for start in 0..w * h {
            if !channel.as_slice()[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            let mut stack = vec![start];
            labels[start] = next;
            while let Some(i) = stack.pop() {
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if channel.as_slice()[j] && labels[j] == 0 {
                            labels[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        labels
    }

    fn blob(w: usize, h: usize, area: usize) -> Bitmap {
        // a solid block of `area` pixels filled row by row from (2, 2)
        let mut b = Bitmap::new(w, h);
        let cols = 60;
        for i in 0..area {
            b.set(2 + i % cols, 2 + i / cols, true);
        }
        b
    }

    #[test]
    fn diagonal_pixels() {
        let mut b = Bitmap::new(3, 3);
        b.set(0, 0, true);
        b.set(1, 1, true);
        let eight = connected_components(&b, Connectivity::Eight);
        assert_eq!(eight.areas, vec![2]);
        let four = connected_components(&b, Connectivity::Four);
        assert_eq!(four.areas, vec![1, 1]);
        assert_eq!(four.label(1, 1), 2);
    }

    #[test]
    fn eos_threshold_boundary() {
        for (area, kept) in [(1799, false), (1800, true)] {
            let region = PixelRect::square(0, 0, 100).unwrap();
            let mask = SemanticMask { region, eos: blob(100, 100, area), bz: Bitmap::new(100, 100) };
            let out = filter_small_components(&mask, DEFAULT_EOS_MIN_AREA, DEFAULT_BZ_MIN_AREA);
            assert_eq!(out.eos.count_ones(), if kept { area } else { 0 });
        }
    }

    #[test]
    fn bz_threshold_boundary() {
        for (area, kept) in [(2006, false), (2007, true)] {
            let region = PixelRect::square(0, 0, 100).unwrap();
            let mask = SemanticMask { region, eos: Bitmap::new(100, 100), bz: blob(100, 100, area) };
            let out = filter_small_components(&mask, DEFAULT_EOS_MIN_AREA, DEFAULT_BZ_MIN_AREA);
            assert_eq!(out.bz.count_ones(), if kept { area } else { 0 });
        }
    }

    #[test]
    fn empty_mask_filters_to_empty() {
        let mask = SemanticMask::empty(PixelRect::square(0, 0, 10).unwrap());
        assert_eq!(filter_small_components(&mask, 1800, 2007), mask);
    }

    #[test]
    fn oracle_matches_rasterize() {
        let mut ann = SlideAnnotation::empty("s", 500, 500);
        ann.eos_centers = vec![[100, 100], [300, 320]];
        ann.bz_polygons = vec![vec![[0, 0], [200, 0], [200, 150]]];
        let backend = oracle_backend(ann.clone());
        let region = PixelRect::new(50, 60, 300, 280).unwrap();
        assert_eq!(backend.segment(region).unwrap(), rasterize(&ann, region).unwrap());
        let blank = backend.segment(PixelRect::square(400, 0, 90).unwrap()).unwrap();
        assert_eq!(blank.eos.count_ones() + blank.bz.count_ones(), 0);
    }

    #[test]
    fn oracle_component_count_with_overlaps() {
        // three isolated disks plus an overlapping pair (centers 30 apart)
        let mut ann = SlideAnnotation::empty("s", 600, 300);
        ann.eos_centers = vec![[50, 50], [200, 50], [350, 50], [100, 200], [130, 200]];
        let backend = oracle_backend(ann);
        let mask = backend.segment(PixelRect::new(0, 0, 600, 300).unwrap()).unwrap();
        assert_eq!(component_areas(&mask.eos, Connectivity::Eight).len(), 4);
    }

    #[test]
    fn degraded_extremes() {
        let mut ann = SlideAnnotation::empty("s", 120, 120);
        ann.eos_centers = vec![[60, 60]];
        let region = PixelRect::square(0, 0, 120).unwrap();
        let base = oracle_backend(ann);
        let exact = base.segment(region).unwrap();
        let same = degraded_backend(base.clone(), 0.0, 7).unwrap().segment(region).unwrap();
        assert_eq!(same, exact);
        let inv = degraded_backend(base.clone(), 1.0, 7).unwrap().segment(region).unwrap();
        assert_eq!(inv.eos, exact.eos.complement());
        assert_eq!(inv.bz, exact.bz.complement());
        assert!(degraded_backend(base, 1.5, 0).is_err());
    }

    #[test]
    fn degraded_flip_fraction() {
        let ann = SlideAnnotation::empty("s", 1000, 1000);
        let region = PixelRect::square(0, 0, 1000).unwrap();
        let backend = degraded_backend(oracle_backend(ann), 0.1, 42).unwrap();
        let mask = backend.segment(region).unwrap();
        let frac = mask.eos.count_ones() as f64 / 1e6;
        assert!((frac - 0.1).abs() < 0.003, "{frac}");
        assert_eq!(backend.segment(region).unwrap(), mask);
    }

    #[test]
    fn mask_backend_crops() {
        let eos = Bitmap::from_fn(40, 30, |x, y| (x + y) % 3 == 0);
        let bz = Bitmap::from_fn(40, 30, |x, _| x > 20);
        let backend = MaskBackend::new(eos.clone(), bz).unwrap();
        let m = backend.segment(PixelRect::new(5, 4, 10, 10).unwrap()).unwrap();
        assert_eq!(m.eos, eos.crop(5, 4, 10, 10));
        assert!(backend.segment(PixelRect::new(35, 0, 10, 10).unwrap()).is_err());
        assert!(MaskBackend::new(Bitmap::new(3, 3), Bitmap::new(3, 4)).is_err());
    }

    #[test]
    fn threshold_backend_rule() {
        let raster = RgbImage::from_fn(4, 1, |x, _| match x {
            0 => image::Rgb([255, 255, 255]),
            1 => image::Rgb([230, 80, 150]),
            2 => image::Rgb([40, 40, 90]),
            _ => image::Rgb([200, 190, 200]),
        });
        let b = ThresholdBackend::new(Arc::new(raster));
        let m = b.segment(PixelRect::new(0, 0, 4, 1).unwrap()).unwrap();
        assert_eq!(m.eos.as_slice(), &[false, true, false, false]);
        assert_eq!(m.bz.as_slice(), &[false, false, true, false]);
    }

    fn random_bitmap(w: usize, h: usize, density: f64, seed: u64) -> Bitmap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Bitmap::from_fn(w, h, |_, _| rng.gen::<f64>() < density)
    }

    /// Same equivalence classes, and ids assigned by first-pixel raster order.
    fn same_partition(ours: &[u32], oracle: &[u32]) -> bool {
        // flood fill also numbers in raster order of first pixel, so ids must match exactly
        ours == oracle
    }

    #[test]
    fn labeling_matches_flood_fill_64() {
        for seed in 0..20 {
            let b = random_bitmap(64, 64, 0.45, seed);
            for (conn, eight) in [(Connectivity::Eight, true), (Connectivity::Four, false)] {
                let ours = connected_components(&b, conn);
                assert!(same_partition(&ours.labels, &flood_fill(&b, eight)), "seed {seed}");
                assert_eq!(ours.areas.iter().sum::<usize>(), b.count_ones());
            }
        }
    }

    proptest! {
        #[test]
        fn filter_idempotent_and_shrinking(seed in any::<u64>(), density in 0.2f64..0.7,
                                           eos_min in 0usize..60, bz_min in 0usize..60) {
            let region = PixelRect::square(0, 0, 48).unwrap();
            let mask = SemanticMask { region, eos: random_bitmap(48, 48, density, seed), bz: random_bitmap(48, 48, density, !seed) };
            let once = filter_small_components(&mask, eos_min, bz_min);
            let twice = filter_small_components(&once, eos_min, bz_min);
            prop_assert_eq!(&once, &twice);
            for (a, b) in once.eos.as_slice().iter().zip(mask.eos.as_slice()) {
                prop_assert!(!a || *b);
            }
            for (a, b) in once.bz.as_slice().iter().zip(mask.bz.as_slice()) {
                prop_assert!(!a || *b);
            }
        }

        #[test]
        fn labeling_partition_random(seed in any::<u64>(), w in 1usize..40, h in 1usize..40, density in 0.0f64..1.0) {
            let b = random_bitmap(w, h, density, seed);
            prop_assert_eq!(connected_components(&b, Connectivity::Eight).labels, flood_fill(&b, true));
            prop_assert_eq!(connected_components(&b, Connectivity::Four).labels, flood_fill(&b, false));
        }
    }
}
