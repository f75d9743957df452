//! Synthetic slides and cohorts with known ground truth.
//!
//! [`make_slide`] plants non-overlapping eosinophil disks and rectangular
//! basal-zone regions, then derives the expected biomarkers with a
//! self-contained brute-force oracle: the full slide is painted directly from
//! the planted shapes, every HPF window is enumerated, and components are
//! counted by flood fill. None of the scan engine, the polygon filler or the
//! run-based labeller is involved.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::{Point, Polygon, SlideAnnotation, TissueMask, EOS_RADIUS};
use crate::biomarkers::{BiomarkerConfig, BiomarkerVector, Population};
use crate::bitmap::Bitmap;
use crate::classification::{route, Route, SlideRecord};
use crate::error::{Error, Result};
use crate::geometry::PixelRect;
use crate::scan::ScanConfig;
use crate::segmentation::Connectivity;

/// Minimum planted disk spacing. Two radius-25 disks can touch diagonally up
/// to a center distance of 50 + √2, so spacing is raised to this floor to
/// keep disk count equal to component count under 8-connectivity.
pub const SEPARATION_FLOOR: f64 = 2.0 * EOS_RADIUS as f64 + std::f64::consts::SQRT_2 + 0.01;
const PLACEMENT_RETRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Top-left of the HPF-sized window (side = scan kernel) holding the disks.
    pub origin: [usize; 2],
    pub n_disks: usize,
    /// Pairwise center distance; must exceed 50.
    pub min_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideSpec {
    pub slide_id: String,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub bz_regions: Vec<PixelRect>,
    /// Tissue rectangle; the whole slide when absent.
    #[serde(default)]
    pub tissue: Option<PixelRect>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub biomarkers: BiomarkerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlide {
    pub annotation: SlideAnnotation,
    pub tissue: TissueMask,
    pub expected: BiomarkerVector,
    /// Oracle per-window values, row-major.
    pub expected_eos_counts: Vec<u32>,
    pub expected_bz_fractions: Vec<f64>,
}

fn rect_polygon(r: &PixelRect) -> Polygon {
    let (x0, y0, x1, y1) = (r.x0 as i64, r.y0 as i64, r.x1() as i64 - 1, r.y1() as i64 - 1);
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

impl SlideSpec {
    pub fn empty(slide_id: impl Into<String>, width: usize, height: usize) -> Self {
        Self {
            slide_id: slide_id.into(),
            width,
            height,
            clusters: Vec::new(),
            bz_regions: Vec::new(),
            tissue: None,
            seed: 0,
            scan: ScanConfig::default(),
            biomarkers: BiomarkerConfig::default(),
        }
    }

    pub fn kernel_window(&self, origin: [usize; 2]) -> Result<PixelRect> {
        PixelRect::square(origin[0], origin[1], self.scan.kernel)
    }

    /// A full-width band at the top of `window` covering `fraction` of it.
    pub fn bz_band(window: PixelRect, fraction: f64) -> Result<PixelRect> {
        let rows = (fraction * window.height as f64).round() as usize;
        PixelRect::new(window.x0, window.y0, window.width, rows.max(1))
    }

    fn check(&self) -> Result<PixelRect> {
        let bad = |m: String| Err(Error::Generation(m));
        let slide = PixelRect::new(0, 0, self.width, self.height)?;
        let tissue = self.tissue.unwrap_or(slide);
        if !slide.contains_rect(&tissue) {
            return bad(format!("tissue rectangle {tissue:?} leaves the slide"));
        }
        for c in &self.clusters {
            let w = self.kernel_window(c.origin)?;
            if !slide.contains_rect(&w) {
                return bad(format!("cluster window at {:?} leaves the slide", c.origin));
            }
            if !(c.min_distance > 2.0 * EOS_RADIUS as f64) {
                return bad(format!("cluster min_distance {} must exceed {}", c.min_distance, 2 * EOS_RADIUS));
            }
        }
        if let Some(r) = self.bz_regions.iter().find(|r| !tissue.contains_rect(r)) {
            return bad(format!("bz rectangle {r:?} is not inside the tissue region"));
        }
        Ok(tissue)
    }

    /// A random spec with sides in `[kernel, max_side]`; see [`SlideSpec::random_sized`].
    pub fn random(slide_id: impl Into<String>, seed: u64, max_side: usize, scan: ScanConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = scan.kernel;
        let max_side = max_side.max(k);
        let (width, height) = (rng.gen_range(k..=max_side), rng.gen_range(k..=max_side));
        Self::fill(slide_id.into(), &mut rng, seed, width, height, scan)
    }

    /// A random spec of the given size: a few disk clusters (more on large
    /// slides), an optional tissue rectangle, and basal-zone rectangles of
    /// mixed size, some below the noise area. Sides must be at least the kernel.
    pub fn random_sized(slide_id: impl Into<String>, seed: u64, width: usize, height: usize, scan: ScanConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::fill(slide_id.into(), &mut rng, seed, width, height, scan)
    }

    fn fill(slide_id: String, rng: &mut ChaCha8Rng, seed: u64, width: usize, height: usize, scan: ScanConfig) -> Self {
        let k = scan.kernel;
        let max_clusters = (4 * width * height / 36_000_000).max(4);
        let clusters = (0..rng.gen_range(0..=max_clusters))
            .map(|_| ClusterSpec {
                origin: [rng.gen_range(0..=width - k), rng.gen_range(0..=height - k)],
                n_disks: rng.gen_range(0..=30),
                min_distance: 60.0,
            })
            .collect();
        let tissue = if rng.gen_bool(0.5) {
            let (tw, th) = (rng.gen_range(width / 2..=width), rng.gen_range(height / 2..=height));
            Some(PixelRect { x0: rng.gen_range(0..=width - tw), y0: rng.gen_range(0..=height - th), width: tw, height: th })
        } else {
            None
        };
        let t = tissue.unwrap_or(PixelRect { x0: 0, y0: 0, width, height });
        let bz_regions = (0..rng.gen_range(0..=3))
            .map(|_| {
                let (bw, bh) = (rng.gen_range(10..=t.width.min(1500)), rng.gen_range(10..=t.height.min(1500)));
                PixelRect {
                    x0: t.x0 + rng.gen_range(0..=t.width - bw),
                    y0: t.y0 + rng.gen_range(0..=t.height - bh),
                    width: bw,
                    height: bh,
                }
            })
            .collect();
        Self { slide_id, width, height, clusters, bz_regions, tissue, seed, scan, biomarkers: BiomarkerConfig::default() }
    }
}

fn place_disks(spec: &SlideSpec) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut centers: Vec<Point> = Vec::new();
    let r = EOS_RADIUS;
    for (ci, c) in spec.clusters.iter().enumerate() {
        let w = spec.kernel_window(c.origin)?;
        if w.width < 2 * r as usize + 1 {
            return Err(Error::Generation(format!("cluster {ci}: window too small for a disk")));
        }
        let d2 = c.min_distance.max(SEPARATION_FLOOR).powi(2);
        let (lo_x, hi_x) = (w.x0 as i64 + r, w.x1() as i64 - 1 - r);
        let (lo_y, hi_y) = (w.y0 as i64 + r, w.y1() as i64 - 1 - r);
        for k in 0..c.n_disks {
            let placed = (0..PLACEMENT_RETRIES).find_map(|_| {
                let p = [rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y)];
                let clear = centers.iter().all(|q| (((p[0] - q[0]).pow(2) + (p[1] - q[1]).pow(2)) as f64) > d2);
                clear.then_some(p)
            });
            match placed {
                Some(p) => centers.push(p),
                None => {
                    return Err(Error::Generation(format!(
                        "cluster {ci}: could not place disk {k} of {} after {PLACEMENT_RETRIES} tries",
                        c.n_disks
                    )))
                }
            }
        }
    }
    Ok(centers)
}

/// Painted full-slide channels plus a flood-fill component counter.
struct Oracle {
    width: usize,
    eos: Vec<bool>,
    bz: Vec<bool>,
    seen: Vec<bool>,
    stack: Vec<(usize, usize)>,
}

impl Oracle {
    fn paint(spec: &SlideSpec, centers: &[Point]) -> Self {
        let (w, h) = (spec.width, spec.height);
        let mut eos = vec![false; w * h];
        let r = EOS_RADIUS;
        for c in centers {
            for y in (c[1] - r).max(0)..=(c[1] + r).min(h as i64 - 1) {
                for x in (c[0] - r).max(0)..=(c[0] + r).min(w as i64 - 1) {
                    if (x - c[0]).pow(2) + (y - c[1]).pow(2) <= r * r {
                        eos[y as usize * w + x as usize] = true;
                    }
                }
            }
        }
        let mut bz = vec![false; w * h];
        for b in &spec.bz_regions {
            for y in b.y0..b.y1() {
                bz[y * w + b.x0..y * w + b.x1()].fill(true);
            }
        }
        Oracle { width: w, eos, bz, seen: Vec::new(), stack: Vec::new() }
    }

    /// Areas of the components of `channel` restricted to `win`.
    fn component_areas(&mut self, bz: bool, win: &PixelRect, conn: Connectivity) -> Vec<usize> {
        let (ww, wh) = (win.width, win.height);
        self.seen.clear();
        self.seen.resize(ww * wh, false);
        let channel = if bz { &self.bz } else { &self.eos };
        let at = |x: usize, y: usize| channel[(win.y0 + y) * self.width + win.x0 + x];
        let offsets: &[(i64, i64)] = match conn {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        };
        let mut areas = Vec::new();
        for sy in 0..wh {
            for sx in 0..ww {
                if self.seen[sy * ww + sx] || !at(sx, sy) {
                    continue;
                }
                self.seen[sy * ww + sx] = true;
                self.stack.push((sx, sy));
                let mut area = 0;
                while let Some((x, y)) = self.stack.pop() {
                    area += 1;
                    for &(dx, dy) in offsets {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= ww as i64 || ny >= wh as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if !self.seen[ny * ww + nx] && at(nx, ny) {
                            self.seen[ny * ww + nx] = true;
                            self.stack.push((nx, ny));
                        }
                    }
                }
                areas.push(area);
            }
        }
        areas
    }
}

fn overlap_area(a: &PixelRect, b: &PixelRect) -> usize {
    let w = a.x1().min(b.x1()).saturating_sub(a.x0.max(b.x0));
    let h = a.y1().min(b.y1()).saturating_sub(a.y0.max(b.y0));
    w * h
}

/// Builds the slide and its oracle-derived expected biomarkers. The oracle
/// models the default filter placement (once per assembled HPF mask).
pub fn make_slide(spec: &SlideSpec) -> Result<SyntheticSlide> {
    let tissue_rect = spec.check()?;
    let centers = place_disks(spec)?;
    let mut annotation = SlideAnnotation::empty(spec.slide_id.clone(), spec.width, spec.height);
    annotation.eos_centers = centers.clone();
    annotation.bz_polygons = spec.bz_regions.iter().map(rect_polygon).collect();
    let slide = PixelRect::new(0, 0, spec.width, spec.height)?;
    let tissue = match spec.tissue {
        Some(t) => {
            annotation.tissue_polygons = Some(vec![rect_polygon(&t)]);
            TissueMask::new(slide, Bitmap::from_fn(spec.width, spec.height, |x, y| t.contains_point(x, y)))?
        }
        None => TissueMask::full(slide),
    };
    annotation.validate()?;

    let cfg = &spec.scan;
    let noise = &cfg.noise;
    let mut oracle = Oracle::paint(spec, &centers);
    let (mut counts, mut fractions, mut tissue_flags) = (Vec::new(), Vec::new(), Vec::new());
    let mut y0 = 0;
    while y0 + cfg.kernel <= spec.height {
        let mut x0 = 0;
        while x0 + cfg.kernel <= spec.width {
            let win = PixelRect::square(x0, y0, cfg.kernel)?;
            let eos = oracle.component_areas(false, &win, noise.connectivity);
            counts.push(eos.iter().filter(|&&a| a >= noise.eos_min_area).count() as u32);
            let bz = oracle.component_areas(true, &win, noise.connectivity);
            let kept: usize = bz.iter().filter(|&&a| a >= noise.bz_min_area).sum();
            fractions.push(kept as f64 / win.area() as f64);
            tissue_flags.push(overlap_area(&win, &tissue_rect) as f64 / win.area() as f64 >= cfg.tissue_threshold);
            x0 += cfg.stride;
        }
        y0 += cfg.stride;
    }
    let expected = if counts.is_empty() {
        BiomarkerVector::default()
    } else {
        expected_vector(&counts, &fractions, &tissue_flags, &spec.biomarkers)
    };
    Ok(SyntheticSlide { annotation, tissue, expected, expected_eos_counts: counts, expected_bz_fractions: fractions })
}

fn expected_vector(counts: &[u32], fractions: &[f64], tissue: &[bool], b: &BiomarkerConfig) -> BiomarkerVector {
    let share = |pass: &dyn Fn(usize) -> bool, pop: Population| {
        let members: Vec<usize> = (0..counts.len()).filter(|&i| pop == Population::AllCells || tissue[i]).collect();
        if members.is_empty() {
            0.0
        } else {
            members.iter().filter(|&&i| pass(i)).count() as f64 / members.len() as f64
        }
    };
    BiomarkerVector {
        pec: *counts.iter().max().unwrap(),
        sec: share(&|i| counts[i] >= b.eos_threshold, b.sec_population),
        pbz: fractions.iter().copied().fold(0.0, f64::max),
        sbz: share(&|i| fractions[i] >= b.bz_threshold, b.sbz_population),
    }
}

/// Independent per-feature normals, clamped to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlob {
    pub mean: [f64; 4],
    pub sd: [f64; 4],
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl FeatureBlob {
    fn sample(&self, rng: &mut ChaCha8Rng) -> BiomarkerVector {
        let v: Vec<f64> = (0..4)
            .map(|k| {
                let x = if self.sd[k] > 0.0 { Normal::new(self.mean[k], self.sd[k]).unwrap().sample(rng) } else { self.mean[k] };
                x.clamp(self.lo[k], self.hi[k])
            })
            .collect();
        BiomarkerVector {
            pec: v[0].round().max(0.0) as u32,
            sec: v[1].clamp(0.0, 1.0),
            pbz: v[2].clamp(0.0, 1.0),
            sbz: v[3].clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CohortGeometry {
    /// Exactly `round(prevalence * n)` severe records drawn from `severe`,
    /// the rest from `non_severe`.
    Blobs { prevalence: f64, severe: FeatureBlob, non_severe: FeatureBlob },
    /// PEC is inside the Δ-window for half the records. Out of the window the
    /// label follows PEC (severe above the window); inside it follows PBZ
    /// (severe iff `pbz >= 0.5`).
    WindowedRule { delta: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_records: usize,
    pub geometry: CohortGeometry,
    pub seed: u64,
}

impl CohortSpec {
    /// Classes separated with a margin on every feature.
    pub fn separated(n_records: usize, seed: u64) -> Self {
        let inf = f64::INFINITY;
        CohortSpec {
            n_records,
            seed,
            geometry: CohortGeometry::Blobs {
                prevalence: 0.5,
                severe: FeatureBlob {
                    mean: [40.0, 0.30, 0.60, 0.40],
                    sd: [6.0, 0.08, 0.10, 0.10],
                    lo: [30.0, 0.15, 0.45, 0.25],
                    hi: [inf, 1.0, 1.0, 1.0],
                },
                non_severe: FeatureBlob {
                    mean: [2.0, 0.02, 0.15, 0.05],
                    sd: [1.5, 0.02, 0.08, 0.05],
                    lo: [0.0, 0.0, 0.0, 0.0],
                    hi: [5.0, 0.10, 0.35, 0.20],
                },
            },
        }
    }

    /// Both classes from one distribution; only the prevalence differs from 1/2.
    pub fn no_signal(n_records: usize, seed: u64) -> Self {
        let blob = FeatureBlob {
            mean: [15.0, 0.2, 0.4, 0.3],
            sd: [8.0, 0.1, 0.2, 0.15],
            lo: [0.0; 4],
            hi: [f64::INFINITY, 1.0, 1.0, 1.0],
        };
        CohortSpec { n_records, seed, geometry: CohortGeometry::Blobs { prevalence: 0.7, severe: blob, non_severe: blob } }
    }

    pub fn windowed_rule(n_records: usize, delta: u32, seed: u64) -> Self {
        CohortSpec { n_records, seed, geometry: CohortGeometry::WindowedRule { delta } }
    }
}

pub fn make_cohort(spec: &CohortSpec) -> Result<Vec<SlideRecord>> {
    if spec.n_records < 20 {
        return Err(Error::Generation(format!("cohort needs at least 20 records, got {}", spec.n_records)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let id = |i: usize| format!("syn{}-{i:05}", spec.seed);
    let records: Vec<SlideRecord> = match &spec.geometry {
        CohortGeometry::Blobs { prevalence, severe, non_severe } => {
            let n_sev = (prevalence * spec.n_records as f64).round() as usize;
            if n_sev == 0 || n_sev == spec.n_records {
                return Err(Error::Generation(format!("prevalence {prevalence} leaves one class empty")));
            }
            let mut flags: Vec<bool> = (0..spec.n_records).map(|i| i < n_sev).collect();
            flags.shuffle(&mut rng);
            flags
                .iter()
                .enumerate()
                .map(|(i, &s)| SlideRecord::new(id(i), if s { severe } else { non_severe }.sample(&mut rng), s))
                .collect()
        }
        CohortGeometry::WindowedRule { delta } => {
            crate::classification::windowed::check_delta(*delta)?;
            let (lo, hi) = (15 - delta, 15 + delta);
            (0..spec.n_records)
                .map(|i| {
                    let u: f64 = rng.gen();
                    let pec = if u < 0.5 {
                        rng.gen_range(lo..=hi)
                    } else if u < 0.75 && lo > 0 {
                        rng.gen_range(0..lo)
                    } else {
                        rng.gen_range(hi + 1..=hi + 40)
                    };
                    let f = BiomarkerVector { pec, sec: rng.gen_range(0.0..0.5), pbz: rng.gen(), sbz: rng.gen_range(0.0..0.6) };
                    let severe = match route(*delta, pec) {
                        Route::In => f.pbz >= 0.5,
                        Route::Out => pec > hi,
                    };
                    SlideRecord::new(id(i), f, severe)
                })
                .collect()
        }
    };
    let n_sev = records.iter().filter(|r| r.severe == Some(true)).count();
    if n_sev == 0 || n_sev == records.len() {
        return Err(Error::Generation("generated cohort has a single class".into()));
    }
    Ok(records)
}
