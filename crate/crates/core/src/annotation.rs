//! Expert annotations and their rasterization into semantic masks.
//!
//! A pixel `(x, y)` is sampled at its integer coordinate. Eosinophils become
//! disks of radius 25 (inclusive); basal-zone polygons are filled with the
//! even-odd rule and their boundary counts as inside.

use std::cmp::Ordering;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::bitmap::Bitmap;
use crate::error::{param, Error, Result};
use crate::geometry::PixelRect;

/// Annotated eosinophil disk radius in pixels.
pub const EOS_RADIUS: i64 = 25;

/// Default luminance cutoff for the RGB tissue detector (about 0.9 of white).
pub const DEFAULT_LUMINANCE_CUTOFF: u8 = 229;

/// `[x, y]` in pixels, origin top-left.
pub type Point = [i64; 2];

pub type Polygon = Vec<Point>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideAnnotation {
    pub slide_id: String,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub eos_centers: Vec<Point>,
    #[serde(default)]
    pub bz_polygons: Vec<Polygon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tissue_polygons: Option<Vec<Polygon>>,
}

impl SlideAnnotation {
    pub fn empty(slide_id: impl Into<String>, width: usize, height: usize) -> Self {
        Self {
            slide_id: slide_id.into(),
            width,
            height,
            eos_centers: Vec::new(),
            bz_polygons: Vec::new(),
            tissue_polygons: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let annotation: SlideAnnotation = serde_json::from_str(text)?;
        annotation.validate()?;
        Ok(annotation)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn slide_rect(&self) -> Result<PixelRect> {
        PixelRect::new(0, 0, self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::Validation { what: format!("annotation '{}'", self.slide_id), reason };
        if self.width == 0 || self.height == 0 {
            return Err(invalid(format!("slide dimensions {}x{} must be positive", self.width, self.height)));
        }
        let in_bounds = |p: &Point| p[0] >= 0 && p[1] >= 0 && (p[0] as usize) < self.width && (p[1] as usize) < self.height;
        for (i, c) in self.eos_centers.iter().enumerate() {
            if !in_bounds(c) {
                return Err(invalid(format!("eos_centers[{i}] = {c:?} lies outside the slide")));
            }
        }
        let groups = [("bz_polygons", Some(&self.bz_polygons)), ("tissue_polygons", self.tissue_polygons.as_ref())];
        for (field, polys) in groups {
            for (i, poly) in polys.into_iter().flatten().enumerate() {
                if poly.len() < 3 {
                    return Err(invalid(format!("{field}[{i}] has {} vertices, need at least 3", poly.len())));
                }
                if let Some(v) = poly.iter().find(|p| !in_bounds(p)) {
                    return Err(invalid(format!("{field}[{i}] vertex {v:?} lies outside the slide")));
                }
                if !is_simple(poly) {
                    return Err(invalid(format!("{field}[{i}] is self-intersecting")));
                }
            }
        }
        Ok(())
    }
}

/// Two boolean channels over a pixel rectangle. A pixel may be in both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    pub region: PixelRect,
    pub eos: Bitmap,
    pub bz: Bitmap,
}

impl SemanticMask {
    pub fn empty(region: PixelRect) -> Self {
        Self { region, eos: Bitmap::new(region.width, region.height), bz: Bitmap::new(region.width, region.height) }
    }

    pub fn from_channels(region: PixelRect, eos: Bitmap, bz: Bitmap) -> Result<Self> {
        for (name, ch) in [("eos", &eos), ("bz", &bz)] {
            if ch.width() != region.width || ch.height() != region.height {
                return Err(param(format!(
                    "{name} channel is {}x{}, region is {}x{}",
                    ch.width(),
                    ch.height(),
                    region.width,
                    region.height
                )));
            }
        }
        Ok(Self { region, eos, bz })
    }

    /// Sub-mask over `rect` (global coordinates, must lie within `self.region`).
    pub fn crop(&self, rect: PixelRect) -> SemanticMask {
        assert!(self.region.contains_rect(&rect), "crop outside mask region");
        let (lx, ly) = (rect.x0 - self.region.x0, rect.y0 - self.region.y0);
        SemanticMask {
            region: rect,
            eos: self.eos.crop(lx, ly, rect.width, rect.height),
            bz: self.bz.crop(lx, ly, rect.width, rect.height),
        }
    }

    /// ORs `other` into this mask; `other.region` must lie inside `self.region`.
    pub fn or_assign(&mut self, other: &SemanticMask) {
        assert!(self.region.contains_rect(&other.region), "merge outside mask region");
        let (lx, ly) = (other.region.x0 - self.region.x0, other.region.y0 - self.region.y0);
        self.eos.or_at(&other.eos, lx, ly);
        self.bz.or_at(&other.bz, lx, ly);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    pub region: PixelRect,
    pub bitmap: Bitmap,
}

impl TissueMask {
    pub fn new(region: PixelRect, bitmap: Bitmap) -> Result<Self> {
        if bitmap.width() != region.width || bitmap.height() != region.height {
            return Err(param("tissue bitmap dimensions do not match its region"));
        }
        Ok(Self { region, bitmap })
    }

    pub fn full(region: PixelRect) -> Self {
        Self { region, bitmap: Bitmap::filled(region.width, region.height, true) }
    }

    /// Even-odd fill of the polygons over the full slide.
    pub fn from_polygons(width: usize, height: usize, polygons: &[Polygon]) -> Result<Self> {
        let region = PixelRect::new(0, 0, width, height)?;
        let mut bitmap = Bitmap::new(width, height);
        for poly in polygons {
            fill_polygon(&mut bitmap, region, poly);
        }
        Ok(Self { region, bitmap })
    }
}

/// Fraction of tissue pixels inside `window`, which must lie within the mask region.
pub fn tissue_fraction(mask: &TissueMask, window: &PixelRect) -> f64 {
    assert!(mask.region.contains_rect(window), "window {window:?} outside tissue mask {:?}", mask.region);
    let local = PixelRect { x0: window.x0 - mask.region.x0, y0: window.y0 - mask.region.y0, ..*window };
    mask.bitmap.count_ones_in(&local) as f64 / window.area() as f64
}

/// Luminance-threshold tissue detector: tissue iff `0.299R + 0.587G + 0.114B < cutoff`.
pub fn tissue_from_rgb(raster: &RgbImage, luminance_cutoff: u8) -> TissueMask {
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    let bitmap = Bitmap::from_fn(w, h, |x, y| luminance(raster.get_pixel(x as u32, y as u32).0) < luminance_cutoff as f64);
    TissueMask { region: PixelRect { x0: 0, y0: 0, width: w, height: h }, bitmap }
}

pub(crate) fn luminance([r, g, b]: [u8; 3]) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

/// Picks the tissue source: annotated polygons, then an RGB raster, then all tissue.
pub fn resolve_tissue(annotation: &SlideAnnotation, rgb: Option<&RgbImage>, luminance_cutoff: u8) -> Result<TissueMask> {
    if let Some(polys) = &annotation.tissue_polygons {
        return TissueMask::from_polygons(annotation.width, annotation.height, polys);
    }
    if let Some(raster) = rgb {
        if raster.width() as usize != annotation.width || raster.height() as usize != annotation.height {
            return Err(param("RGB raster dimensions differ from the annotated slide"));
        }
        return Ok(tissue_from_rgb(raster, luminance_cutoff));
    }
    Ok(TissueMask::full(annotation.slide_rect()?))
}

pub fn rasterize(annotation: &SlideAnnotation, region: PixelRect) -> Result<SemanticMask> {
    rasterize_with_radius(annotation, region, EOS_RADIUS)
}

pub fn rasterize_with_radius(annotation: &SlideAnnotation, region: PixelRect, radius: i64) -> Result<SemanticMask> {
    if !annotation.slide_rect()?.contains_rect(&region) {
        return Err(param(format!(
            "region {region:?} exceeds slide {}x{}",
            annotation.width, annotation.height
        )));
    }
    let mut mask = SemanticMask::empty(region);
    for &c in &annotation.eos_centers {
        draw_disk(&mut mask.eos, region, c, radius);
    }
    for poly in &annotation.bz_polygons {
        fill_polygon(&mut mask.bz, region, poly);
    }
    Ok(mask)
}

fn draw_disk(bitmap: &mut Bitmap, region: PixelRect, [cx, cy]: Point, radius: i64) {
    let (rx0, ry0) = (region.x0 as i64, region.y0 as i64);
    let (rx1, ry1) = (region.x1() as i64, region.y1() as i64);
    let r2 = radius * radius;
    for y in (cy - radius).max(ry0)..(cy + radius + 1).min(ry1) {
        let dy = y - cy;
        let rem = r2 - dy * dy;
        // widest |dx| with dx² ≤ rem
        let mut half = (rem as f64).sqrt() as i64;
        while half * half > rem {
            half -= 1;
        }
        while (half + 1) * (half + 1) <= rem {
            half += 1;
        }
        let x_lo = (cx - half).max(rx0);
        let x_hi = (cx + half + 1).min(rx1);
        if x_lo >= x_hi {
            continue;
        }
        let row = bitmap.row_mut((y - ry0) as usize);
        row[(x_lo - rx0) as usize..(x_hi - rx0) as usize].fill(true);
    }
}

/// Exact rational `num / den` with `den > 0`.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    fn ceil(self) -> i128 {
        let q = self.num.div_euclid(self.den);
        if self.num.rem_euclid(self.den) == 0 {
            q
        } else {
            q + 1
        }
    }

    fn cmp(&self, other: &Ratio) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Scanline even-odd fill of one polygon (boundary inclusive), clipped to `region`.
fn fill_polygon(bitmap: &mut Bitmap, region: PixelRect, poly: &[Point]) {
    if poly.len() < 3 {
        return;
    }
    let ymin = poly.iter().map(|p| p[1]).min().unwrap().max(region.y0 as i64);
    let ymax = poly.iter().map(|p| p[1]).max().unwrap().min(region.y1() as i64 - 1);
    let (rx0, rx1) = (region.x0 as i128, region.x1() as i128);
    let mut crossings: Vec<Ratio> = Vec::new();
    for y in ymin..=ymax {
        let row = bitmap.row_mut((y - region.y0 as i64) as usize);
        let mut mark = |x_lo: i128, x_hi: i128| {
            // half-open [x_lo, x_hi) in global coordinates
            let lo = x_lo.max(rx0);
            let hi = x_hi.min(rx1);
            if lo < hi {
                row[(lo - rx0) as usize..(hi - rx0) as usize].fill(true);
            }
        };
        crossings.clear();
        let yy = y as i128;
        for i in 0..poly.len() {
            let [ax, ay] = poly[i].map(|v| v as i128);
            let [bx, by] = poly[(i + 1) % poly.len()].map(|v| v as i128);
            if (ay > yy) != (by > yy) {
                let den = by - ay;
                let num = ax * den + (yy - ay) * (bx - ax);
                let r = if den < 0 { Ratio { num: -num, den: -den } } else { Ratio { num, den } };
                crossings.push(r);
            }
            // boundary lattice points on this row
            if ay == yy && by == yy {
                mark(ax.min(bx), ax.max(bx) + 1);
            } else if yy >= ay.min(by) && yy <= ay.max(by) && ay != by {
                let den = by - ay;
                let num = ax * den + (yy - ay) * (bx - ax);
                if num % den == 0 {
                    let x = num / den;
                    mark(x, x + 1);
                }
            }
        }
        crossings.sort_by(Ratio::cmp);
        for pair in crossings.chunks_exact(2) {
            mark(pair[0].ceil(), pair[1].ceil());
        }
    }
}

fn orient(a: Point, b: Point, c: Point) -> i128 {
    let (ax, ay, bx, by, cx, cy) = (a[0] as i128, a[1] as i128, b[0] as i128, b[1] as i128, c[0] as i128, c[1] as i128);
    (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    orient(a, b, p) == 0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1.signum() * o2.signum() < 0 && o3.signum() * o4.signum() < 0 {
        return true;
    }
    on_segment(a, b, c) || on_segment(a, b, d) || on_segment(c, d, a) || on_segment(c, d, b)
}

/// True when no two non-adjacent edges touch and no adjacent edges fold back
/// onto each other.
pub fn is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let edge = |i: usize| (poly[i], poly[(i + 1) % n]);
    for i in 0..n {
        let (a, b) = edge(i);
        if a == b {
            return false;
        }
        for j in i + 1..n {
            let (c, d) = edge(j);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // shared vertex is expected; folding back along the other edge is not
                let (far_self, far_other) = if j == i + 1 { (a, d) } else { (b, c) };
                if on_segment(a, b, far_other) || on_segment(c, d, far_self) {
                    return false;
                }
            } else if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}
