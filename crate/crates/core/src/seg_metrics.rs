//! Pixel-level segmentation metrics: mean IoU, precision, recall and
//! specificity, averaged over images and over the two categories.

use serde::{Deserialize, Serialize};

use crate::annotation::SemanticMask;
use crate::bitmap::Bitmap;
use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(gt: &Bitmap, pred: &Bitmap) -> Result<ConfusionCounts> {
    if !gt.same_dims(pred) {
        return Err(param(format!(
            "ground truth is {}x{}, prediction is {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&g, &p) in gt.as_slice().iter().zip(pred.as_slice()) {
        match (g, p) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// How ratios with a zero denominator are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroDivision {
    /// Absence in both ground truth and prediction scores 1; predicting an
    /// absent category (or missing a present one) scores 0.
    #[default]
    Perfect,
    /// Undefined image-category terms are dropped and the mean renormalised.
    Skip,
}

/// Per image-category metric values; `None` marks an undefined term under
/// [`ZeroDivision::Skip`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64, fallback: Option<f64>) -> Option<f64> {
    if den == 0 {
        fallback
    } else {
        Some(num as f64 / den as f64)
    }
}

pub fn image_metrics(c: &ConfusionCounts, convention: ZeroDivision) -> ImageMetrics {
    match convention {
        ZeroDivision::Skip => ImageMetrics {
            iou: ratio(c.tp, c.tp + c.fp + c.fn_, None),
            precision: ratio(c.tp, c.tp + c.fp, None),
            recall: ratio(c.tp, c.tp + c.fn_, None),
            specificity: ratio(c.tn, c.tn + c.fp, None),
        },
        ZeroDivision::Perfect => {
            // tp = 0 in every zero-denominator case below
            let absent_both = c.fp == 0 && c.fn_ == 0;
            let empty = if absent_both { 1.0 } else { 0.0 };
            ImageMetrics {
                iou: ratio(c.tp, c.tp + c.fp + c.fn_, Some(1.0)),
                precision: ratio(c.tp, c.tp + c.fp, Some(empty)),
                recall: ratio(c.tp, c.tp + c.fn_, Some(empty)),
                specificity: ratio(c.tn, c.tn + c.fp, Some(1.0)),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub miou: f64,
    pub mprecision: f64,
    pub mrecall: f64,
    pub mspecificity: f64,
}

impl CategoryMetrics {
    fn mean_of(a: &CategoryMetrics, b: &CategoryMetrics) -> CategoryMetrics {
        CategoryMetrics {
            miou: (a.miou + b.miou) / 2.0,
            mprecision: (a.mprecision + b.mprecision) / 2.0,
            mrecall: (a.mrecall + b.mrecall) / 2.0,
            mspecificity: (a.mspecificity + b.mspecificity) / 2.0,
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.miou, self.mprecision, self.mrecall, self.mspecificity]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegMetricsReport {
    pub eos_intact: CategoryMetrics,
    pub bz: CategoryMetrics,
    /// Mean of the two category values.
    pub overall: CategoryMetrics,
    /// Every defined image-category term averaged directly. Equal to
    /// `overall` under [`ZeroDivision::Perfect`].
    pub overall_per_term: CategoryMetrics,
    pub n_images: usize,
    pub convention: ZeroDivision,
}

#[derive(Default)]
struct Acc {
    sums: [f64; 4],
    counts: [usize; 4],
}

impl Acc {
    fn add(&mut self, m: &ImageMetrics) {
        for (k, v) in [m.iou, m.precision, m.recall, m.specificity].into_iter().enumerate() {
            if let Some(v) = v {
                self.sums[k] += v;
                self.counts[k] += 1;
            }
        }
    }

    fn merge(&self, other: &Acc) -> Acc {
        let mut out = Acc::default();
        for k in 0..4 {
            out.sums[k] = self.sums[k] + other.sums[k];
            out.counts[k] = self.counts[k] + other.counts[k];
        }
        out
    }

    /// NaN when no term is defined.
    fn mean(&self) -> CategoryMetrics {
        let m = |k: usize| if self.counts[k] == 0 { f64::NAN } else { self.sums[k] / self.counts[k] as f64 };
        CategoryMetrics { miou: m(0), mprecision: m(1), mrecall: m(2), mspecificity: m(3) }
    }
}

pub fn evaluate(pairs: &[(SemanticMask, SemanticMask)], convention: ZeroDivision) -> Result<SegMetricsReport> {
    if pairs.is_empty() {
        return Err(param("no mask pairs to evaluate"));
    }
    let mut eos = Acc::default();
    let mut bz = Acc::default();
    for (gt, pred) in pairs {
        eos.add(&image_metrics(&confusion(&gt.eos, &pred.eos)?, convention));
        bz.add(&image_metrics(&confusion(&gt.bz, &pred.bz)?, convention));
    }
    let (eos_m, bz_m) = (eos.mean(), bz.mean());
    Ok(SegMetricsReport {
        eos_intact: eos_m,
        bz: bz_m,
        overall: CategoryMetrics::mean_of(&eos_m, &bz_m),
        overall_per_term: eos.merge(&bz).mean(),
        n_images: pairs.len(),
        convention,
    })
}

impl SegMetricsReport {
    /// Fixed-column CSV: category, miou, mprecision, mrecall, mspecificity, n_images.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,miou,mprecision,mrecall,mspecificity,n_images\n");
        for (name, m) in [("eos_intact", &self.eos_intact), ("bz", &self.bz), ("overall", &self.overall)] {
            out.push_str(&format!(
                "{name},{},{},{},{},{}\n",
                m.miou, m.mprecision, m.mrecall, m.mspecificity, self.n_images
            ));
        }
        out
    }
}
