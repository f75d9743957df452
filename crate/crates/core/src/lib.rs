//! Whole-slide spatial biomarkers for eosinophilic esophagitis.
//!
//! The pipeline rasterizes annotations (or loads model masks), scans the
//! slide with HPF-sized windows, reduces the resulting score maps to four
//! biomarkers (PEC, SEC, PBZ, SBZ) and classifies histological severity.

pub mod annotation;
pub mod biomarkers;
pub mod bitmap;
pub mod classification;
pub mod error;
pub mod geometry;
pub mod io;
pub mod scan;
pub mod seg_metrics;
pub mod segmentation;
pub mod stats;
pub mod synth;

pub use annotation::{rasterize, SemanticMask, SlideAnnotation, TissueMask};
pub use biomarkers::{biomarkers, BiomarkerVector, HssLabels};
pub use bitmap::Bitmap;
pub use error::{Error, Result};
pub use geometry::{hpf_windows, subpatch_grid, PixelRect, TileGrid, WindowGrid};
pub use scan::{scan, ScanConfig, ScanOutput, ScoreMap};
pub use segmentation::{oracle_backend, SegmentationBackend};
