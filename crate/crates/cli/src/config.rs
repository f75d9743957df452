//! Run configuration: defaults, optional JSON file, then flag overrides.

use std::path::Path;

use clap::Args;
use eoscan::biomarkers::{BiomarkerConfig, DEFAULT_BZ_THRESHOLD, DEFAULT_EOS_THRESHOLD};
use eoscan::scan::{
    FilterStage, ScanConfig, DEFAULT_KERNEL, DEFAULT_STRIDE, DEFAULT_SUBPATCH, DEFAULT_SUBPATCH_OVERLAP,
    DEFAULT_TISSUE_THRESHOLD,
};
use eoscan::seg_metrics::ZeroDivision;
use eoscan::segmentation::{Connectivity, NoiseFilter, DEFAULT_BZ_MIN_AREA, DEFAULT_EOS_MIN_AREA};
use eoscan::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: usize,
    pub stride: usize,
    pub subpatch: usize,
    pub subpatch_overlap: usize,
    pub eos_min_area: usize,
    pub bz_min_area: usize,
    pub connectivity: Connectivity,
    pub filter_stage: FilterStage,
    pub eos_threshold: u32,
    pub bz_threshold: f64,
    pub tissue_threshold: f64,
    pub delta: u32,
    pub seeds: Vec<u64>,
    pub split: f64,
    pub zero_division: ZeroDivision,
    /// Worker threads for scanning and seed-parallel evaluation.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kernel: DEFAULT_KERNEL,
            stride: DEFAULT_STRIDE,
            subpatch: DEFAULT_SUBPATCH,
            subpatch_overlap: DEFAULT_SUBPATCH_OVERLAP,
            eos_min_area: DEFAULT_EOS_MIN_AREA,
            bz_min_area: DEFAULT_BZ_MIN_AREA,
            connectivity: Connectivity::Eight,
            filter_stage: FilterStage::AssembledHpf,
            eos_threshold: DEFAULT_EOS_THRESHOLD,
            bz_threshold: DEFAULT_BZ_THRESHOLD,
            tissue_threshold: DEFAULT_TISSUE_THRESHOLD,
            delta: 9,
            seeds: (0..eoscan::classification::DEFAULT_N_SEEDS).collect(),
            split: eoscan::classification::DEFAULT_SPLIT,
            zero_division: ZeroDivision::Perfect,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            kernel: self.kernel,
            stride: self.stride,
            subpatch: self.subpatch,
            subpatch_overlap: self.subpatch_overlap,
            noise: NoiseFilter {
                eos_min_area: self.eos_min_area,
                bz_min_area: self.bz_min_area,
                connectivity: self.connectivity,
            },
            filter_stage: self.filter_stage,
            tissue_threshold: self.tissue_threshold,
            threads: self.threads,
        }
    }

    pub fn biomarker_config(&self) -> BiomarkerConfig {
        BiomarkerConfig { eos_threshold: self.eos_threshold, bz_threshold: self.bz_threshold, ..Default::default() }
    }
}

/// Flags shared by every command; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub kernel: Option<usize>,
    #[arg(long, global = true)]
    pub stride: Option<usize>,
    #[arg(long, global = true)]
    pub subpatch: Option<usize>,
    #[arg(long, global = true)]
    pub subpatch_overlap: Option<usize>,
    #[arg(long, global = true)]
    pub eos_min_area: Option<usize>,
    #[arg(long, global = true)]
    pub bz_min_area: Option<usize>,
    #[arg(long, global = true)]
    pub eos_threshold: Option<u32>,
    #[arg(long, global = true)]
    pub bz_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub tissue_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<u32>,
    /// Comma-separated evaluation seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Use seeds 0..N.
    #[arg(long, global = true, conflicts_with = "seeds")]
    pub n_seeds: Option<u64>,
    #[arg(long, global = true)]
    pub split: Option<f64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { cfg.$f = v; } )* };
        }
        set!(kernel, stride, subpatch, subpatch_overlap, eos_min_area, bz_min_area, eos_threshold, bz_threshold, tissue_threshold, delta, seeds, split);
        if let Some(n) = self.n_seeds {
            cfg.seeds = (0..n).collect();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parameter(format!("config {}: {e}", path.display())))
}
