//! Whole-slide biomarkers from the two score maps.
//!
//! * PEC: peak eosinophil count over all HPFs.
//! * SEC: fraction of HPFs with at least 15 eosinophils (all cells).
//! * PBZ: peak basal-zone area fraction.
//! * SBZ: fraction of tissue HPFs with basal-zone fraction of at least 15%.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::scan::ScoreMap;

pub const DEFAULT_EOS_THRESHOLD: u32 = 15;
pub const DEFAULT_BZ_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BiomarkerVector {
    pub pec: u32,
    pub sec: f64,
    pub pbz: f64,
    pub sbz: f64,
}

impl BiomarkerVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.pec as f64, self.sec, self.pbz, self.sbz]
    }

    pub fn is_valid(&self) -> bool {
        [self.sec, self.pbz, self.sbz].iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Pathologist HSS scores carried alongside the biomarkers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HssLabels {
    pub ei_grade: u8,
    pub ei_stage: u8,
    pub bzh_grade: u8,
    pub bzh_stage: u8,
    pub hss_total: f64,
}

impl HssLabels {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ei_grade", self.ei_grade),
            ("ei_stage", self.ei_stage),
            ("bzh_grade", self.bzh_grade),
            ("bzh_stage", self.bzh_stage),
        ] {
            if v > 3 {
                return Err(param(format!("{name} = {v} outside 0..=3")));
            }
        }
        if !(self.hss_total >= 0.0) {
            return Err(param(format!("hss_total = {} must be non-negative", self.hss_total)));
        }
        Ok(())
    }
}

/// Which cells form a spatial score's population (numerator and denominator).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    AllCells,
    TissueCells,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerConfig {
    pub eos_threshold: u32,
    pub bz_threshold: f64,
    pub sec_population: Population,
    pub sbz_population: Population,
}

impl Default for BiomarkerConfig {
    fn default() -> Self {
        Self {
            eos_threshold: DEFAULT_EOS_THRESHOLD,
            bz_threshold: DEFAULT_BZ_THRESHOLD,
            sec_population: Population::AllCells,
            sbz_population: Population::TissueCells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerReport {
    pub values: BiomarkerVector,
    /// SBZ was set to 0 because its population was empty.
    pub no_tissue_cells: bool,
    /// SEC and SBZ use different populations (the default).
    pub asymmetric_denominators: bool,
    /// Row-major indices of the cells attaining PEC.
    pub pec_cells: Vec<usize>,
}

fn spatial_fraction(
    cells: impl Iterator<Item = (bool, bool)>,
    population: Population,
) -> (usize, usize) {
    // items are (passes threshold, is_tissue)
    cells.fold((0, 0), |(num, den), (pass, tissue)| {
        let member = population == Population::AllCells || tissue;
        (num + usize::from(member && pass), den + usize::from(member))
    })
}

pub fn biomarkers_with(eos_map: &ScoreMap, bz_map: &ScoreMap, cfg: &BiomarkerConfig) -> Result<BiomarkerReport> {
    if eos_map.grid != bz_map.grid {
        return Err(param("eos and bz maps have different grid geometry"));
    }
    if eos_map.cells.is_empty() {
        return Err(param("score map has no cells"));
    }
    let pec = eos_map.cells.iter().map(|c| c.eos_count).max().unwrap();
    let pbz = bz_map.cells.iter().map(|c| c.bz_fraction).fold(0.0, f64::max);
    let (sec_num, sec_den) = spatial_fraction(
        eos_map.cells.iter().map(|c| (c.eos_count >= cfg.eos_threshold, c.is_tissue)),
        cfg.sec_population,
    );
    let (sbz_num, sbz_den) = spatial_fraction(
        bz_map.cells.iter().map(|c| (c.bz_fraction >= cfg.bz_threshold, c.is_tissue)),
        cfg.sbz_population,
    );
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    if sbz_den == 0 {
        log::warn!("no cells in the SBZ population; SBZ set to 0");
    }
    Ok(BiomarkerReport {
        values: BiomarkerVector { pec, sec: frac(sec_num, sec_den), pbz, sbz: frac(sbz_num, sbz_den) },
        no_tissue_cells: sbz_den == 0,
        asymmetric_denominators: cfg.sec_population != cfg.sbz_population,
        pec_cells: eos_map.cells.iter().enumerate().filter(|(_, c)| c.eos_count == pec).map(|(i, _)| i).collect(),
    })
}

pub fn biomarkers(eos_map: &ScoreMap, bz_map: &ScoreMap, eos_threshold: u32, bz_threshold: f64) -> Result<BiomarkerReport> {
    biomarkers_with(eos_map, bz_map, &BiomarkerConfig { eos_threshold, bz_threshold, ..Default::default() })
}

/// BZH grade bin for a peak basal-zone fraction: 0 up to 15%, 1 above 15%
/// and below 33%, 2 from 33% to 66% inclusive, 3 above 66%.
pub fn bzh_grade_bin(pbz: f64) -> u8 {
    if pbz <= 0.15 {
        0
    } else if pbz < 0.33 {
        1
    } else if pbz <= 0.66 {
        2
    } else {
        3
    }
}

/// BZH stage bin for a spatial basal-zone fraction: 0 when absent, then
/// below 33%, 33% to 66%, above 66%.
pub fn bzh_stage_bin(sbz: f64) -> u8 {
    if sbz <= 0.0 {
        0
    } else if sbz < 0.33 {
        1
    } else if sbz <= 0.66 {
        2
    } else {
        3
    }
}
