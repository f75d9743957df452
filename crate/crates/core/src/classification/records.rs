//! Cohort records and the cohort CSV format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::biomarkers::{BiomarkerVector, HssLabels};
use crate::error::{Error, Result};

pub const SEVERE_PEC: u32 = 15;

pub const COHORT_COLUMNS: [&str; 11] = [
    "slide_id", "pec", "sec", "pbz", "sbz", "ei_grade", "ei_stage", "bzh_grade", "bzh_stage", "hss_total", "severe",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    pub features: BiomarkerVector,
    pub hss: Option<HssLabels>,
    pub severe: Option<bool>,
}

impl SlideRecord {
    pub fn new(slide_id: impl Into<String>, features: BiomarkerVector, severe: bool) -> Self {
        Self { slide_id: slide_id.into(), features, hss: None, severe: Some(severe) }
    }

    pub fn label(&self) -> Result<bool> {
        self.severe
            .ok_or_else(|| Error::Schema(format!("record '{}' has no severity label", self.slide_id)))
    }
}

/// Histologically severe: clinical PEC of at least 15 or HSS total above 3.
pub fn derive_severity(pec_clinical: u32, hss_total: f64) -> bool {
    pec_clinical >= SEVERE_PEC || hss_total > 3.0
}

pub fn labels(records: &[SlideRecord]) -> Result<Vec<bool>> {
    records.iter().map(SlideRecord::label).collect()
}

fn parse_field<T: std::str::FromStr>(value: &str, column: &str, line: u64) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("line {line}: column '{column}' has unparsable value '{value}'")))
}

fn parse_bool(value: &str, line: u64) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(Error::Schema(format!("line {line}: column 'severe' has unparsable value '{other}'"))),
    }
}

/// Reads a cohort CSV. `slide_id, pec, sec, pbz, sbz` are mandatory; the HSS
/// columns are optional as a group; `severe` is required when `require_labels`.
pub fn read_cohort<R: Read>(reader: R, require_labels: bool) -> Result<Vec<SlideRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| col(name).ok_or_else(|| Error::Schema(format!("cohort CSV is missing column '{name}'")));
    let (id_c, pec_c, sec_c, pbz_c, sbz_c) = (required("slide_id")?, required("pec")?, required("sec")?, required("pbz")?, required("sbz")?);
    let severe_c = col("severe");
    if require_labels && severe_c.is_none() {
        return Err(Error::Schema("cohort CSV is missing column 'severe' required for training".into()));
    }
    let hss_cols: Vec<Option<usize>> =
        ["ei_grade", "ei_stage", "bzh_grade", "bzh_stage", "hss_total"].iter().map(|c| col(c)).collect();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let get = |c: usize| row.get(c).unwrap_or("");
        let features = BiomarkerVector {
            pec: parse_field(get(pec_c), "pec", line)?,
            sec: parse_field(get(sec_c), "sec", line)?,
            pbz: parse_field(get(pbz_c), "pbz", line)?,
            sbz: parse_field(get(sbz_c), "sbz", line)?,
        };
        if !features.is_valid() {
            return Err(Error::Schema(format!("line {line}: sec/pbz/sbz must lie in [0, 1]")));
        }
        let hss_vals: Vec<Option<&str>> =
            hss_cols.iter().map(|c| c.map(get).filter(|v| !v.is_empty())).collect();
        let hss = if hss_vals.iter().all(Option::is_some) {
            let v: Vec<&str> = hss_vals.into_iter().flatten().collect();
            let labels = HssLabels {
                ei_grade: parse_field(v[0], "ei_grade", line)?,
                ei_stage: parse_field(v[1], "ei_stage", line)?,
                bzh_grade: parse_field(v[2], "bzh_grade", line)?,
                bzh_stage: parse_field(v[3], "bzh_stage", line)?,
                hss_total: parse_field(v[4], "hss_total", line)?,
            };
            labels.validate().map_err(|e| Error::Schema(format!("line {line}: {e}")))?;
            Some(labels)
        } else {
            None
        };
        let severe = match severe_c.map(get).filter(|v| !v.is_empty()) {
            Some(v) => Some(parse_bool(v, line)?),
            None if require_labels => {
                return Err(Error::Schema(format!("line {line}: empty 'severe' value in training cohort")))
            }
            None => None,
        };
        out.push(SlideRecord { slide_id: get(id_c).to_string(), features, hss, severe });
    }
    Ok(out)
}

pub fn write_cohort<W: Write>(writer: W, records: &[SlideRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COHORT_COLUMNS)?;
    for r in records {
        let f = &r.features;
        let mut row = vec![r.slide_id.clone(), f.pec.to_string(), f.sec.to_string(), f.pbz.to_string(), f.sbz.to_string()];
        match &r.hss {
            Some(h) => row.extend([
                h.ei_grade.to_string(),
                h.ei_stage.to_string(),
                h.bzh_grade.to_string(),
                h.bzh_stage.to_string(),
                h.hss_total.to_string(),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        row.push(r.severe.map(|s| u8::from(s).to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
