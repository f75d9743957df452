//! Δ-windowed multi-classifier: slides whose PEC lies in `[15 − Δ, 15 + Δ]`
//! go to a dedicated in-window model, all others to the out-of-window model.

use serde::{Deserialize, Serialize};

use super::model::{train_flat, ClassifierModel, ModelSpec};
use super::records::{SlideRecord, SEVERE_PEC};
use crate::biomarkers::BiomarkerVector;
use crate::error::{Error, Result};

pub const MIN_DELTA: u32 = 1;
pub const MAX_DELTA: u32 = 12;

pub fn check_delta(delta: u32) -> Result<()> {
    if !(MIN_DELTA..=MAX_DELTA).contains(&delta) {
        return Err(Error::Parameter(format!("delta = {delta} outside [{MIN_DELTA}, {MAX_DELTA}]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    In,
    Out,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::In => "in-window",
            Route::Out => "out-of-window",
        }
    }
}

/// Inclusive on both ends; depends on PEC only.
pub fn route(delta: u32, pec: u32) -> Route {
    let lo = SEVERE_PEC.saturating_sub(delta);
    if pec >= lo && pec <= SEVERE_PEC + delta {
        Route::In
    } else {
        Route::Out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedClassifier {
    pub delta: u32,
    pub c_in: ClassifierModel,
    pub c_out: ClassifierModel,
}

impl WindowedClassifier {
    pub fn model_for(&self, features: &BiomarkerVector) -> &ClassifierModel {
        match route(self.delta, features.pec) {
            Route::In => &self.c_in,
            Route::Out => &self.c_out,
        }
    }

    pub fn score(&self, features: &BiomarkerVector) -> f64 {
        self.model_for(features).score(features)
    }

    pub fn predict(&self, features: &BiomarkerVector) -> bool {
        self.model_for(features).predict(features)
    }
}

/// Partitions record indices by route, preserving order.
pub fn partition(delta: u32, records: &[SlideRecord]) -> (Vec<usize>, Vec<usize>) {
    (0..records.len()).partition(|&i| route(delta, records[i].features.pec) == Route::In)
}

/// Trains `c_in` on the in-window records and `c_out` on the rest. The
/// caller decides what the records are (the protocol passes its training
/// split).
pub fn train_windowed(
    records: &[SlideRecord],
    delta: u32,
    c_in: &ModelSpec,
    c_out: &ModelSpec,
    seed: u64,
) -> Result<WindowedClassifier> {
    check_delta(delta)?;
    let (inside, outside) = partition(delta, records);
    let fit = |idx: &[usize], spec: &ModelSpec, region: Route| -> Result<ClassifierModel> {
        if idx.is_empty() {
            return Err(Error::Training(format!("{} region is empty for delta = {delta}", region.name())));
        }
        let features: Vec<BiomarkerVector> = idx.iter().map(|&i| records[i].features).collect();
        let labels = idx.iter().map(|&i| records[i].label()).collect::<Result<Vec<bool>>>()?;
        train_flat(spec, &features, &labels, seed)
            .map_err(|e| Error::Training(format!("{} model: {e}", region.name())))
    };
    Ok(WindowedClassifier { delta, c_in: fit(&inside, c_in, Route::In)?, c_out: fit(&outside, c_out, Route::Out)? })
}
