//! Training dispatch, the repeated-split evaluation protocol and the PEC
//! threshold baseline.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, ClassificationMetrics};
use super::model::{train_flat, ClassifierModel, ModelSpec};
use super::records::{labels, SlideRecord};
use super::windowed::{partition, train_windowed, WindowedClassifier};
use crate::biomarkers::BiomarkerVector;
use crate::error::{param, Error, Result};
use crate::stats::{roc, Roc};

pub const DEFAULT_N_SEEDS: u64 = 20;
pub const DEFAULT_SPLIT: f64 = 0.8;

/// A trained model of either shape, as persisted to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Flat(ClassifierModel),
    Windowed(WindowedClassifier),
}

impl Model {
    pub fn score(&self, features: &BiomarkerVector) -> f64 {
        match self {
            Model::Flat(m) => m.score(features),
            Model::Windowed(m) => m.score(features),
        }
    }

    pub fn predict(&self, features: &BiomarkerVector) -> bool {
        match self {
            Model::Flat(m) => m.predict(features),
            Model::Windowed(m) => m.predict(features),
        }
    }
}

pub fn train(spec: &ModelSpec, records: &[SlideRecord], seed: u64) -> Result<Model> {
    spec.validate()?;
    match spec {
        ModelSpec::Windowed { delta, c_in, c_out } => {
            train_windowed(records, *delta, c_in, c_out, seed).map(Model::Windowed)
        }
        flat => {
            let features: Vec<BiomarkerVector> = records.iter().map(|r| r.features).collect();
            train_flat(flat, &features, &labels(records)?, seed).map(Model::Flat)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelSpec,
    pub n_seeds: usize,
    pub seeds: Vec<u64>,
    pub split_fraction: f64,
    pub median: ClassificationMetrics,
    pub std: ClassificationMetrics,
    pub per_seed: Vec<ClassificationMetrics>,
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn train_count(n: usize, split: f64) -> usize {
    ((n as f64 * split).round() as usize).clamp(1, n - 1)
}

/// Shuffles `idx` and cuts it into (train, validation).
fn split(idx: &mut [usize], split: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    idx.shuffle(rng);
    let k = train_count(idx.len(), split);
    (idx[..k].to_vec(), idx[k..].to_vec())
}

fn run_seed(records: &[SlideRecord], spec: &ModelSpec, seed: u64, frac: f64) -> Result<ClassificationMetrics> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_idx, val_idx) = match spec {
        ModelSpec::Windowed { delta, .. } => {
            // each region contributes to both sides in proportion to its size
            let (mut inside, mut outside) = partition(*delta, records);
            for (region, name) in [(&inside, "in-window"), (&outside, "out-of-window")] {
                if region.len() < 2 {
                    return Err(Error::Training(format!(
                        "{name} region has {} records; at least 2 are needed to split",
                        region.len()
                    )));
                }
            }
            let (mut t_in, v_in) = split(&mut inside, frac, &mut rng);
            let (t_out, v_out) = split(&mut outside, frac, &mut rng);
            t_in.extend(t_out);
            (t_in, [v_in, v_out].concat())
        }
        _ => {
            let mut all: Vec<usize> = (0..records.len()).collect();
            split(&mut all, frac, &mut rng)
        }
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let model = train(spec, &pick(&train_idx), seed)?;
    let predictions: Vec<bool> = val_idx.iter().map(|&i| model.predict(&records[i].features)).collect();
    let truths = val_idx.iter().map(|&i| records[i].label()).collect::<Result<Vec<bool>>>()?;
    classification_metrics(&predictions, &truths)
}

/// Per seed: shuffle, split, train, score on the held-out part. Records are
/// sorted by `slide_id` first so the result does not depend on input order.
pub fn evaluate_protocol(records: &[SlideRecord], spec: &ModelSpec, seeds: &[u64], split: f64) -> Result<EvalReport> {
    spec.validate()?;
    if seeds.is_empty() {
        return Err(param("no seeds given"));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(param(format!("split fraction {split} outside (0, 1)")));
    }
    if records.len() < 2 {
        return Err(param(format!("{} records cannot be split", records.len())));
    }
    labels(records)?;
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
    let per_seed = seeds
        .par_iter()
        .map(|&seed| run_seed(&sorted, spec, seed, split).map_err(|e| Error::Training(format!("seed {seed}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let column = |k: usize| per_seed.iter().map(|m| m.values()[k]).collect::<Vec<f64>>();
    let summary = |f: fn(&[f64]) -> f64| {
        let v: Vec<f64> = (0..5).map(|k| f(&column(k))).collect();
        ClassificationMetrics {
            accuracy: v[0],
            sensitivity: v[1],
            specificity: v[2],
            miss_rate: v[3],
            false_alarm_rate: v[4],
        }
    };
    Ok(EvalReport {
        model: spec.clone(),
        n_seeds: seeds.len(),
        seeds: seeds.to_vec(),
        split_fraction: split,
        median: summary(median),
        std: summary(std_dev),
        per_seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSweep {
    pub best_threshold: u32,
    pub best_accuracy: f64,
    /// `(threshold, accuracy)` for every candidate, in candidate order.
    pub accuracies: Vec<(u32, f64)>,
    /// PEC as the score; absent when only one class is present.
    pub roc: Option<Roc>,
}

/// Severe iff `pec >= t` for each candidate; ties go to the smallest `t`.
pub fn baseline_sweep(records: &[SlideRecord], candidates: &[u32]) -> Result<BaselineSweep> {
    if records.is_empty() {
        return Err(param("baseline sweep needs at least one record"));
    }
    if candidates.is_empty() {
        return Err(param("baseline sweep needs at least one candidate threshold"));
    }
    let truths = labels(records)?;
    let accuracies: Vec<(u32, f64)> = candidates
        .iter()
        .map(|&t| {
            let hits = records.iter().zip(&truths).filter(|(r, &y)| (r.features.pec >= t) == y).count();
            (t, hits as f64 / records.len() as f64)
        })
        .collect();
    let (best_threshold, best_accuracy) = accuracies
        .iter()
        .copied()
        .fold(None, |best: Option<(u32, f64)>, (t, a)| match best {
            Some((bt, ba)) if ba > a || (ba == a && bt <= t) => Some((bt, ba)),
            _ => Some((t, a)),
        })
        .unwrap();
    let both = truths.iter().any(|&y| y) && truths.iter().any(|&y| !y);
    let roc = if both {
        let scores: Vec<f64> = records.iter().map(|r| r.features.pec as f64).collect();
        Some(roc(&scores, &truths)?)
    } else {
        None
    };
    Ok(BaselineSweep { best_threshold, best_accuracy, accuracies, roc })
}

/// Candidate thresholds `0..=max_pec + 1`.
pub fn default_candidates(records: &[SlideRecord]) -> Vec<u32> {
    let max = records.iter().map(|r| r.features.pec).max().unwrap_or(0);
    (0..=max + 1).collect()
}
