//! Binary classification metrics with "severe" as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub miss_rate: f64,
    pub false_alarm_rate: f64,
}

impl ClassificationMetrics {
    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.sensitivity, self.specificity, self.miss_rate, self.false_alarm_rate]
    }

    pub const NAMES: [&'static str; 5] = ["accuracy", "sensitivity", "specificity", "miss_rate", "false_alarm_rate"];
}

/// A rate whose class is absent from the truths is reported as 1 (nothing to
/// miss, nothing to falsely alarm on).
pub fn classification_metrics(predictions: &[bool], truths: &[bool]) -> Result<ClassificationMetrics> {
    if predictions.len() != truths.len() {
        return Err(param(format!("{} predictions but {} truths", predictions.len(), truths.len())));
    }
    if predictions.is_empty() {
        return Err(param("no predictions to score"));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predictions.iter().zip(truths) {
        match (p, t) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let sensitivity = rate(tp, tp + fn_);
    let specificity = rate(tn, tn + fp);
    Ok(ClassificationMetrics {
        accuracy: (tp + tn) as f64 / predictions.len() as f64,
        sensitivity,
        specificity,
        miss_rate: 1.0 - sensitivity,
        false_alarm_rate: 1.0 - specificity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn all_correct_and_all_wrong() {
        let t = [true, false, true, false, false];
        let m = classification_metrics(&t, &t).unwrap();
        assert_eq!(m.values(), [1.0, 1.0, 1.0, 0.0, 0.0]);
        let inv: Vec<bool> = t.iter().map(|v| !v).collect();
        let m = classification_metrics(&inv, &t).unwrap();
        assert_eq!(m.accuracy, 0.0);
        assert_eq!(m.values(), [0.0, 0.0, 0.0, 1.0, 1.0]);
        assert!(classification_metrics(&[], &[]).is_err());
        assert!(classification_metrics(&[true], &[]).is_err());
    }

    #[test]
    fn matches_hand_tally() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<bool> = (0..100).map(|_| rng.gen()).collect();
        let t: Vec<bool> = (0..100).map(|_| rng.gen()).collect();
        let tally = |pv: bool, tv: bool| p.iter().zip(&t).filter(|(&a, &b)| a == pv && b == tv).count() as f64;
        let (tp, tn, fp, fn_) = (tally(true, true), tally(false, false), tally(true, false), tally(false, true));
        let m = classification_metrics(&p, &t).unwrap();
        assert!((m.accuracy - (tp + tn) / 100.0).abs() < 1e-15);
        assert!((m.sensitivity - tp / (tp + fn_)).abs() < 1e-15);
        assert!((m.specificity - tn / (tn + fp)).abs() < 1e-15);
        assert!((m.miss_rate + m.sensitivity - 1.0).abs() < 1e-15);
    }
}
