//! Classification metrics with GPT as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No positive predictions, so precision was reported as 0.
    pub precision_undefined: bool,
    /// No positive labels, so recall was reported as 0.
    pub recall_undefined: bool,
}

pub fn confusion_metrics(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMetrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::invalid("metrics need at least one prediction"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (t, p) in y_true.iter().zip(y_pred) {
        match (*t == 1, *p == 1) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ConfusionMetrics {
        accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        precision,
        recall,
        f1,
        precision_undefined: tp + fp == 0,
        recall_undefined: tp + fn_ == 0,
    })
}

/// Area under the ROC curve from average ranks; tied scores get half credit.
pub fn roc_auc(y_true: &[u8], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: y_true.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = y_true.iter().filter(|y| **y == 1).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|k| y_true[**k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Metrics of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
    pub n_test: usize,
    pub seed: u64,
}

impl EvalResult {
    /// Scores probabilities at `threshold`; AUC uses the probabilities.
    pub fn from_probabilities(y_true: &[u8], probs: &[f64], threshold: f64, seed: u64) -> Result<Self> {
        let y_pred: Vec<u8> = probs.iter().map(|p| u8::from(*p >= threshold)).collect();
        let m = confusion_metrics(y_true, &y_pred)?;
        Ok(Self {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            auc: roc_auc(y_true, probs)?,
            n_test: y_true.len(),
            seed,
        })
    }

    pub const METRICS: [&'static str; 5] = ["accuracy", "precision", "recall", "f1", "auc"];

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "precision" => Some(self.precision),
            "recall" => Some(self.recall),
            "f1" => Some(self.f1),
            "auc" => Some(self.auc),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = confusion_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn all_positive_predictions() {
        let m = confusion_metrics(&[1, 0, 1, 0], &[1, 1, 1, 1]).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall), (0.5, 0.5, 1.0));
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let m = confusion_metrics(&[1, 0], &[0, 0]).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined && !m.recall_undefined);
        assert!(confusion_metrics(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.3, 0.9]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0, 1, 0, 1], &[0.4; 4]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[1, 1, 0, 0], &[0.1, 0.2, 0.3, 0.9]).unwrap(), 0.0);
        assert!(matches!(roc_auc(&[1, 1], &[0.1, 0.2]), Err(Error::SingleClass)));
    }

    #[test]
    fn auc_is_invariant_under_increasing_transforms() {
        let y = [0, 1, 1, 0, 1, 0, 0, 1];
        let s = [0.1, 0.4, 0.35, 0.8, 0.7, 0.4, 0.2, 0.9];
        let t: Vec<f64> = s.iter().map(|v: &f64| (5.0 * v).exp() - 3.0).collect();
        assert_eq!(roc_auc(&y, &s).unwrap(), roc_auc(&y, &t).unwrap());
    }

    #[test]
    fn accuracy_is_one_minus_mean_absolute_error() {
        let y = [1, 0, 1, 1, 0];
        let p = [1, 1, 0, 1, 0];
        let mae = y.iter().zip(&p).filter(|(a, b)| a != b).count() as f64 / 5.0;
        assert!((confusion_metrics(&y, &p).unwrap().accuracy - (1.0 - mae)).abs() < 1e-15);
    }
}
