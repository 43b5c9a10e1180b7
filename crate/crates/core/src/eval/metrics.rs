//! Threshold metrics, AUROC and TNR at a fixed TPR.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("score set needs both classes ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("target TPR must lie in (0, 1], got {0}")]
    Target(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Counts from `(predicted_positive, actually_positive)` pairs.
    pub fn tally(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub precision: f64,
    pub accuracy: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Precision, accuracy, TPR, FPR and F1; any 0/0 is 0.
pub fn compute_metrics(c: &ConfusionCounts) -> ThresholdMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let tpr = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + tpr == 0.0 {
        0.0
    } else {
        2.0 * precision * tpr / (precision + tpr)
    };
    ThresholdMetrics {
        precision,
        accuracy: ratio(c.tp + c.tn, c.total()),
        tpr,
        fpr: ratio(c.fp, c.fp + c.tn),
        f1,
    }
}

fn split(scores: &[(f64, bool)]) -> Result<(usize, usize), MetricError> {
    let positives = scores.iter().filter(|s| s.1).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Area under the ROC curve, higher scores meaning positive.
///
/// Computed as the Mann-Whitney statistic with average ranks for ties,
/// which equals trapezoidal integration of the empirical curve.
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64, MetricError> {
    let (np, nn) = split(scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| scores[k].1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (np * (np + 1)) as f64 / 2.0;
    Ok(u / (np as f64 * nn as f64))
}

/// TNR at the highest threshold `t` (positive iff `score >= t`) whose TPR
/// reaches `target`.
pub fn tnr_at_tpr(scores: &[(f64, bool)], target: f64) -> Result<f64, MetricError> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(MetricError::Target(target));
    }
    let (np, nn) = split(scores)?;
    let mut pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    let mut k = 1;
    while (k as f64) / (np as f64) < target {
        k += 1;
    }
    let t = pos[k - 1];
    let tn = scores.iter().filter(|s| !s.1 && s.0 < t).count();
    Ok(tn as f64 / nn as f64)
}

/// One-vs-rest counts per class from `(predicted, actual)` pairs.
pub fn per_class_counts<K: Ord + Copy>(pairs: &[(K, K)]) -> BTreeMap<K, ConfusionCounts> {
    let mut classes: Vec<K> = pairs.iter().flat_map(|(p, a)| [*p, *a]).collect();
    classes.sort();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| (c, ConfusionCounts::tally(pairs.iter().map(|(p, a)| (*p == c, *a == c)))))
        .collect()
}
