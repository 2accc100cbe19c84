//! Baseline training and prediction policies: the fixed conventional
//! policy, hierarchy-depth training weights, and the two tuned-threshold
//! families (micro-F1 sweep and per-label F1 with a proportion fallback).
//!
//! Threshold selection only ever sees a held-out tuning split, never test
//! data. All selections are deterministic; ties break toward the lowest
//! threshold.

use thiserror::Error;

use crate::data::LabelVocab;
use crate::meta::{PolicyPair, THRESHOLD_CLAMP};
use crate::ndiff::Tensor;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Classifier scores on a tuning split plus the matching gold labels.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    scores: Tensor,
    gold: Tensor,
}

impl ScoreMatrix {
    pub fn new(scores: Tensor, gold: Tensor) -> Result<Self, PolicyError> {
        if scores.shape() != gold.shape() {
            return Err(PolicyError::Shape(format!(
                "scores {:?} vs gold {:?}",
                scores.shape(),
                gold.shape()
            )));
        }
        if scores.rows() == 0 {
            return Err(PolicyError::Invalid("tuning split is empty".into()));
        }
        if scores.data().iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(PolicyError::Invalid("scores must lie strictly inside (0, 1)".into()));
        }
        if gold.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(PolicyError::Invalid("gold entries must be 0 or 1".into()));
        }
        Ok(ScoreMatrix { scores, gold })
    }

    pub fn instances(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_labels(&self) -> usize {
        self.scores.cols()
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores.get(i, j)
    }

    pub fn is_positive(&self, i: usize, j: usize) -> bool {
        self.gold.get(i, j) == 1.0
    }

    fn label_positives(&self, j: usize) -> usize {
        (0..self.instances()).filter(|&i| self.is_positive(i, j)).count()
    }

    fn total_positives(&self) -> usize {
        (0..self.n_labels()).map(|j| self.label_positives(j)).sum()
    }
}

/// Uniform weights and 0.5 thresholds for every label.
pub fn fixed_policy(n_labels: usize) -> PolicyPair {
    PolicyPair::uniform(n_labels)
}

/// Depth-proportional training weights: each label weighs its number of
/// path components, normalized onto the simplex. Falls back to uniform
/// (with a warning) when no label has any depth to speak of.
pub fn hierarchy_weights(vocab: &LabelVocab) -> Vec<f64> {
    let n = vocab.len();
    if !vocab.has_hierarchy() {
        log::warn!("no hierarchy in label names; hierarchy weights degrade to uniform");
    }
    let raw: Vec<f64> = (0..n).map(|id| vocab.depth(id) as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|d| d / total).collect()
}

/// Candidate cut points for one label: midpoints between consecutive
/// distinct sorted scores, the clamp boundaries, and 0.5 (so the fixed
/// policy is always reachable).
fn candidate_thresholds(scores: &mut Vec<f64>) -> Vec<f64> {
    scores.sort_by(f64::total_cmp);
    scores.dedup();
    let mut candidates = vec![THRESHOLD_CLAMP, 0.5, 1.0 - THRESHOLD_CLAMP];
    for pair in scores.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates
        .iter_mut()
        .for_each(|c| *c = c.clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP));
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates
}

fn label_has_variation(scores: &ScoreMatrix, j: usize) -> bool {
    let first = scores.score(0, j);
    (1..scores.instances()).any(|i| scores.score(i, j) != first)
}

/// Per-label (tp, predicted) counts at a threshold.
fn label_counts(scores: &ScoreMatrix, j: usize, threshold: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut predicted = 0;
    for i in 0..scores.instances() {
        if scores.score(i, j) >= threshold {
            predicted += 1;
            if scores.is_positive(i, j) {
                tp += 1;
            }
        }
    }
    (tp, predicted)
}

fn micro_f1_from_counts(tp: usize, predicted: usize, gold: usize) -> f64 {
    if predicted + gold == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (predicted + gold) as f64
}

/// Per-label thresholds maximizing pooled micro-F1 on the tuning split.
///
/// Coordinate ascent from the all-0.5 start: sweep labels in id order,
/// adopt a candidate only on strict improvement, stop when a full pass
/// changes nothing (at most 10 passes). The result is never worse than
/// the fixed 0.5 policy on the tuning split.
pub fn odr_thresholds(scores: &ScoreMatrix) -> Result<Vec<f64>, PolicyError> {
    if scores.total_positives() == 0 {
        return Err(PolicyError::Invalid(
            "tuning split has no positive labels to tune on".into(),
        ));
    }
    let n = scores.n_labels();
    let gold_total: usize = (0..n).map(|j| scores.label_positives(j)).sum();

    let mut thresholds = vec![0.5; n];
    let mut counts: Vec<(usize, usize)> =
        (0..n).map(|j| label_counts(scores, j, thresholds[j])).collect();
    let candidates: Vec<Option<Vec<f64>>> = (0..n)
        .map(|j| {
            if !label_has_variation(scores, j) {
                return None; // flat scores: pinned at 0.5
            }
            let mut col: Vec<f64> = (0..scores.instances()).map(|i| scores.score(i, j)).collect();
            Some(candidate_thresholds(&mut col))
        })
        .collect();

    for _pass in 0..10 {
        let mut changed = false;
        for j in 0..n {
            let Some(cands) = &candidates[j] else { continue };
            let others_tp: usize =
                counts.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, c)| c.0).sum();
            let others_pred: usize =
                counts.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, c)| c.1).sum();
            let current =
                micro_f1_from_counts(others_tp + counts[j].0, others_pred + counts[j].1, gold_total);
            let mut best = current;
            let mut best_threshold = None;
            // candidates ascend, so on ties the lowest threshold sticks
            for &cand in cands {
                let (tp, predicted) = label_counts(scores, j, cand);
                let f1 = micro_f1_from_counts(others_tp + tp, others_pred + predicted, gold_total);
                if f1 > best + 1e-15 {
                    best = f1;
                    best_threshold = Some((cand, tp, predicted));
                }
            }
            if let Some((cand, tp, predicted)) = best_threshold {
                thresholds[j] = cand;
                counts[j] = (tp, predicted);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(thresholds)
}

/// Per-label threshold maximizing that label's own F1; labels whose best
/// F1 stays under `fbr` fall back to the threshold that reproduces the
/// label's training-set assignment rate on the tuning split.
pub fn scutfbr_thresholds(
    scores: &ScoreMatrix,
    train_priors: &[f64],
    fbr: f64,
) -> Result<Vec<f64>, PolicyError> {
    if train_priors.len() != scores.n_labels() {
        return Err(PolicyError::Shape(format!(
            "{} priors for {} labels",
            train_priors.len(),
            scores.n_labels()
        )));
    }
    if !(0.0..=1.0).contains(&fbr) {
        return Err(PolicyError::Invalid(format!("fbr must lie in [0, 1], got {fbr}")));
    }
    if scores.total_positives() == 0 && fbr == 0.0 {
        return Err(PolicyError::Invalid(
            "tuning split has no positive labels to tune on".into(),
        ));
    }

    let n = scores.n_labels();
    let mut thresholds = Vec::with_capacity(n);
    for j in 0..n {
        if !label_has_variation(scores, j) {
            thresholds.push(0.5);
            continue;
        }
        let mut col: Vec<f64> = (0..scores.instances()).map(|i| scores.score(i, j)).collect();
        let candidates = candidate_thresholds(&mut col);
        let positives = scores.label_positives(j);
        let mut best_f1 = -1.0;
        let mut best_threshold = 0.5;
        for &cand in &candidates {
            let (tp, predicted) = label_counts(scores, j, cand);
            // no tuning positives means F1 is meaningless for this label;
            // score it 0 so the fallback can take over
            let f1 = if positives == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (predicted + positives) as f64
            };
            if f1 > best_f1 + 1e-15 {
                best_f1 = f1;
                best_threshold = cand;
            }
        }
        if best_f1 < fbr {
            thresholds.push(proportion_threshold(scores, j, train_priors[j]));
        } else {
            thresholds.push(best_threshold);
        }
    }
    Ok(thresholds)
}

/// Threshold assigning label j to (about) its training prior rate of the
/// tuning instances: cut just below the k-th highest score.
fn proportion_threshold(scores: &ScoreMatrix, j: usize, prior: f64) -> f64 {
    let m = scores.instances();
    let mut col: Vec<f64> = (0..m).map(|i| scores.score(i, j)).collect();
    col.sort_by(|a, b| b.total_cmp(a));
    let k = (prior * m as f64).round() as usize;
    let threshold = if k == 0 {
        1.0 - THRESHOLD_CLAMP
    } else if k >= m {
        THRESHOLD_CLAMP
    } else {
        (col[k - 1] + col[k]) / 2.0
    };
    threshold.clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP)
}

#[cfg(test)]
mod tests;
