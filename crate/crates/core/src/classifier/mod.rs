//! Pluggable multi-label classifier with a reference MLP implementation.
//!
//! The reference model is a one-hidden-layer MLP over pre-extracted feature
//! vectors with an independent sigmoid output per label. Training minimizes
//! a per-label weighted cross-entropy; prediction thresholds each label's
//! probability separately.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Batch;
use crate::ndiff::{NdiffError, NodeId, Sgd, Tape, Tensor};

/// Probabilities from the forward pass are clamped into
/// [PROB_EPS, 1 - PROB_EPS] before any log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("weight vector contract violated: {0}")]
    Weights(String),
    #[error(transparent)]
    Ndiff(#[from] NdiffError),
}

/// Per-instance per-label probabilities, strictly inside (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix {
    values: Tensor,
}

impl ProbMatrix {
    pub fn new(values: Tensor) -> Result<Self, ClassifierError> {
        if values.data().iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(ClassifierError::Dim(
                "probabilities must lie strictly inside (0, 1)".into(),
            ));
        }
        Ok(ProbMatrix { values })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values.get(row, col)
    }

    pub fn row(&self, row: usize) -> &[f64] {
        self.values.row(row)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }
}

/// Contract shared by every classifier the meta-learner can drive.
pub trait Classifier {
    fn feature_dim(&self) -> usize;

    fn n_labels(&self) -> usize;

    /// Forward pass; deterministic for fixed parameters.
    fn predict_proba(&self, batch: &Batch) -> Result<ProbMatrix, ClassifierError>;

    /// One SGD step on the weighted cross-entropy objective. Returns the
    /// loss at the parameters *before* the step.
    fn train_step(&mut self, batch: &Batch, weights: &[f64], lr: f64)
        -> Result<f64, ClassifierError>;

    /// Fresh random parameters; forgets any optimizer state.
    fn reinit(&mut self, rng: &mut ChaCha8Rng);
}

/// Reference MLP: features (D) → tanh hidden (H) → sigmoid per label (N).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpClassifier {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    momentum: f64,
    #[serde(skip)]
    opt: Option<Sgd>,
}

struct ForwardNodes {
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    probs: NodeId,
}

impl MlpClassifier {
    pub fn new(feature_dim: usize, hidden: usize, n_labels: usize, rng: &mut ChaCha8Rng) -> Self {
        MlpClassifier {
            w1: Tensor::glorot_uniform(feature_dim, hidden, rng),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::glorot_uniform(hidden, n_labels, rng),
            b2: Tensor::zeros(1, n_labels),
            momentum: 0.0,
            opt: None,
        }
    }

    /// All-zero parameters; every probability is exactly 0.5.
    pub fn zeroed(feature_dim: usize, hidden: usize, n_labels: usize) -> Self {
        MlpClassifier {
            w1: Tensor::zeros(feature_dim, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, n_labels),
            b2: Tensor::zeros(1, n_labels),
            momentum: 0.0,
            opt: None,
        }
    }

    pub fn with_momentum(mut self, momentum: f64) -> Self {
        self.momentum = momentum;
        self.opt = None;
        self
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    fn build_forward(&self, tape: &mut Tape, features: &Tensor) -> Result<ForwardNodes, ClassifierError> {
        if features.cols() != self.w1.rows() {
            return Err(ClassifierError::Dim(format!(
                "batch has {} features, classifier expects {}",
                features.cols(),
                self.w1.rows()
            )));
        }
        let w1 = tape.leaf(self.w1.clone());
        let b1 = tape.leaf(self.b1.clone());
        let w2 = tape.leaf(self.w2.clone());
        let b2 = tape.leaf(self.b2.clone());
        let x = tape.leaf(features.clone());
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.tanh(h);
        let logits = tape.matmul(h, w2)?;
        let logits = tape.add_row(logits, b2)?;
        let sig = tape.sigmoid(logits);
        let probs = tape.clamp(sig, PROB_EPS, 1.0 - PROB_EPS);
        Ok(ForwardNodes { w1, b1, w2, b2, probs })
    }
}

impl Classifier for MlpClassifier {
    fn feature_dim(&self) -> usize {
        self.w1.rows()
    }

    fn n_labels(&self) -> usize {
        self.w2.cols()
    }

    fn predict_proba(&self, batch: &Batch) -> Result<ProbMatrix, ClassifierError> {
        let mut tape = Tape::new();
        let nodes = self.build_forward(&mut tape, &batch.features)?;
        ProbMatrix::new(tape.value(nodes.probs).clone())
    }

    fn train_step(
        &mut self,
        batch: &Batch,
        weights: &[f64],
        lr: f64,
    ) -> Result<f64, ClassifierError> {
        validate_weights(weights, self.n_labels())?;
        if batch.targets.cols() != self.n_labels() {
            return Err(ClassifierError::Dim(format!(
                "batch has {} label columns, classifier expects {}",
                batch.targets.cols(),
                self.n_labels()
            )));
        }
        let mut tape = Tape::new();
        let nodes = self.build_forward(&mut tape, &batch.features)?;
        let loss = build_weighted_ce(&mut tape, nodes.probs, &batch.targets, weights)?;
        let loss_value = tape.value(loss).get(0, 0);
        let grads = tape.backward(loss)?;

        let opt = self.opt.get_or_insert_with(|| Sgd::new(lr, self.momentum));
        opt.set_lr(lr);
        opt.step(
            &mut [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2],
            &[grads.wrt(nodes.w1), grads.wrt(nodes.b1), grads.wrt(nodes.w2), grads.wrt(nodes.b2)],
        )?;
        Ok(loss_value)
    }

    fn reinit(&mut self, rng: &mut ChaCha8Rng) {
        let (d, h, n) = (self.feature_dim(), self.hidden(), self.n_labels());
        self.w1 = Tensor::glorot_uniform(d, h, rng);
        self.b1 = Tensor::zeros(1, h);
        self.w2 = Tensor::glorot_uniform(h, n, rng);
        self.b2 = Tensor::zeros(1, n);
        self.opt = None;
    }
}

fn validate_weights(weights: &[f64], n_labels: usize) -> Result<(), ClassifierError> {
    if weights.len() != n_labels {
        return Err(ClassifierError::Weights(format!(
            "{} weights for {n_labels} labels",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
        return Err(ClassifierError::Weights("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ClassifierError::Weights(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Append the weighted cross-entropy graph for given probabilities.
///
/// The per-label coefficient is `w_j * N`, so a uniform weight vector
/// reproduces the plain sum-reduced cross-entropy term for term.
fn build_weighted_ce(
    tape: &mut Tape,
    probs: NodeId,
    targets: &Tensor,
    weights: &[f64],
) -> Result<NodeId, ClassifierError> {
    let n = weights.len() as f64;
    let coeff: Vec<f64> = weights.iter().map(|&w| w * n).collect();
    let ones_minus_targets = {
        let data = targets.data().iter().map(|&t| 1.0 - t).collect();
        Tensor::from_vec(targets.rows(), targets.cols(), data)?
    };
    let tgt = tape.leaf(targets.clone());
    let inv_tgt = tape.leaf(ones_minus_targets);
    let coeff_row = tape.leaf(Tensor::row_vector(&coeff));

    let log_p = tape.log(probs)?;
    let pos = tape.mul(tgt, log_p)?;
    let neg_p = tape.scale(probs, -1.0);
    let one_minus_p = tape.add_scalar(neg_p, 1.0);
    let log_1p = tape.log(one_minus_p)?;
    let neg = tape.mul(inv_tgt, log_1p)?;
    let term = tape.add(pos, neg)?;
    let weighted = tape.mul_row(term, coeff_row)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0))
}

/// Weighted cross-entropy of a probability matrix against binary targets.
///
/// `weights` must lie on the simplex (within 1e-6). Matches the training
/// objective bit for bit since both run through the same graph.
pub fn weighted_cross_entropy(
    probs: &ProbMatrix,
    targets: &Tensor,
    weights: &[f64],
) -> Result<f64, ClassifierError> {
    if !probs.tensor().same_shape(targets) {
        return Err(ClassifierError::Dim(format!(
            "probs {:?} vs targets {:?}",
            probs.tensor().shape(),
            targets.shape()
        )));
    }
    validate_weights(weights, probs.cols())?;
    let mut tape = Tape::new();
    let p = tape.leaf(probs.tensor().clone());
    let loss = build_weighted_ce(&mut tape, p, targets, weights)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Binary predictions: label j fires when its probability reaches the
/// label's threshold.
pub fn predict_labels(probs: &ProbMatrix, thresholds: &[f64]) -> Result<Tensor, ClassifierError> {
    if thresholds.len() != probs.cols() {
        return Err(ClassifierError::Dim(format!(
            "{} thresholds for {} labels",
            thresholds.len(),
            probs.cols()
        )));
    }
    let mut out = Tensor::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        for j in 0..probs.cols() {
            if probs.get(i, j) >= thresholds[j] {
                out.set(i, j, 1.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
