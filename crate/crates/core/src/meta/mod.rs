//! GRU meta-learner that emits a per-label training-weight vector and a
//! per-label prediction-threshold vector at every step of a classifier's
//! training run, trained with REINFORCE on a probability-calibration
//! reward.
//!
//! The recurrent state consumes only the previously emitted policy pair,
//! so a deterministic rollout is a fixed iteration of the cell on its own
//! outputs; the classifier enters the picture through the reward.

mod episode;

pub use episode::{
    extract_final_policies, reinforce_surrogate, run_episode, train_meta, EpisodeConfig,
    EpisodeLogRow, EpisodeTrace, MetaGrads, SampledStep, StepRecord, TrainLog, TrainMetaConfig,
};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifierError;
use crate::data::DataError;
use crate::ndiff::{NdiffError, NodeId, Tape, Tensor};

/// Prediction thresholds are clamped into [0.01, 0.99]; the reward divides
/// by the threshold, so it must stay away from zero.
pub const THRESHOLD_CLAMP: f64 = 0.01;

#[derive(Debug, Error)]
pub enum MetaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Ndiff(#[from] NdiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
}

/// A training-weight vector on the simplex plus a prediction-threshold
/// vector in [0.01, 0.99], both indexed by label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyPair {
    pub w: Vec<f64>,
    pub p: Vec<f64>,
}

impl PolicyPair {
    /// Uniform weights and 0.5 thresholds — the fixed conventional policy
    /// and the rollout's initial input.
    pub fn uniform(n: usize) -> Self {
        PolicyPair { w: vec![1.0 / n as f64; n], p: vec![0.5; n] }
    }

    pub fn n(&self) -> usize {
        self.w.len()
    }

    pub fn validate(&self) -> Result<(), MetaError> {
        if self.w.len() != self.p.len() || self.w.is_empty() {
            return Err(MetaError::Contract(format!(
                "policy vectors disagree: {} weights vs {} thresholds",
                self.w.len(),
                self.p.len()
            )));
        }
        let sum: f64 = self.w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetaError::Contract(format!("weights sum to {sum}")));
        }
        if self.w.iter().any(|&w| !(w > 0.0)) {
            return Err(MetaError::Contract("weights must be strictly positive".into()));
        }
        if self.p.iter().any(|&p| !(THRESHOLD_CLAMP..=1.0 - THRESHOLD_CLAMP).contains(&p)) {
            return Err(MetaError::Contract(format!(
                "thresholds must lie in [{THRESHOLD_CLAMP}, {}]",
                1.0 - THRESHOLD_CLAMP
            )));
        }
        Ok(())
    }
}

/// GRU cell parameters plus the two affine policy heads. The cell input is
/// the 2N-wide concatenation [p; w] of the previous policy pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaParams {
    pub n_labels: usize,
    pub hidden: usize,
    pub w_update: Tensor,
    pub u_update: Tensor,
    pub b_update: Tensor,
    pub w_reset: Tensor,
    pub u_reset: Tensor,
    pub b_reset: Tensor,
    pub w_cand: Tensor,
    pub u_cand: Tensor,
    pub b_cand: Tensor,
    pub head_w: Tensor,
    pub head_w_bias: Tensor,
    pub head_p: Tensor,
    pub head_p_bias: Tensor,
}

impl MetaParams {
    pub fn new(n_labels: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = 2 * n_labels;
        MetaParams {
            n_labels,
            hidden,
            w_update: Tensor::glorot_uniform(input, hidden, rng),
            u_update: Tensor::glorot_uniform(hidden, hidden, rng),
            b_update: Tensor::zeros(1, hidden),
            w_reset: Tensor::glorot_uniform(input, hidden, rng),
            u_reset: Tensor::glorot_uniform(hidden, hidden, rng),
            b_reset: Tensor::zeros(1, hidden),
            w_cand: Tensor::glorot_uniform(input, hidden, rng),
            u_cand: Tensor::glorot_uniform(hidden, hidden, rng),
            b_cand: Tensor::zeros(1, hidden),
            head_w: Tensor::glorot_uniform(hidden, n_labels, rng),
            head_w_bias: Tensor::zeros(1, n_labels),
            head_p: Tensor::glorot_uniform(hidden, n_labels, rng),
            head_p_bias: Tensor::zeros(1, n_labels),
        }
    }

    /// All-zero parameters: the rollout then emits the uniform policy at
    /// every step.
    pub fn zeroed(n_labels: usize, hidden: usize) -> Self {
        let input = 2 * n_labels;
        MetaParams {
            n_labels,
            hidden,
            w_update: Tensor::zeros(input, hidden),
            u_update: Tensor::zeros(hidden, hidden),
            b_update: Tensor::zeros(1, hidden),
            w_reset: Tensor::zeros(input, hidden),
            u_reset: Tensor::zeros(hidden, hidden),
            b_reset: Tensor::zeros(1, hidden),
            w_cand: Tensor::zeros(input, hidden),
            u_cand: Tensor::zeros(hidden, hidden),
            b_cand: Tensor::zeros(1, hidden),
            head_w: Tensor::zeros(hidden, n_labels),
            head_w_bias: Tensor::zeros(1, n_labels),
            head_p: Tensor::zeros(hidden, n_labels),
            head_p_bias: Tensor::zeros(1, n_labels),
        }
    }

    /// Parameter tensors in a fixed order shared by gradients, the
    /// optimizer and checkpoints.
    pub fn tensors(&self) -> [&Tensor; 13] {
        [
            &self.w_update,
            &self.u_update,
            &self.b_update,
            &self.w_reset,
            &self.u_reset,
            &self.b_reset,
            &self.w_cand,
            &self.u_cand,
            &self.b_cand,
            &self.head_w,
            &self.head_w_bias,
            &self.head_p,
            &self.head_p_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 13] {
        [
            &mut self.w_update,
            &mut self.u_update,
            &mut self.b_update,
            &mut self.w_reset,
            &mut self.u_reset,
            &mut self.b_reset,
            &mut self.w_cand,
            &mut self.u_cand,
            &mut self.b_cand,
            &mut self.head_w,
            &mut self.head_w_bias,
            &mut self.head_p,
            &mut self.head_p_bias,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

/// GRU hidden state; entries stay in (-1, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct MetaState {
    pub hidden: Tensor,
}

impl MetaState {
    pub fn zero(hidden: usize) -> Self {
        MetaState { hidden: Tensor::zeros(1, hidden) }
    }
}

/// Pre-squash head outputs; the stochastic action layer perturbs these.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyLogits {
    pub w_logits: Vec<f64>,
    pub p_logits: Vec<f64>,
}

/// A sampled action: Gaussian noise on both logit vectors, squashed into a
/// valid policy pair, with the log-density of the noise.
#[derive(Clone, Debug)]
pub struct SampledAction {
    pub policy: PolicyPair,
    pub w_logits: Vec<f64>,
    pub p_logits: Vec<f64>,
    pub log_prob: f64,
}

pub(crate) struct MetaNodeIds {
    pub w_update: NodeId,
    pub u_update: NodeId,
    pub b_update: NodeId,
    pub w_reset: NodeId,
    pub u_reset: NodeId,
    pub b_reset: NodeId,
    pub w_cand: NodeId,
    pub u_cand: NodeId,
    pub b_cand: NodeId,
    pub head_w: NodeId,
    pub head_w_bias: NodeId,
    pub head_p: NodeId,
    pub head_p_bias: NodeId,
}

impl MetaNodeIds {
    pub fn in_order(&self) -> [NodeId; 13] {
        [
            self.w_update,
            self.u_update,
            self.b_update,
            self.w_reset,
            self.u_reset,
            self.b_reset,
            self.w_cand,
            self.u_cand,
            self.b_cand,
            self.head_w,
            self.head_w_bias,
            self.head_p,
            self.head_p_bias,
        ]
    }
}

pub(crate) fn insert_params(tape: &mut Tape, params: &MetaParams) -> MetaNodeIds {
    MetaNodeIds {
        w_update: tape.leaf(params.w_update.clone()),
        u_update: tape.leaf(params.u_update.clone()),
        b_update: tape.leaf(params.b_update.clone()),
        w_reset: tape.leaf(params.w_reset.clone()),
        u_reset: tape.leaf(params.u_reset.clone()),
        b_reset: tape.leaf(params.b_reset.clone()),
        w_cand: tape.leaf(params.w_cand.clone()),
        u_cand: tape.leaf(params.u_cand.clone()),
        b_cand: tape.leaf(params.b_cand.clone()),
        head_w: tape.leaf(params.head_w.clone()),
        head_w_bias: tape.leaf(params.head_w_bias.clone()),
        head_p: tape.leaf(params.head_p.clone()),
        head_p_bias: tape.leaf(params.head_p_bias.clone()),
    }
}

/// One GRU update on the tape:
/// z = σ(xW_z + hU_z + b_z), r = σ(xW_r + hU_r + b_r),
/// c = tanh(xW_c + (r⊙h)U_c + b_c), h' = (1-z)⊙h + z⊙c.
pub(crate) fn build_gru_cell(
    tape: &mut Tape,
    ids: &MetaNodeIds,
    state: NodeId,
    input: NodeId,
) -> Result<NodeId, NdiffError> {
    let zx = tape.matmul(input, ids.w_update)?;
    let zh = tape.matmul(state, ids.u_update)?;
    let z_pre = tape.add(zx, zh)?;
    let z_pre = tape.add(z_pre, ids.b_update)?;
    let z = tape.sigmoid(z_pre);

    let rx = tape.matmul(input, ids.w_reset)?;
    let rh = tape.matmul(state, ids.u_reset)?;
    let r_pre = tape.add(rx, rh)?;
    let r_pre = tape.add(r_pre, ids.b_reset)?;
    let r = tape.sigmoid(r_pre);

    let gated = tape.mul(r, state)?;
    let cx = tape.matmul(input, ids.w_cand)?;
    let ch = tape.matmul(gated, ids.u_cand)?;
    let c_pre = tape.add(cx, ch)?;
    let c_pre = tape.add(c_pre, ids.b_cand)?;
    let cand = tape.tanh(c_pre);

    let neg_z = tape.scale(z, -1.0);
    let one_minus_z = tape.add_scalar(neg_z, 1.0);
    let keep = tape.mul(one_minus_z, state)?;
    let update = tape.mul(z, cand)?;
    tape.add(keep, update)
}

/// Affine policy heads over the hidden state; returns pre-squash logits.
pub(crate) fn build_policy_heads(
    tape: &mut Tape,
    ids: &MetaNodeIds,
    state: NodeId,
) -> Result<(NodeId, NodeId), NdiffError> {
    let wl = tape.matmul(state, ids.head_w)?;
    let wl = tape.add(wl, ids.head_w_bias)?;
    let pl = tape.matmul(state, ids.head_p)?;
    let pl = tape.add(pl, ids.head_p_bias)?;
    Ok((wl, pl))
}

/// The GRU input for a step: the previous policy as [p; w].
pub(crate) fn policy_input(prev: &PolicyPair) -> Tensor {
    let mut data = Vec::with_capacity(2 * prev.n());
    data.extend_from_slice(&prev.p);
    data.extend_from_slice(&prev.w);
    Tensor::row_vector(&data)
}

/// Advance the meta-learner state by one step.
pub fn gru_step(
    params: &MetaParams,
    state: &MetaState,
    prev: &PolicyPair,
) -> Result<MetaState, MetaError> {
    if prev.n() != params.n_labels {
        return Err(MetaError::Contract(format!(
            "policy has {} labels, meta-learner expects {}",
            prev.n(),
            params.n_labels
        )));
    }
    if state.hidden.cols() != params.hidden {
        return Err(MetaError::Contract(format!(
            "state width {} does not match hidden size {}",
            state.hidden.cols(),
            params.hidden
        )));
    }
    let mut tape = Tape::new();
    let ids = insert_params(&mut tape, params);
    let s = tape.leaf(state.hidden.clone());
    let x = tape.leaf(policy_input(prev));
    let out = build_gru_cell(&mut tape, &ids, s, x)?;
    Ok(MetaState { hidden: tape.value(out).clone() })
}

/// Stable softmax over a logit slice; same arithmetic as the tape op.
pub fn squash_weights(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Sigmoid then clamp into [0.01, 0.99]; same arithmetic as the tape ops.
pub fn squash_thresholds(logits: &[f64]) -> Vec<f64> {
    logits
        .iter()
        .map(|&x| crate::ndiff::sigmoid_scalar(x).clamp(THRESHOLD_CLAMP, 1.0 - THRESHOLD_CLAMP))
        .collect()
}

/// Mean policy for the current state: w = softmax(head), p = clamped
/// sigmoid(head). The raw logits feed the stochastic action layer.
pub fn generate_policies(
    params: &MetaParams,
    state: &MetaState,
) -> Result<(PolicyPair, PolicyLogits), MetaError> {
    let mut tape = Tape::new();
    let ids = insert_params(&mut tape, params);
    let s = tape.leaf(state.hidden.clone());
    let (wl, pl) = build_policy_heads(&mut tape, &ids, s)?;
    let w_logits = tape.value(wl).data().to_vec();
    let p_logits = tape.value(pl).data().to_vec();
    let pair = PolicyPair {
        w: squash_weights(&w_logits),
        p: squash_thresholds(&p_logits),
    };
    Ok((pair, PolicyLogits { w_logits, p_logits }))
}

/// Log-density of a diagonal Gaussian with the given sigma, evaluated at
/// `sampled` around `mean`. Sums w-logit terms first, then p-logit terms.
pub fn action_log_prob(mean: &PolicyLogits, w_logits: &[f64], p_logits: &[f64], sigma: f64) -> f64 {
    let dims = (w_logits.len() + p_logits.len()) as f64;
    let sq = |m: &[f64], a: &[f64]| -> f64 {
        m.iter().zip(a).map(|(mu, x)| (x - mu) * (x - mu)).sum()
    };
    let total = sq(&mean.w_logits, w_logits) + sq(&mean.p_logits, p_logits);
    total * (-1.0 / (2.0 * sigma * sigma))
        - dims * (sigma.ln() + 0.5 * std::f64::consts::TAU.ln())
}

/// Perturb both logit vectors with Gaussian noise and squash the result.
pub fn sample_action(
    mean: &PolicyLogits,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SampledAction, MetaError> {
    if !(sigma > 0.0) {
        return Err(MetaError::Config(format!("sampling sigma must be positive, got {sigma}")));
    }
    let noised = |logits: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        logits
            .iter()
            .map(|&x| {
                let eps: f64 = StandardNormal.sample(rng);
                x + sigma * eps
            })
            .collect()
    };
    let w_logits = noised(&mean.w_logits, rng);
    let p_logits = noised(&mean.p_logits, rng);
    let log_prob = action_log_prob(mean, &w_logits, &p_logits, sigma);
    Ok(SampledAction {
        policy: PolicyPair {
            w: squash_weights(&w_logits),
            p: squash_thresholds(&p_logits),
        },
        w_logits,
        p_logits,
        log_prob,
    })
}

/// Calibration reward: sum over the batch of (-1)^{y*} (p_j - y_j) / p_j.
/// Positive labels reward probability mass above the threshold, negative
/// labels reward mass below it.
pub fn compute_reward(
    probs: &crate::classifier::ProbMatrix,
    targets: &Tensor,
    thresholds: &[f64],
) -> Result<f64, MetaError> {
    if probs.tensor().shape() != targets.shape() {
        return Err(MetaError::Contract(format!(
            "probs {:?} vs targets {:?}",
            probs.tensor().shape(),
            targets.shape()
        )));
    }
    if thresholds.len() != probs.cols() {
        return Err(MetaError::Contract(format!(
            "{} thresholds for {} labels",
            thresholds.len(),
            probs.cols()
        )));
    }
    if let Some(&bad) = thresholds.iter().find(|&&p| p < THRESHOLD_CLAMP) {
        return Err(MetaError::Contract(format!(
            "threshold {bad} below the {THRESHOLD_CLAMP} clamp"
        )));
    }
    let mut reward = 0.0;
    for i in 0..probs.rows() {
        for j in 0..probs.cols() {
            let sign = if targets.get(i, j) == 1.0 { -1.0 } else { 1.0 };
            reward += sign * (thresholds[j] - probs.get(i, j)) / thresholds[j];
        }
    }
    Ok(reward)
}

/// Future returns R_t = r_t + R_{t+1}, with R after the last step zero.
pub fn episode_returns(rewards: &[f64]) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (slot, &r) in returns.iter_mut().zip(rewards).rev() {
        acc += r;
        *slot = acc;
    }
    returns
}
