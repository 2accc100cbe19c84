use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    action_log_prob, build_gru_cell, build_policy_heads, compute_reward, episode_returns,
    generate_policies, gru_step, insert_params, policy_input, sample_action, squash_thresholds,
    squash_weights, MetaError, MetaParams, MetaState, PolicyLogits, PolicyPair,
};
use crate::classifier::Classifier;
use crate::data::{sample_batch, MultiLabelDataset};
use crate::ndiff::{sgd_step, Tape, Tensor};

/// How to run one episode of meta-driven classifier training.
#[derive(Clone, Debug)]
pub struct EpisodeConfig {
    /// Steps per episode (T).
    pub steps: usize,
    pub batch_size: usize,
    pub classifier_lr: f64,
    /// Stddev of the Gaussian action noise; 0 runs the deterministic mean
    /// policy (test-time mode).
    pub sigma: f64,
    /// Use the entire training set as the batch at every step.
    pub full_batch: bool,
    /// First GRU input (w_0, p_0).
    pub init: PolicyPair,
    /// Fresh classifier parameters at episode start.
    pub reinit_classifier: bool,
}

impl EpisodeConfig {
    fn validate(&self, n_labels: usize) -> Result<(), MetaError> {
        if self.steps == 0 {
            return Err(MetaError::Config("episode needs at least one step".into()));
        }
        if !self.full_batch && self.batch_size == 0 {
            return Err(MetaError::Config("batch size must be positive".into()));
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(MetaError::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        self.init.validate()?;
        if self.init.n() != n_labels {
            return Err(MetaError::Config(format!(
                "initial policy covers {} labels, meta-learner expects {n_labels}",
                self.init.n()
            )));
        }
        Ok(())
    }
}

/// The sampled pre-squash action of one step; the surrogate objective
/// treats these as constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampledStep {
    pub w_logits: Vec<f64>,
    pub p_logits: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    /// Policy actually applied to the classifier (post-squash).
    pub policy: PolicyPair,
    pub mean_logits: PolicyLogits,
    pub sampled: SampledStep,
    pub reward: f64,
    pub log_prob: f64,
    pub classifier_loss: f64,
    /// Return baseline used for this step's advantage; filled by the trainer.
    pub baseline: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn returns(&self) -> Vec<f64> {
        episode_returns(&self.rewards())
    }

    pub fn mean_reward(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.rewards().iter().sum::<f64>() / self.steps.len() as f64
    }

    pub fn final_reward(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.reward)
    }

    pub fn final_loss(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.classifier_loss)
    }

    pub fn sampled_steps(&self) -> Vec<SampledStep> {
        self.steps.iter().map(|s| s.sampled.clone()).collect()
    }

    pub fn final_policy(&self) -> Option<&PolicyPair> {
        self.steps.last().map(|s| &s.policy)
    }
}

/// Run one episode: per step, advance the GRU, emit (and optionally
/// perturb) the policy pair, train the classifier one step under the
/// weight vector, then score the refreshed probabilities on the same batch
/// against the threshold vector.
pub fn run_episode(
    meta: &MetaParams,
    classifier: &mut dyn Classifier,
    dataset: &MultiLabelDataset,
    config: &EpisodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeTrace, MetaError> {
    config.validate(meta.n_labels)?;
    if dataset.is_empty() {
        return Err(MetaError::Config("episode needs a non-empty dataset".into()));
    }
    if config.reinit_classifier {
        classifier.reinit(rng);
    }

    let mut state = MetaState::zero(meta.hidden);
    let mut prev = config.init.clone();
    let mut trace = EpisodeTrace::default();

    for _ in 0..config.steps {
        state = gru_step(meta, &state, &prev)?;
        let (mean_pair, mean_logits) = generate_policies(meta, &state)?;
        let (policy, sampled, log_prob) = if config.sigma > 0.0 {
            let action = sample_action(&mean_logits, config.sigma, rng)?;
            (
                action.policy,
                SampledStep { w_logits: action.w_logits, p_logits: action.p_logits },
                action.log_prob,
            )
        } else {
            (
                mean_pair,
                SampledStep {
                    w_logits: mean_logits.w_logits.clone(),
                    p_logits: mean_logits.p_logits.clone(),
                },
                0.0,
            )
        };

        let batch = if config.full_batch {
            dataset.full_batch()
        } else {
            sample_batch(dataset, config.batch_size, rng)?
        };
        let classifier_loss = classifier.train_step(&batch, &policy.w, config.classifier_lr)?;
        let probs = classifier.predict_proba(&batch)?;
        let reward = compute_reward(&probs, &batch.targets, &policy.p)?;
        if !reward.is_finite() || !classifier_loss.is_finite() {
            return Err(MetaError::NonFinite(format!(
                "reward {reward}, classifier loss {classifier_loss}"
            )));
        }

        trace.steps.push(StepRecord {
            policy: policy.clone(),
            mean_logits,
            sampled,
            reward,
            log_prob,
            classifier_loss,
            baseline: 0.0,
        });
        prev = policy;
    }
    Ok(trace)
}

/// Per-parameter gradients in [`MetaParams::tensors`] order.
#[derive(Clone, Debug)]
pub struct MetaGrads {
    tensors: Vec<Tensor>,
}

impl MetaGrads {
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }
}

/// Value and gradient of the surrogate objective
/// `sum_t log pi(a_t | s_t) * advantage_t` on a frozen action sequence.
///
/// The rollout is rebuilt on a single tape so gradients flow back through
/// every GRU step; the sampled actions (and hence the inputs they feed to
/// later steps) are constants.
pub fn reinforce_surrogate(
    meta: &MetaParams,
    init: &PolicyPair,
    steps: &[SampledStep],
    advantages: &[f64],
    sigma: f64,
) -> Result<(f64, MetaGrads), MetaError> {
    if steps.is_empty() || steps.len() != advantages.len() {
        return Err(MetaError::Config(format!(
            "{} sampled steps vs {} advantages",
            steps.len(),
            advantages.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(MetaError::Config("surrogate needs a positive sigma".into()));
    }

    let mut tape = Tape::new();
    let ids = insert_params(&mut tape, meta);
    let mut state = tape.leaf(Tensor::zeros(1, meta.hidden));
    let mut total = None;
    let noise_scale = -1.0 / (2.0 * sigma * sigma);
    let dims = (2 * meta.n_labels) as f64;
    let log_norm = -dims * (sigma.ln() + 0.5 * std::f64::consts::TAU.ln());

    for (t, (step, &advantage)) in steps.iter().zip(advantages).enumerate() {
        let input_pair = if t == 0 {
            init.clone()
        } else {
            PolicyPair {
                w: squash_weights(&steps[t - 1].w_logits),
                p: squash_thresholds(&steps[t - 1].p_logits),
            }
        };
        let input = tape.leaf(policy_input(&input_pair));
        state = build_gru_cell(&mut tape, &ids, state, input)?;
        let (wl, pl) = build_policy_heads(&mut tape, &ids, state)?;

        let a_w = tape.leaf(Tensor::row_vector(&step.w_logits));
        let a_p = tape.leaf(Tensor::row_vector(&step.p_logits));
        let dw = tape.sub(a_w, wl)?;
        let dw2 = tape.mul(dw, dw)?;
        let sum_w = tape.sum(dw2);
        let dp = tape.sub(a_p, pl)?;
        let dp2 = tape.mul(dp, dp)?;
        let sum_p = tape.sum(dp2);
        let sq_total = tape.add(sum_w, sum_p)?;
        let scaled = tape.scale(sq_total, noise_scale);
        let log_pi = tape.add_scalar(scaled, log_norm);
        let term = tape.scale(log_pi, advantage);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }

    let total = total.expect("at least one step");
    let value = tape.value(total).get(0, 0);
    let grads = tape.backward(total)?;
    let tensors = ids.in_order().iter().map(|id| grads.wrt(*id).clone()).collect();
    Ok((value, MetaGrads { tensors }))
}

#[derive(Clone, Debug)]
pub struct TrainMetaConfig {
    /// Episodes (M).
    pub episodes: usize,
    /// Steps per episode (T).
    pub steps: usize,
    pub batch_size: usize,
    pub classifier_lr: f64,
    pub sigma: f64,
    pub meta_lr: f64,
    /// Decay of the per-step-index exponential moving average baseline.
    pub baseline_decay: f64,
    /// Global-norm gradient clip; updates keep their direction.
    pub grad_clip: Option<f64>,
    pub reinit_classifier: bool,
    pub init: PolicyPair,
}

impl TrainMetaConfig {
    pub fn defaults(n_labels: usize) -> Self {
        TrainMetaConfig {
            episodes: 200,
            steps: 30,
            batch_size: 32,
            classifier_lr: 0.1,
            sigma: 0.1,
            meta_lr: 0.01,
            baseline_decay: 0.9,
            grad_clip: Some(5.0),
            reinit_classifier: true,
            init: PolicyPair::uniform(n_labels),
        }
    }

    fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            classifier_lr: self.classifier_lr,
            sigma: self.sigma,
            full_batch: false,
            init: self.init.clone(),
            reinit_classifier: self.reinit_classifier,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeLogRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub final_reward: f64,
    pub loss_at_t: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub rows: Vec<EpisodeLogRow>,
}

/// REINFORCE training loop: per episode, roll out with exploration noise,
/// compute suffix-sum returns, subtract the per-step-index EMA baseline,
/// and ascend the surrogate gradient.
///
/// The baseline initializes to the first episode's returns, so the first
/// update is exactly zero.
pub fn train_meta(
    meta: &mut MetaParams,
    classifier: &mut dyn Classifier,
    dataset: &MultiLabelDataset,
    config: &TrainMetaConfig,
    rng: &mut ChaCha8Rng,
    mut on_episode: impl FnMut(&EpisodeLogRow),
) -> Result<TrainLog, MetaError> {
    if config.episodes == 0 {
        return Err(MetaError::Config("need at least one episode".into()));
    }
    if !(config.sigma > 0.0) {
        return Err(MetaError::Config("training requires sigma > 0".into()));
    }
    if !(config.meta_lr > 0.0) {
        return Err(MetaError::Config("meta learning rate must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.baseline_decay) {
        return Err(MetaError::Config("baseline decay must lie in [0, 1)".into()));
    }
    let episode_config = config.episode_config();

    let mut baseline: Vec<f64> = Vec::new();
    let mut log = TrainLog::default();
    for episode in 1..=config.episodes {
        let start = Instant::now();
        let mut trace = run_episode(meta, classifier, dataset, &episode_config, rng)?;
        let returns = trace.returns();
        if baseline.is_empty() {
            baseline = returns.clone();
        }
        for (step, &b) in trace.steps.iter_mut().zip(&baseline) {
            step.baseline = b;
        }
        let advantages: Vec<f64> = returns.iter().zip(&baseline).map(|(r, b)| r - b).collect();

        let (value, mut grads) =
            reinforce_surrogate(meta, &config.init, &trace.sampled_steps(), &advantages, config.sigma)?;
        if !value.is_finite() || !grads.all_finite() {
            return Err(MetaError::NonFinite(format!(
                "surrogate value {value} at episode {episode}"
            )));
        }
        if let Some(clip) = config.grad_clip {
            let norm = grads.global_norm();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        // ascend: flip the sign once, then a plain descent step
        grads.scale(-1.0);
        for (param, grad) in meta.tensors_mut().into_iter().zip(grads.tensors()) {
            sgd_step(param, grad, config.meta_lr)?;
        }
        if !meta.all_finite() {
            return Err(MetaError::NonFinite(format!("meta parameters at episode {episode}")));
        }
        for (b, r) in baseline.iter_mut().zip(&returns) {
            *b = config.baseline_decay * *b + (1.0 - config.baseline_decay) * r;
        }

        let row = EpisodeLogRow {
            episode,
            mean_reward: trace.mean_reward(),
            final_reward: trace.final_reward(),
            loss_at_t: trace.final_loss(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        on_episode(&row);
        log.rows.push(row);
    }
    Ok(log)
}

/// Test-time protocol: one deterministic episode (no action noise) with
/// the whole training set as the batch at every step; the step-T policy
/// pair is the final answer.
pub fn extract_final_policies(
    meta: &MetaParams,
    classifier: &mut dyn Classifier,
    dataset: &MultiLabelDataset,
    steps: usize,
    init: &PolicyPair,
    classifier_lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(PolicyPair, EpisodeTrace), MetaError> {
    let config = EpisodeConfig {
        steps,
        batch_size: dataset.len(),
        classifier_lr,
        sigma: 0.0,
        full_batch: true,
        init: init.clone(),
        reinit_classifier: true,
    };
    let trace = run_episode(meta, classifier, dataset, &config, rng)?;
    let policy = trace.final_policy().expect("episode has steps").clone();
    policy.validate()?;
    Ok((policy, trace))
}
