//! Supervised pretraining and the REINFORCE loop.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attribution::MaskMode;
use crate::corpus::{ParallelPair, StyledSentence, TokenId, END, START};
use crate::error::{Error, Result};
use crate::neural::{Adam, LabeledSequence, Model, WeightedSequence};
use crate::rewards::{RewardBreakdown, RewardCounters, RewardModels, StrategyKind};
use crate::rng::{derive_seed_path, rng_from_seed};
use crate::sampler::{generate_k_episodes, policy_prompt, Episode, SamplingConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MleConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            epochs: 8,
            batch_size: 16,
            lr: 1e-3,
            clip: Some(1.0),
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

/// Per-epoch mean per-token losses; the model is left at the best dev epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleReport {
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
    pub best_epoch: usize,
    pub steps: usize,
}

impl MleReport {
    pub fn best_dev_loss(&self) -> f64 {
        self.dev_loss[self.best_epoch]
    }
}

/// Teacher-forcing sequence for the policy: loss on the target tokens and END only.
pub fn policy_example<S: Scalar>(source: &[TokenId], target: &StyledSentence) -> WeightedSequence<S> {
    let mut tokens = policy_prompt(source, target.style);
    let start = tokens.len();
    tokens.extend_from_slice(&target.tokens);
    tokens.push(END);
    let weights = (0..tokens.len()).map(|t| if t >= start { S::one() } else { S::zero() }).collect();
    WeightedSequence { tokens, weights }
}

/// `[START, words..., END]` supervised everywhere after START.
pub fn lm_example<S: Scalar>(sentence: &[TokenId]) -> WeightedSequence<S> {
    let mut tokens = Vec::with_capacity(sentence.len() + 2);
    tokens.push(START);
    tokens.extend_from_slice(sentence);
    tokens.push(END);
    let weights = (0..tokens.len()).map(|t| if t == 0 { S::zero() } else { S::one() }).collect();
    WeightedSequence { tokens, weights }
}

pub fn classifier_example<S: Scalar>(sentence: &StyledSentence) -> LabeledSequence<S> {
    LabeledSequence {
        tokens: sentence.tokens.clone(),
        label: sentence.style.index(),
        weight: S::one(),
    }
}

trait Supervised<S: Scalar>: Clone {
    fn units(&self) -> usize;
}

impl<S: Scalar> Supervised<S> for WeightedSequence<S> {
    fn units(&self) -> usize {
        self.weights.iter().filter(|&&w| w != S::zero()).count()
    }
}

impl<S: Scalar> Supervised<S> for LabeledSequence<S> {
    fn units(&self) -> usize {
        1
    }
}

fn mean_loss<S: Scalar, E: Supervised<S>>(
    model: &Model<S>,
    data: &[E],
    loss_fn: &dyn Fn(&Model<S>, &E) -> Result<S>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut units = 0;
    for ex in data {
        total += loss_fn(model, ex)?.f64();
        units += ex.units();
    }
    Ok(if units == 0 { 0.0 } else { total / units as f64 })
}

fn train_loop<S: Scalar, E: Supervised<S>>(
    model: &mut Model<S>,
    train: &[E],
    dev: &[E],
    cfg: &MleConfig,
    grad_fn: &dyn Fn(&Model<S>, &[E]) -> Result<(S, Vec<S>)>,
    loss_fn: &dyn Fn(&Model<S>, &E) -> Result<S>,
) -> Result<MleReport> {
    if model.is_frozen() {
        return Err(Error::Frozen);
    }
    if train.is_empty() || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid("pretraining needs data, a positive batch size and at least one epoch"));
    }
    let mut adam = Adam::new(model.param_count());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = MleReport {
        train_loss: Vec::new(),
        dev_loss: Vec::new(),
        best_epoch: 0,
        steps: 0,
    };
    let mut best_params: Option<Vec<S>> = None;
    let lr = S::of(cfg.lr);
    let clip = cfg.clip.map(S::of);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from_seed(derive_seed_path(cfg.seed, &[epoch as u64])));
        let mut epoch_loss = 0.0;
        let mut epoch_units = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<E> = chunk.iter().map(|&i| train[i].clone()).collect();
            let units: usize = batch.iter().map(|e| e.units()).sum();
            if units == 0 {
                continue;
            }
            let (loss, mut grad) = grad_fn(model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("pretraining loss diverged in epoch {epoch}")));
            }
            epoch_loss += loss.f64();
            epoch_units += units;
            let scale = S::one() / S::of_usize(units);
            grad.iter_mut().for_each(|g| *g *= scale);
            match cfg.optimizer {
                Optimizer::Sgd => {
                    model.sgd_update(&grad, lr, clip)?;
                }
                Optimizer::Adam => {
                    adam.step(model, &grad, lr, clip)?;
                }
            }
            report.steps += 1;
        }
        let train_loss = epoch_loss / epoch_units.max(1) as f64;
        let dev_loss = if dev.is_empty() {
            train_loss
        } else {
            mean_loss(model, dev, loss_fn)?
        };
        log::info!("epoch {epoch}: train loss {train_loss:.4}, dev loss {dev_loss:.4}");
        report.train_loss.push(train_loss);
        report.dev_loss.push(dev_loss);
        if best_params.is_none() || dev_loss < report.dev_loss[report.best_epoch] {
            report.best_epoch = epoch;
            best_params = Some(model.params().to_vec());
        }
    }
    if let Some(best) = best_params {
        model.params_mut()?.copy_from_slice(&best);
    }
    Ok(report)
}

fn nll_of<S: Scalar>(model: &Model<S>, seq: &WeightedSequence<S>) -> Result<S> {
    let lp = model.sequence_log_probs(&seq.tokens, &vec![true; seq.tokens.len()])?;
    Ok(lp.values.iter().zip(&seq.weights).skip(1).map(|(&v, &w)| -w * v).sum())
}

fn weighted_grad<S: Scalar>(model: &Model<S>, batch: &[WeightedSequence<S>]) -> Result<(S, Vec<S>)> {
    model.weighted_nll_gradient(batch)
}

/// MLE on synthetic parallel pairs; source and markers are not supervised.
pub fn pretrain_policy<S: Scalar>(
    model: &mut Model<S>,
    train: &[ParallelPair],
    dev: &[ParallelPair],
    cfg: &MleConfig,
) -> Result<MleReport> {
    let ex = |p: &ParallelPair| policy_example::<S>(&p.source.tokens, &p.target);
    let train: Vec<_> = train.iter().map(ex).collect();
    let dev: Vec<_> = dev.iter().map(ex).collect();
    train_loop(model, &train, &dev, cfg, &weighted_grad, &nll_of)
}

/// MLE language modelling over plain sentences.
pub fn pretrain_lm<S: Scalar>(
    model: &mut Model<S>,
    train: &[StyledSentence],
    dev: &[StyledSentence],
    cfg: &MleConfig,
) -> Result<MleReport> {
    let train: Vec<_> = train.iter().map(|s| lm_example::<S>(&s.tokens)).collect();
    let dev: Vec<_> = dev.iter().map(|s| lm_example::<S>(&s.tokens)).collect();
    train_loop(model, &train, &dev, cfg, &weighted_grad, &nll_of)
}

/// Style classification with cross-entropy.
pub fn pretrain_classifier<S: Scalar>(
    model: &mut Model<S>,
    train: &[StyledSentence],
    dev: &[StyledSentence],
    cfg: &MleConfig,
) -> Result<MleReport> {
    let train: Vec<_> = train.iter().map(classifier_example::<S>).collect();
    let dev: Vec<_> = dev.iter().map(classifier_example::<S>).collect();
    let grad = |m: &Model<S>, b: &[LabeledSequence<S>]| m.classification_gradient(b);
    let loss = |m: &Model<S>, e: &LabeledSequence<S>| -> Result<S> {
        let p = m.classify(&e.tokens)?.probs[e.label];
        Ok(-p.ln())
    };
    train_loop(model, &train, &dev, cfg, &grad, &loss)
}

/// `Q_t = r_t + Σ_{i>t} γ^{i−t} r_i`; at γ = 0 the rewards are returned unchanged.
pub fn estimate_returns<S: Scalar>(rewards: &[S], gamma: f64) -> Vec<S> {
    if gamma == 0.0 {
        return rewards.to_vec();
    }
    let g = S::of(gamma);
    let mut q = rewards.to_vec();
    for t in (0..q.len().saturating_sub(1)).rev() {
        let next = q[t + 1];
        q[t] += g * next;
    }
    q
}

/// Flat mean of the returns of every token in the batch.
pub fn compute_baseline<S: Scalar>(episodes: &[Episode<S>]) -> Result<S> {
    let count: usize = episodes.iter().map(|e| e.returns.len()).sum();
    if count == 0 {
        return Err(Error::invalid("baseline of an empty batch"));
    }
    let total: S = episodes.iter().flat_map(|e| e.returns.iter().copied()).sum();
    Ok(total / S::of_usize(count))
}

/// Gradient of the negated surrogate `−mean_t (Q_t − b) log π(y_t | s_t)`
/// over every generated token of the batch, and that token count.
pub fn reinforce_gradient<S: Scalar>(policy: &Model<S>, episodes: &[Episode<S>], baseline: S) -> Result<(Vec<S>, usize)> {
    let tokens: usize = episodes.iter().map(|e| e.len()).sum();
    if tokens == 0 {
        return Ok((vec![S::zero(); policy.param_count()], 0));
    }
    let inv = S::one() / S::of_usize(tokens);
    let batch: Vec<WeightedSequence<S>> = episodes
        .iter()
        .map(|e| {
            if e.returns.len() != e.len() {
                return Err(Error::invalid("episode returns are not filled"));
            }
            let prompt_len = e.sequence().len() - e.len();
            let mut weights = vec![S::zero(); prompt_len];
            weights.extend(e.returns.iter().map(|&q| (q - baseline) * inv));
            Ok(WeightedSequence { tokens: e.sequence(), weights })
        })
        .collect::<Result<_>>()?;
    let (_, grad) = policy.weighted_nll_gradient(&batch)?;
    Ok((grad, tokens))
}

/// One ascent step on `J` with global-norm clipping. Returns the pre-clip norm.
pub fn policy_gradient_step<S: Scalar>(
    policy: &mut Model<S>,
    episodes: &[Episode<S>],
    baseline: S,
    lr: f64,
    clip: Option<f64>,
) -> Result<S> {
    let (grad, _) = reinforce_gradient(policy, episodes, baseline)?;
    if grad.iter().any(|g| !g.is_finite()) {
        let dump: Vec<String> = episodes
            .iter()
            .map(|e| format!("seed {} output {:?} returns {:?}", e.seed, e.output, e.returns))
            .collect();
        return Err(Error::NonFinite(format!("policy gradient; episodes:\n{}", dump.join("\n"))));
    }
    policy.sgd_update(&grad, S::of(lr), clip.map(S::of))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RLConfig {
    pub strategy: StrategyKind,
    /// Discount of the discounted-sparse strategy.
    pub gamma_n: f64,
    /// Sentences per batch.
    pub n: usize,
    pub sampling: SamplingConfig,
    /// Reward-change threshold of the stopping rule.
    pub epsilon: f64,
    /// Trailing window over which batch baselines are averaged before the
    /// stopping check; 1 compares raw consecutive baselines.
    pub baseline_window: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub max_episodes: usize,
    /// Completions per prefix for the roll-out strategy.
    pub rollouts: usize,
    pub seed: u64,
}

impl Default for RLConfig {
    fn default() -> Self {
        RLConfig {
            strategy: StrategyKind::Dense,
            gamma_n: 0.9,
            n: 16,
            sampling: SamplingConfig::default(),
            epsilon: 1e-3,
            baseline_window: 5,
            lr: 0.05,
            clip: Some(1.0),
            max_episodes: 20_000,
            rollouts: 1,
            seed: 0,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        if self.n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.baseline_window == 0 {
            return Err(Error::invalid("baseline_window must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma_n) {
            return Err(Error::invalid("gamma_n must lie in [0, 1]"));
        }
        if self.rollouts == 0 {
            return Err(Error::invalid("rollouts must be at least 1"));
        }
        if self.max_episodes == 0 {
            return Err(Error::invalid("max_episodes must be positive"));
        }
        Ok(())
    }

    /// Discount applied by `estimate_returns`.
    pub fn gamma(&self) -> f64 {
        self.strategy.gamma()
    }

    pub fn episodes_per_step(&self) -> usize {
        self.n * self.sampling.k
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub step: usize,
    pub episodes: usize,
    pub baseline: f64,
    pub prev_baseline: f64,
    pub baselines: Vec<f64>,
    pub wall_ms: f64,
    /// Tokens sampled for episodes.
    pub episode_tokens: u64,
    /// Tokens sampled for roll-out completions.
    pub rollout_tokens: u64,
    pub reward_model_calls: u64,
    pub classifier_calls: u64,
    pub lm_calls: u64,
}

impl TrainingState {
    pub fn tokens_generated(&self) -> u64 {
        self.episode_tokens + self.rollout_tokens
    }

    fn smoothed(&self, window: usize) -> f64 {
        let tail = &self.baselines[self.baselines.len().saturating_sub(window)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// One line of the training metrics stream. The `mean_*` fields are always
/// the attention-masked token rewards of the sampled outputs, so strategies
/// share a scale; `train_reward` is the mean reward the strategy trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub episodes: usize,
    pub mean_r: f64,
    pub mean_rs: f64,
    pub mean_rc: f64,
    pub mean_rf: f64,
    pub baseline: f64,
    pub wall_ms: f64,
    pub tokens_generated: u64,
    pub reward_model_calls: u64,
    pub strategy: StrategyKind,
    pub train_reward: f64,
    pub step_wall_ms: f64,
    pub step_tokens: u64,
    pub step_reward_model_calls: u64,
    pub step_classifier_calls: u64,
    pub mean_output_len: f64,
    pub grad_norm: f64,
    pub seed: u64,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    crate::corpus::read_jsonl(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    EpisodeCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlOutcome {
    pub state: TrainingState,
    pub stop: StopReason,
}

/// Everything produced while scoring one batch.
pub struct ScoredBatch<S: Scalar> {
    pub episodes: Vec<Episode<S>>,
    pub counters: RewardCounters,
}

/// Sample `K` episodes for each input and fill rewards and returns per `cfg.strategy`.
pub fn sample_and_score<S: Scalar>(
    policy: &Model<S>,
    models: &RewardModels<S>,
    inputs: &[&StyledSentence],
    cfg: &RLConfig,
    step: usize,
) -> Result<ScoredBatch<S>> {
    let frozen = policy.snapshot();
    let mut counters = RewardCounters::default();
    let mut episodes = Vec::with_capacity(inputs.len() * cfg.sampling.k);
    for (i, x) in inputs.iter().enumerate() {
        let target = x.style.opposite();
        let sampling = cfg.sampling.with_seed(derive_seed_path(cfg.seed, &[1, step as u64, i as u64]));
        for mut ep in generate_k_episodes(&frozen, &x.tokens, target, &sampling)? {
            let rewards = score_episode(&frozen, models, &ep, cfg, &mut counters)?;
            ep.returns = estimate_returns(&rewards.r, cfg.gamma());
            ep.rewards = Some(rewards);
            ep.strategy = Some(cfg.strategy);
            episodes.push(ep);
        }
    }
    Ok(ScoredBatch { episodes, counters })
}

fn score_episode<S: Scalar>(
    policy: &Model<S>,
    models: &RewardModels<S>,
    ep: &Episode<S>,
    cfg: &RLConfig,
    counters: &mut RewardCounters,
) -> Result<RewardBreakdown<S>> {
    match cfg.strategy {
        StrategyKind::Dense | StrategyKind::DenseAttention => {
            let mode = cfg.strategy.mask_mode().expect("dense strategies have a mask mode");
            models.dense(&ep.source, &ep.output, ep.target_style, mode, counters)
        }
        StrategyKind::NaiveSparse => models.naive_sparse(&ep.source, &ep.output, ep.target_style, cfg.gamma_n, counters),
        StrategyKind::Rollout => {
            let seed = derive_seed_path(ep.seed, &[2]);
            models.rollout(policy, &ep.source, &ep.output, ep.target_style, cfg.rollouts, &cfg.sampling, seed, counters)
        }
    }
}

fn mean_of<S: Scalar>(values: impl Iterator<Item = S>) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for v in values {
        total += v.f64();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// REINFORCE with a constant batch baseline until the smoothed baseline
/// changes by less than `epsilon` or `max_episodes` is reached. `sink`
/// receives one record per step.
pub fn rl_train<S: Scalar>(
    policy: &mut Model<S>,
    models: &RewardModels<S>,
    train: &[StyledSentence],
    cfg: &RLConfig,
    sink: &mut dyn FnMut(&MetricsRecord, &[Episode<S>]) -> Result<()>,
) -> Result<RlOutcome> {
    cfg.validate()?;
    models.validate()?;
    if policy.is_frozen() {
        return Err(Error::Frozen);
    }
    if train.is_empty() {
        return Err(Error::invalid("no training sentences"));
    }
    let mut state = TrainingState::default();
    let mut prev_smoothed = 0.0;
    loop {
        let started = Instant::now();
        let mut pick = rng_from_seed(derive_seed_path(cfg.seed, &[0, state.step as u64]));
        let inputs: Vec<&StyledSentence> = train.choose_multiple(&mut pick, cfg.n.min(train.len())).collect();
        let batch = sample_and_score(policy, models, &inputs, cfg, state.step)?;
        let episodes = batch.episodes;
        let baseline = compute_baseline(&episodes)?;
        let grad_norm = policy_gradient_step(policy, &episodes, baseline, cfg.lr, cfg.clip)?;
        let step_ms = started.elapsed().as_secs_f64() * 1e3;

        // Monitoring rewards on a common scale, outside the timed region.
        let mut monitor_counters = RewardCounters::default();
        let monitor: Vec<RewardBreakdown<S>> = if cfg.strategy == StrategyKind::Dense {
            episodes.iter().map(|e| e.rewards.clone().expect("scored")).collect()
        } else {
            episodes
                .iter()
                .map(|e| models.dense(&e.source, &e.output, e.target_style, MaskMode::Hard, &mut monitor_counters))
                .collect::<Result<_>>()?
        };

        let step_tokens: u64 = episodes.iter().map(|e| e.len() as u64).sum::<u64>() + batch.counters.rollout_tokens;
        state.step += 1;
        state.episodes += episodes.len();
        state.prev_baseline = state.baseline;
        state.baseline = baseline.f64();
        state.baselines.push(state.baseline);
        state.wall_ms += step_ms;
        state.episode_tokens += episodes.iter().map(|e| e.len() as u64).sum::<u64>();
        state.rollout_tokens += batch.counters.rollout_tokens;
        state.reward_model_calls += batch.counters.model_calls();
        state.classifier_calls += batch.counters.classifier_calls;
        state.lm_calls += batch.counters.lm_calls;

        let record = MetricsRecord {
            step: state.step,
            episodes: state.episodes,
            mean_r: mean_of(monitor.iter().flat_map(|b| b.r.iter().copied())),
            mean_rs: mean_of(monitor.iter().flat_map(|b| b.rs.iter().copied())),
            mean_rc: mean_of(monitor.iter().flat_map(|b| b.rc.iter().copied())),
            mean_rf: mean_of(monitor.iter().flat_map(|b| b.rf.iter().copied())),
            baseline: state.baseline,
            wall_ms: state.wall_ms,
            tokens_generated: state.tokens_generated(),
            reward_model_calls: state.reward_model_calls,
            strategy: cfg.strategy,
            train_reward: mean_of(episodes.iter().flat_map(|e| e.rewards.as_ref().expect("scored").r.iter().copied())),
            step_wall_ms: step_ms,
            step_tokens,
            step_reward_model_calls: batch.counters.model_calls(),
            step_classifier_calls: batch.counters.classifier_calls,
            mean_output_len: mean_of(episodes.iter().map(|e| S::of_usize(e.len()))),
            grad_norm: grad_norm.f64(),
            seed: cfg.seed,
        };
        sink(&record, &episodes)?;

        let smoothed = state.smoothed(cfg.baseline_window);
        if (smoothed - prev_smoothed).abs() < cfg.epsilon {
            return Ok(RlOutcome { state, stop: StopReason::Converged });
        }
        prev_smoothed = smoothed;
        if state.episodes >= cfg.max_episodes {
            return Ok(RlOutcome { state, stop: StopReason::EpisodeCap });
        }
    }
}
