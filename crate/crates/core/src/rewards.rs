//! Token-level rewards: style, content, fluency, their weighted sum, and the
//! roll-out and discounted-sparse alternatives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::{alpha_from, compute_mask, HeadId, MaskMode};
use crate::corpus::{is_special, StyleId, TokenId, Vocab, START};
use crate::error::{Error, Result};
use crate::neural::Model;
use crate::rng::{derive_seed_path, rng_from_seed};
use crate::sampler::{policy_prompt, primed_after, sample_continuation, SamplingConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub style: f64,
    pub content: f64,
    pub fluency: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            style: 2.0,
            content: 1.0,
            fluency: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.style, self.content, self.fluency].iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("reward weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Dense,
    Rollout,
    DenseAttention,
    NaiveSparse,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Dense,
        StrategyKind::Rollout,
        StrategyKind::DenseAttention,
        StrategyKind::NaiveSparse,
    ];

    /// Discount used when turning rewards into returns. Discounted-sparse
    /// rewards already carry their discount, so their returns use 0.
    pub fn gamma(self) -> f64 {
        match self {
            StrategyKind::Rollout => 1.0,
            _ => 0.0,
        }
    }

    pub fn mask_mode(self) -> Option<MaskMode> {
        match self {
            StrategyKind::Dense => Some(MaskMode::Hard),
            StrategyKind::DenseAttention => Some(MaskMode::Continuous),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Dense => "dense",
            StrategyKind::Rollout => "rollout",
            StrategyKind::DenseAttention => "dense_attention",
            StrategyKind::NaiveSparse => "naive_sparse",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

/// How content n-grams are matched against the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentMatching {
    /// Against the five-token source window aligned with the output position.
    #[default]
    Windowed,
    /// Against the whole source sentence.
    SentenceWide,
}

/// Per-token reward components of one output, aligned with its tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<S> {
    pub rs: Vec<S>,
    pub rc: Vec<S>,
    pub rf: Vec<S>,
    pub r: Vec<S>,
    pub mask: Vec<S>,
}

impl<S: Scalar> RewardBreakdown<S> {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn trace(&self, output: &[TokenId], vocab: &Vocab) -> Vec<TraceRecord> {
        (0..self.len())
            .map(|t| TraceRecord {
                position: t,
                token: vocab.token(output[t]).unwrap_or("?").to_string(),
                mask: self.mask[t].f64(),
                rs: self.rs[t].f64(),
                rc: self.rc[t].f64(),
                rf: self.rf[t].f64(),
                r: self.r[t].f64(),
            })
            .collect()
    }
}

/// One line of the reward audit dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub position: usize,
    pub token: String,
    pub mask: f64,
    pub rs: f64,
    pub rc: f64,
    pub rf: f64,
    pub r: f64,
}

/// Reward-model invocation and generation counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardCounters {
    pub classifier_calls: u64,
    pub lm_calls: u64,
    /// Tokens sampled for roll-out completions.
    pub rollout_tokens: u64,
}

impl RewardCounters {
    pub fn model_calls(&self) -> u64 {
        self.classifier_calls + self.lm_calls
    }

    pub fn add(&mut self, other: &RewardCounters) {
        self.classifier_calls += other.classifier_calls;
        self.lm_calls += other.lm_calls;
        self.rollout_tokens += other.rollout_tokens;
    }
}

/// `rs_t = mask_t · (P(s_tgt | y) − 0.5)` with one classifier pass.
pub fn style_reward<S: Scalar>(y: &[TokenId], mask: &[S], classifier: &Model<S>, target: StyleId) -> Result<Vec<S>> {
    if y.is_empty() {
        return Err(Error::invalid("style reward of an empty sentence"));
    }
    if mask.len() != y.len() {
        return Err(Error::invalid("mask length differs from sentence length"));
    }
    let p = classifier.classify(y)?.probs[target.index()];
    Ok(style_from_prob(p, mask))
}

pub fn style_from_prob<S: Scalar>(p_target: S, mask: &[S]) -> Vec<S> {
    let centered = p_target - S::of(0.5);
    mask.iter().map(|&m| m * centered).collect()
}

/// Source tokens the n-grams around output position `t` are matched against.
pub fn content_window(x: &[TokenId], t: usize, matching: ContentMatching) -> &[TokenId] {
    match matching {
        ContentMatching::SentenceWide => x,
        ContentMatching::Windowed => {
            if t >= x.len() {
                &x[x.len().saturating_sub(5)..]
            } else {
                &x[t.saturating_sub(2)..(t + 3).min(x.len())]
            }
        }
    }
}

/// The n-grams of order ≤ 3 around `y[t]` that fit inside `y`: the token,
/// the bigrams ending and starting at it, the trigrams ending and starting at it.
pub fn ngrams_at(y: &[TokenId], t: usize) -> Vec<&[TokenId]> {
    let n = y.len();
    let mut grams: Vec<&[TokenId]> = vec![&y[t..t + 1]];
    if t >= 1 {
        grams.push(&y[t - 1..=t]);
    }
    if t + 1 < n {
        grams.push(&y[t..t + 2]);
    }
    if t >= 2 {
        grams.push(&y[t - 2..=t]);
    }
    if t + 2 < n {
        grams.push(&y[t..t + 3]);
    }
    grams
}

/// `rc_t = (1 − mask_t) · Σ_g ±1 / |G_t|` where an n-gram scores +1 when it
/// occurs contiguously in the aligned source window.
pub fn content_reward<S: Scalar>(y: &[TokenId], x: &[TokenId], mask: &[S], matching: ContentMatching) -> Vec<S> {
    assert_eq!(y.len(), mask.len(), "mask length differs from sentence length");
    (0..y.len())
        .map(|t| {
            let window = content_window(x, t, matching);
            let grams = ngrams_at(y, t);
            let score: i64 = grams
                .iter()
                .map(|g| if window.windows(g.len()).any(|w| w == *g) { 1 } else { -1 })
                .sum();
            (S::one() - mask[t]) * S::of(score as f64 / grams.len() as f64)
        })
        .collect()
}

/// `rf_t = P_LM(y_t | START, y_<t)` from one LM pass.
pub fn fluency_reward<S: Scalar>(y: &[TokenId], lm: &Model<S>) -> Result<Vec<S>> {
    if y.is_empty() {
        return Ok(Vec::new());
    }
    let mut seq = Vec::with_capacity(y.len() + 1);
    seq.push(START);
    seq.extend_from_slice(y);
    let lp = lm.sequence_log_probs(&seq, &vec![true; seq.len()])?;
    Ok(lp.values[1..].iter().map(|v| v.exp()).collect())
}

pub fn overall_reward<S: Scalar>(rs: &[S], rc: &[S], rf: &[S], weights: &RewardWeights) -> Vec<S> {
    assert!(rs.len() == rc.len() && rc.len() == rf.len(), "component lengths differ");
    let (ws, wc, wf) = (S::of(weights.style), S::of(weights.content), S::of(weights.fluency));
    (0..rs.len()).map(|t| ws * rs[t] + wc * rc[t] + wf * rf[t]).collect()
}

/// Frozen reward models and the settings they are applied with.
#[derive(Debug, Clone, Copy)]
pub struct RewardModels<'a, S: Scalar> {
    pub classifier: &'a Model<S>,
    pub head: HeadId,
    pub lm: &'a Model<S>,
    pub lambda: f64,
    pub weights: RewardWeights,
    pub matching: ContentMatching,
}

/// Sequence-level reward with the style mask forced to 1 and the content
/// mask forced to 0.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SequenceScore<S> {
    rs: S,
    rc: S,
    rf: S,
}

impl<'a, S: Scalar> RewardModels<'a, S> {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !self.classifier.is_frozen() || !self.lm.is_frozen() {
            return Err(Error::invalid("reward models must be frozen"));
        }
        let c = self.classifier.config();
        if self.head.layer >= c.layers || self.head.head >= c.heads {
            return Err(Error::invalid(format!("head {} outside the classifier", self.head)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid("lambda must lie in [0, 1]"));
        }
        Ok(())
    }

    fn combine(&self, rs: &[S], rc: &[S], rf: &[S], mask: Vec<S>) -> RewardBreakdown<S> {
        RewardBreakdown {
            r: overall_reward(rs, rc, rf, &self.weights),
            rs: rs.to_vec(),
            rc: rc.to_vec(),
            rf: rf.to_vec(),
            mask,
        }
    }

    /// Attention-masked per-token rewards of `output` (the generated tokens,
    /// possibly ending in END). Special tokens only receive fluency reward.
    pub fn dense(&self, x: &[TokenId], output: &[TokenId], target: StyleId, mode: MaskMode, counters: &mut RewardCounters) -> Result<RewardBreakdown<S>> {
        let n = output.len();
        let rf = fluency_reward(output, self.lm)?;
        counters.lm_calls += 1;
        let positions: Vec<usize> = (0..n).filter(|&i| !is_special(output[i])).collect();
        let mut rs = vec![S::zero(); n];
        let mut rc = vec![S::zero(); n];
        let mut mask = vec![S::zero(); n];
        if !positions.is_empty() {
            let words: Vec<TokenId> = positions.iter().map(|&i| output[i]).collect();
            // One classifier pass gives both the style probability and the attention.
            let cls = self.classifier.classify(&words)?;
            counters.classifier_calls += 1;
            let attribution = compute_mask(&alpha_from(&cls, self.head), self.lambda, mode);
            let rs_w = style_from_prob(cls.probs[target.index()], &attribution.mask);
            let rc_w = content_reward(&words, x, &attribution.mask, self.matching);
            for (j, &i) in positions.iter().enumerate() {
                rs[i] = rs_w[j];
                rc[i] = rc_w[j];
                mask[i] = attribution.mask[j];
            }
        }
        Ok(self.combine(&rs, &rc, &rf, mask))
    }

    fn sequence_score(&self, x: &[TokenId], output: &[TokenId], target: StyleId, counters: &mut RewardCounters) -> Result<SequenceScore<S>> {
        let rf = fluency_reward(output, self.lm)?;
        counters.lm_calls += 1;
        let rf_mean = if rf.is_empty() {
            S::zero()
        } else {
            rf.iter().copied().sum::<S>() / S::of_usize(rf.len())
        };
        let words: Vec<TokenId> = output.iter().copied().filter(|&t| !is_special(t)).collect();
        if words.is_empty() {
            return Ok(SequenceScore {
                rs: S::of(-0.5),
                rc: -S::one(),
                rf: rf_mean,
            });
        }
        let p = self.classifier.classify(&words)?.probs[target.index()];
        counters.classifier_calls += 1;
        let rc = content_reward(&words, x, &vec![S::zero(); words.len()], self.matching);
        Ok(SequenceScore {
            rs: p - S::of(0.5),
            rc: rc.iter().copied().sum::<S>() / S::of_usize(words.len()),
            rf: rf_mean,
        })
    }

    /// Sequence-level reward of a complete output with mask overrides:
    /// `λ_S (P − 0.5) + λ_C · mean rc + λ_F · mean rf`.
    pub fn sequence_reward(&self, x: &[TokenId], output: &[TokenId], target: StyleId, counters: &mut RewardCounters) -> Result<S> {
        let s = self.sequence_score(x, output, target, counters)?;
        Ok(overall_reward(&[s.rs], &[s.rc], &[s.rf], &self.weights)[0])
    }

    /// Terminal reward `R` copied to every token as `γ_n^(T−t) · R`.
    pub fn naive_sparse(&self, x: &[TokenId], output: &[TokenId], target: StyleId, gamma_n: f64, counters: &mut RewardCounters) -> Result<RewardBreakdown<S>> {
        if !(0.0..=1.0).contains(&gamma_n) {
            return Err(Error::invalid("discount must lie in [0, 1]"));
        }
        let s = self.sequence_score(x, output, target, counters)?;
        let n = output.len();
        let factors: Vec<S> = (0..n).map(|t| S::of(discount(gamma_n, n - 1 - t))).collect();
        let scale = |v: S| factors.iter().map(|&f| f * v).collect::<Vec<S>>();
        Ok(self.combine(&scale(s.rs), &scale(s.rc), &scale(s.rf), vec![S::one(); n]))
    }

    /// Roll-out rewards: `r_t` is the mean sequence-level reward of `m`
    /// sampled completions of `output[..=t]`; the last position scores
    /// `output` itself. Completions are capped at `cfg.max_output_len` tokens.
    #[allow(clippy::too_many_arguments)]
    pub fn rollout(
        &self,
        policy: &Model<S>,
        x: &[TokenId],
        output: &[TokenId],
        target: StyleId,
        m: usize,
        cfg: &SamplingConfig,
        seed: u64,
        counters: &mut RewardCounters,
    ) -> Result<RewardBreakdown<S>> {
        if m == 0 {
            return Err(Error::invalid("roll-out count must be at least 1"));
        }
        let n = output.len();
        let prompt = policy_prompt(x, target);
        let mut rs = vec![S::zero(); n];
        let mut rc = vec![S::zero(); n];
        let mut rf = vec![S::zero(); n];
        let inv_m = S::one() / S::of_usize(m);
        if n == 0 {
            return Ok(self.combine(&rs, &rc, &rf, Vec::new()));
        }
        let (mut state, _) = primed_after(policy, &prompt, &[])?;
        for t in 0..n - 1 {
            let logits = policy.decode_step(&mut state, output[t])?;
            let budget = cfg.max_output_len.saturating_sub(t + 1);
            for j in 0..m {
                let mut completed = output[..=t].to_vec();
                if budget > 0 {
                    let mut rng = rng_from_seed(derive_seed_path(seed, &[t as u64, j as u64]));
                    let (tail, _) = sample_continuation(policy, state.clone(), logits.clone(), budget, cfg, &mut rng)?;
                    counters.rollout_tokens += tail.len() as u64;
                    completed.extend(tail);
                }
                let score = self.sequence_score(x, &completed, target, counters)?;
                rs[t] += score.rs;
                rc[t] += score.rc;
                rf[t] += score.rf;
            }
            rs[t] *= inv_m;
            rc[t] *= inv_m;
            rf[t] *= inv_m;
        }
        let last = self.sequence_score(x, output, target, counters)?;
        rs[n - 1] = last.rs;
        rc[n - 1] = last.rc;
        rf[n - 1] = last.rf;
        Ok(self.combine(&rs, &rc, &rf, vec![S::one(); n]))
    }
}

fn discount(gamma: f64, power: usize) -> f64 {
    if power == 0 {
        1.0
    } else {
        gamma.powi(power as i32)
    }
}
