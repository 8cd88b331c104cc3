//! Nucleus sampling, episode generation and greedy decoding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{style_marker, StyleId, TokenId, END, SRC_START, START};
use crate::error::{Error, Result};
use crate::neural::{DecodeState, Model};
use crate::rewards::{RewardBreakdown, StrategyKind};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::scalar::{log_softmax, softmax, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Nucleus mass in (0, 1].
    pub p: f64,
    /// Episodes per input.
    pub k: usize,
    /// Maximum number of generated tokens, END included.
    pub max_output_len: usize,
    /// Applied to the sampling distribution only; recorded log-probs are
    /// always taken from the untempered model distribution.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            p: 0.9,
            k: 4,
            max_output_len: 24,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid(format!("nucleus p must lie in (0, 1], got {}", self.p)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.max_output_len == 0 {
            return Err(Error::invalid("max_output_len must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SamplingConfig { seed, ..self.clone() }
    }
}

/// One sampled generation for one input and target style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode<S> {
    pub source: Vec<TokenId>,
    pub target_style: StyleId,
    /// Generated tokens; the last one is END unless generation hit the length cap.
    pub output: Vec<TokenId>,
    /// `log π(y_t | s_t)` under the unfiltered policy distribution.
    pub log_probs: Vec<S>,
    pub rewards: Option<RewardBreakdown<S>>,
    pub returns: Vec<S>,
    pub strategy: Option<StrategyKind>,
    pub seed: u64,
}

impl<S: Scalar> Episode<S> {
    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }

    /// Output words, i.e. the output without a trailing END.
    pub fn words(&self) -> &[TokenId] {
        strip_end(&self.output)
    }

    pub fn ended(&self) -> bool {
        self.output.last() == Some(&END)
    }

    /// Full policy input: prompt followed by the output.
    pub fn sequence(&self) -> Vec<TokenId> {
        let mut seq = policy_prompt(&self.source, self.target_style);
        seq.extend_from_slice(&self.output);
        seq
    }
}

pub fn strip_end(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.last() {
        Some(&END) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

/// `[target marker, SRC_START, x..., START]`
pub fn policy_prompt(source: &[TokenId], target: StyleId) -> Vec<TokenId> {
    let mut prompt = Vec::with_capacity(source.len() + 3);
    prompt.push(style_marker(target));
    prompt.push(SRC_START);
    prompt.extend_from_slice(source);
    prompt.push(START);
    prompt
}

/// Token ids sorted by descending probability, ties by ascending id.
fn ranked<S: Scalar>(dist: &[S]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    order
}

/// Keep the smallest probability-ranked prefix with cumulative mass ≥ `p`,
/// zero the rest and renormalize. `p ≥ 1` keeps every token.
pub fn nucleus_filter<S: Scalar>(dist: &[S], p: f64) -> Vec<S> {
    if p >= 1.0 {
        let total: S = dist.iter().copied().sum();
        return dist.iter().map(|&d| d / total).collect();
    }
    let mut out = vec![S::zero(); dist.len()];
    let mut mass = S::zero();
    let threshold = S::of(p);
    for i in ranked(dist) {
        out[i] = dist[i];
        mass += dist[i];
        if mass >= threshold {
            break;
        }
    }
    for o in &mut out {
        *o /= mass;
    }
    out
}

/// Inverse-CDF draw over `dist` in id order.
pub fn sample_index<S: Scalar>(dist: &[S], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &d) in dist.iter().enumerate() {
        let d = d.f64();
        if d <= 0.0 {
            continue;
        }
        acc += d;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn argmax<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Decoding state after the full prompt, plus the logits for the first output token.
fn prime<S: Scalar>(policy: &Model<S>, prompt: &[TokenId]) -> Result<(DecodeState<S>, Vec<S>)> {
    let mut state = policy.decoder()?;
    let mut logits = Vec::new();
    for &tok in prompt {
        logits = policy.decode_step(&mut state, tok)?;
    }
    Ok((state, logits))
}

fn sampling_dist<S: Scalar>(logits: &[S], cfg: &SamplingConfig) -> Vec<S> {
    let dist = if cfg.temperature == 1.0 {
        softmax(logits)
    } else {
        let inv = S::of(1.0 / cfg.temperature);
        softmax(&logits.iter().map(|&l| l * inv).collect::<Vec<_>>())
    };
    nucleus_filter(&dist, cfg.p)
}

/// Continue sampling from `state`/`logits` until END or until `budget` tokens
/// were produced. Returns the sampled tokens and their log-probs.
pub(crate) fn sample_continuation<S: Scalar>(
    policy: &Model<S>,
    mut state: DecodeState<S>,
    mut logits: Vec<S>,
    budget: usize,
    cfg: &SamplingConfig,
    rng: &mut Rng,
) -> Result<(Vec<TokenId>, Vec<S>)> {
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    while tokens.len() < budget {
        let dist = sampling_dist(&logits, cfg);
        let tok = sample_index(&dist, rng);
        log_probs.push(log_softmax(&logits)[tok]);
        tokens.push(tok);
        if tok == END || tokens.len() == budget {
            break;
        }
        logits = policy.decode_step(&mut state, tok)?;
    }
    Ok((tokens, log_probs))
}

/// Decoding state after `prompt` followed by `prefix`, with the logits for
/// the next position.
pub(crate) fn primed_after<S: Scalar>(
    policy: &Model<S>,
    prompt: &[TokenId],
    prefix: &[TokenId],
) -> Result<(DecodeState<S>, Vec<S>)> {
    let (mut state, mut logits) = prime(policy, prompt)?;
    for &tok in prefix {
        logits = policy.decode_step(&mut state, tok)?;
    }
    Ok((state, logits))
}

fn check_capacity<S: Scalar>(policy: &Model<S>, prompt_len: usize, max_out: usize) -> Result<()> {
    // The last generated token is never fed back.
    let needed = prompt_len + max_out - 1;
    if needed > policy.config().max_len {
        return Err(Error::TooLong {
            len: needed,
            max: policy.config().max_len,
        });
    }
    Ok(())
}

/// Sample one output for `source` towards `target` with seed `cfg.seed`.
pub fn generate_episode<S: Scalar>(
    policy: &Model<S>,
    source: &[TokenId],
    target: StyleId,
    cfg: &SamplingConfig,
) -> Result<Episode<S>> {
    cfg.validate()?;
    let prompt = policy_prompt(source, target);
    check_capacity(policy, prompt.len(), cfg.max_output_len)?;
    let (state, logits) = prime(policy, &prompt)?;
    let mut rng = rng_from_seed(cfg.seed);
    let (output, log_probs) = sample_continuation(policy, state, logits, cfg.max_output_len, cfg, &mut rng)?;
    Ok(Episode {
        source: source.to_vec(),
        target_style: target,
        output,
        log_probs,
        rewards: None,
        returns: Vec::new(),
        strategy: None,
        seed: cfg.seed,
    })
}

/// `cfg.k` episodes, the k-th generated with seed `derive_seed(cfg.seed, k)`.
pub fn generate_k_episodes<S: Scalar>(
    policy: &Model<S>,
    source: &[TokenId],
    target: StyleId,
    cfg: &SamplingConfig,
) -> Result<Vec<Episode<S>>> {
    (0..cfg.k)
        .map(|k| generate_episode(policy, source, target, &cfg.with_seed(derive_seed(cfg.seed, k as u64))))
        .collect()
}

/// Argmax decoding (ties to the lowest id) until END or `max_output_len`
/// tokens. The returned tokens include the END if one was produced.
pub fn greedy_decode<S: Scalar>(
    policy: &Model<S>,
    source: &[TokenId],
    target: StyleId,
    max_output_len: usize,
) -> Result<Vec<TokenId>> {
    let prompt = policy_prompt(source, target);
    check_capacity(policy, prompt.len(), max_output_len)?;
    let (mut state, mut logits) = prime(policy, &prompt)?;
    let mut out = Vec::new();
    while out.len() < max_output_len {
        let tok = argmax(&logits);
        out.push(tok);
        if tok == END || out.len() == max_output_len {
            break;
        }
        logits = policy.decode_step(&mut state, tok)?;
    }
    Ok(out)
}
