//! Automatic metrics and training-efficiency comparisons.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{is_special, StyleId, StyledSentence, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::neural::Model;
use crate::rewards::StrategyKind;
use crate::sampler::{greedy_decode, strip_end};
use crate::scalar::Scalar;
use crate::trainer::{lm_example, MetricsRecord};

fn words_only(tokens: &[TokenId]) -> Vec<TokenId> {
    tokens.iter().copied().filter(|&t| !is_special(t)).collect()
}

/// Predicted style of `sentence`, `None` when it has no words.
pub fn predict_style<S: Scalar>(classifier: &Model<S>, sentence: &[TokenId]) -> Result<Option<StyleId>> {
    let words = words_only(sentence);
    if words.is_empty() {
        return Ok(None);
    }
    let probs = classifier.classify(&words)?.probs;
    Ok(Some(if probs[1] > probs[0] { StyleId::ONE } else { StyleId::ZERO }))
}

/// Percentage of outputs classified as their intended style. Outputs
/// without words count as misses.
pub fn style_accuracy<S: Scalar>(outputs: &[(Vec<TokenId>, StyleId)], classifier: &Model<S>) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::invalid("style accuracy of an empty output set"));
    }
    let mut hits = 0usize;
    for (tokens, target) in outputs {
        if predict_style(classifier, tokens)? == Some(*target) {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / outputs.len() as f64)
}

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU up to 4-grams with a brevity penalty and add-one smoothing of
/// the 2- to 4-gram precisions, on a 0–100 scale.
pub fn corpus_bleu<T: Eq + Hash + Clone>(outputs: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if outputs.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} outputs but {} references",
            outputs.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in outputs.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += reference.len();
        for n in 1..=4 {
            let ref_counts = ngram_counts(reference, n);
            for (g, c) in ngram_counts(hyp, n) {
                matches[n - 1] += c.min(ref_counts.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_p += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * bp * (log_p / 4.0).exp())
}

/// `exp` of the mean negative log-likelihood.
pub fn perplexity_from_log_probs(log_probs: &[f64]) -> f64 {
    if log_probs.is_empty() {
        return 1.0;
    }
    (-log_probs.iter().sum::<f64>() / log_probs.len() as f64).exp()
}

/// Corpus-pooled perplexity of the outputs' words plus the closing END.
pub fn perplexity<S: Scalar>(outputs: &[Vec<TokenId>], lm: &Model<S>) -> Result<f64> {
    let mut log_probs = Vec::new();
    for out in outputs {
        let seq = lm_example::<S>(&words_only(out));
        let lp = lm.sequence_log_probs(&seq.tokens, &vec![true; seq.tokens.len()])?;
        log_probs.extend(lp.values[1..].iter().map(|v| v.f64()));
    }
    Ok(perplexity_from_log_probs(&log_probs))
}

pub fn geometric_mean(style: f64, content: f64) -> f64 {
    (style.max(0.0) * content.max(0.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDetail {
    pub source: String,
    pub output: String,
    pub reference: String,
    pub target_style: String,
    pub predicted_style: Option<String>,
    pub ended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub style_accuracy: f64,
    pub content_bleu: f64,
    pub perplexity: f64,
    pub gm_all: f64,
    pub sentences: usize,
    pub details: Vec<SentenceDetail>,
}

/// Greedy-transfer every source to the opposite style and score it against
/// the aligned references with independent evaluation models.
pub fn evaluate_transfer<S: Scalar>(
    policy: &Model<S>,
    eval_classifier: &Model<S>,
    eval_lm: &Model<S>,
    vocab: &Vocab,
    sources: &[StyledSentence],
    references: &[StyledSentence],
    max_output_len: usize,
) -> Result<EvalReport> {
    if sources.len() != references.len() {
        return Err(Error::invalid("sources and references differ in length"));
    }
    let mut outputs = Vec::with_capacity(sources.len());
    let mut ended = Vec::with_capacity(sources.len());
    for s in sources {
        let out = greedy_decode(policy, &s.tokens, s.style.opposite(), max_output_len)?;
        ended.push(out.last() == Some(&crate::corpus::END));
        outputs.push(words_only(strip_end(&out)));
    }
    let targets: Vec<(Vec<TokenId>, StyleId)> = outputs
        .iter()
        .zip(sources)
        .map(|(o, s)| (o.clone(), s.style.opposite()))
        .collect();
    let refs: Vec<Vec<TokenId>> = references.iter().map(|r| r.tokens.clone()).collect();
    let style_accuracy = style_accuracy(&targets, eval_classifier)?;
    let content_bleu = corpus_bleu(&outputs, &refs)?;
    let ppl = perplexity(&outputs, eval_lm)?;
    let mut details = Vec::with_capacity(sources.len());
    for (i, s) in sources.iter().enumerate() {
        details.push(SentenceDetail {
            source: s.raw_text.clone(),
            output: vocab.decode_words(&outputs[i]),
            reference: references[i].raw_text.clone(),
            target_style: vocab.styles().name(s.style.opposite()).to_string(),
            predicted_style: predict_style(eval_classifier, &outputs[i])?.map(|p| vocab.styles().name(p).to_string()),
            ended: ended[i],
        });
    }
    Ok(EvalReport {
        style_accuracy,
        content_bleu,
        perplexity: ppl,
        gm_all: geometric_mean(style_accuracy, content_bleu),
        sentences: sources.len(),
        details,
    })
}

/// Metrics stream of one training run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCurve {
    pub strategy: StrategyKind,
    pub seed: u64,
    /// `(episodes, reward)` after smoothing, before normalization.
    pub raw: Vec<(usize, f64)>,
    /// `(episodes, min-max normalized reward)`.
    pub points: Vec<(usize, f64)>,
    pub peak: f64,
    pub raw_peak: f64,
    /// Episodes at the first point reaching `fraction · peak`.
    pub episodes_to_fraction: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub episodes_a: usize,
    pub episodes_b: usize,
    pub ratio: f64,
    pub raw_peak_a: f64,
    pub raw_peak_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub fraction: f64,
    pub smoothing: usize,
    pub curves: Vec<EfficiencyCurve>,
}

fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let tail = &values[(i + 1).saturating_sub(w)..=i];
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect()
}

/// Normalize each run's `mean_r` curve to [0, 1] (after an optional
/// trailing mean over `smoothing` steps) and find where it first reaches
/// `fraction` of its peak. Runs shorter than two steps are skipped.
pub fn efficiency_report(runs: &[RunMetrics], fraction: f64, smoothing: usize) -> EfficiencyReport {
    let mut curves = Vec::new();
    for run in runs {
        if run.records.len() < 2 {
            log::warn!("skipping {} seed {}: fewer than two steps", run.strategy, run.seed);
            continue;
        }
        let rewards: Vec<f64> = run.records.iter().map(|r| r.mean_r).collect();
        let smooth = trailing_mean(&rewards, smoothing);
        let lo = smooth.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let normalized: Vec<f64> = smooth
            .iter()
            .map(|&v| if span > 0.0 { (v - lo) / span } else { 1.0 })
            .collect();
        let peak = normalized.iter().copied().fold(0.0, f64::max);
        let target = fraction * peak;
        let first = normalized.iter().position(|&v| v >= target - 1e-12).unwrap_or(normalized.len() - 1);
        let episodes: Vec<usize> = run.records.iter().map(|r| r.episodes).collect();
        curves.push(EfficiencyCurve {
            strategy: run.strategy,
            seed: run.seed,
            raw: episodes.iter().copied().zip(smooth.iter().copied()).collect(),
            points: episodes.iter().copied().zip(normalized).collect(),
            peak,
            raw_peak: hi,
            episodes_to_fraction: episodes[first],
        });
    }
    EfficiencyReport {
        fraction,
        smoothing,
        curves,
    }
}

impl EfficiencyReport {
    pub fn curve(&self, strategy: StrategyKind, seed: u64) -> Option<&EfficiencyCurve> {
        self.curves.iter().find(|c| c.strategy == strategy && c.seed == seed)
    }

    /// Per-seed episodes-to-fraction ratio `a / b` for seeds present in both.
    pub fn compare(&self, a: StrategyKind, b: StrategyKind) -> Vec<SeedComparison> {
        let mut out = Vec::new();
        for ca in self.curves.iter().filter(|c| c.strategy == a) {
            if let Some(cb) = self.curve(b, ca.seed) {
                out.push(SeedComparison {
                    seed: ca.seed,
                    episodes_a: ca.episodes_to_fraction,
                    episodes_b: cb.episodes_to_fraction,
                    ratio: ca.episodes_to_fraction as f64 / cb.episodes_to_fraction.max(1) as f64,
                    raw_peak_a: ca.raw_peak,
                    raw_peak_b: cb.raw_peak,
                });
            }
        }
        out
    }

    /// `episodes,normalized_reward,strategy,seed` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episodes,normalized_reward,strategy,seed\n");
        for c in &self.curves {
            for (e, v) in &c.points {
                out.push_str(&format!("{e},{v:.6},{},{}\n", c.strategy, c.seed));
            }
        }
        out
    }
}
