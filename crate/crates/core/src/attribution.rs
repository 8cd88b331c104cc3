//! Attention-based attribution: pick the style-bearing classifier head and
//! split a sentence into style and content tokens.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{StyledSentence, TokenId};
use crate::error::{Error, Result};
use crate::neural::{Classification, Model};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl std::fmt::Display for HeadId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Top `⌊λ|y|⌋` tokens by α get 1, the rest 0.
    Hard,
    /// The mask is α itself.
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult<S> {
    pub alpha: Vec<S>,
    pub mask: Vec<S>,
    pub lambda_frac: f64,
    pub head: Option<HeadId>,
}

impl<S: Scalar> AttributionResult<S> {
    /// Positions with a nonzero mask.
    pub fn style_positions(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i] > S::zero()).collect()
    }
}

/// `⌊λ·n⌋`, robust to the representation error of products like `0.29 · 100`.
pub fn mask_count(lambda: f64, n: usize) -> usize {
    ((lambda * n as f64) + 1e-9).floor().max(0.0) as usize
}

fn check_head<S: Scalar>(classifier: &Model<S>, head: HeadId) -> Result<()> {
    let c = classifier.config();
    if head.layer >= c.layers || head.head >= c.heads {
        return Err(Error::invalid(format!(
            "head {head} outside classifier with {} layers x {} heads",
            c.layers, c.heads
        )));
    }
    Ok(())
}

/// Readout-row attention of `head` over the sentence tokens, renormalized.
pub fn alpha_from<S: Scalar>(cls: &Classification<S>, head: HeadId) -> Vec<S> {
    let row = cls.attention.row(head.layer, head.head, 0);
    let tokens = &row[1..];
    let total: S = tokens.iter().copied().sum();
    if total > S::zero() {
        tokens.iter().map(|&a| a / total).collect()
    } else {
        vec![S::one() / S::of_usize(tokens.len()); tokens.len()]
    }
}

/// Per-token α of `sentence` under `head`.
pub fn attention_scores<S: Scalar>(classifier: &Model<S>, head: HeadId, sentence: &[TokenId]) -> Result<Vec<S>> {
    check_head(classifier, head)?;
    Ok(alpha_from(&classifier.classify(sentence)?, head))
}

/// Positions of the `k` largest values, ties to the lower position.
pub fn top_positions<S: Scalar>(alpha: &[S], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| {
        alpha[b]
            .partial_cmp(&alpha[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k.min(alpha.len()));
    order.sort_unstable();
    order
}

pub fn compute_mask<S: Scalar>(alpha: &[S], lambda: f64, mode: MaskMode) -> AttributionResult<S> {
    let mask = match mode {
        MaskMode::Continuous => alpha.to_vec(),
        MaskMode::Hard => {
            let mut m = vec![S::zero(); alpha.len()];
            for i in top_positions(alpha, mask_count(lambda, alpha.len())) {
                m[i] = S::one();
            }
            m
        }
    };
    AttributionResult {
        alpha: alpha.to_vec(),
        mask,
        lambda_frac: lambda,
        head: None,
    }
}

/// Attention scores and mask of `sentence` in one classifier pass.
pub fn attribute<S: Scalar>(
    classifier: &Model<S>,
    head: HeadId,
    sentence: &[TokenId],
    lambda: f64,
    mode: MaskMode,
) -> Result<AttributionResult<S>> {
    let alpha = attention_scores(classifier, head, sentence)?;
    let mut result = compute_mask(&alpha, lambda, mode);
    result.head = Some(head);
    Ok(result)
}

/// Outcome of the leave-one-out head search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSelection {
    pub head: HeadId,
    pub lambda_frac: f64,
    /// Mean absolute change of the true-style probability, per head in
    /// (layer, head) order.
    pub deviations: Vec<(HeadId, f64)>,
    pub sentences_used: usize,
    pub sentences_skipped: usize,
}

impl HeadSelection {
    pub fn deviation(&self, head: HeadId) -> Option<f64> {
        self.deviations.iter().find(|(h, _)| *h == head).map(|&(_, d)| d)
    }

    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lambda\t{}", self.lambda_frac);
        let _ = writeln!(out, "sentences_used\t{}", self.sentences_used);
        let _ = writeln!(out, "sentences_skipped\t{}", self.sentences_skipped);
        let _ = writeln!(out, "head\tdeviation");
        for (h, d) in &self.deviations {
            let _ = writeln!(out, "{h}\t{d:.6}");
        }
        let _ = writeln!(out, "selected\t{}", self.head);
        out
    }
}

/// For every head, drop each dev sentence's top `⌊λ|x|⌋` tokens by that
/// head's α, re-classify, and average `|P(s|x) − P(s|x_reduced)|`. The head
/// with the largest deviation wins; ties go to the first in (layer, head) order.
pub fn select_style_head<S: Scalar>(
    classifier: &Model<S>,
    dev: &[StyledSentence],
    lambda: f64,
) -> Result<HeadSelection> {
    if dev.is_empty() {
        return Err(Error::invalid("head selection needs a non-empty dev set"));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    let c = classifier.config();
    let heads: Vec<HeadId> = (0..c.layers)
        .flat_map(|layer| (0..c.heads).map(move |head| HeadId { layer, head }))
        .collect();
    let mut sums = vec![0.0f64; heads.len()];
    let mut used = 0;
    let mut skipped = 0;
    for sentence in dev {
        let n = sentence.len();
        let k = mask_count(lambda, n);
        if n == 0 || k >= n {
            log::warn!("head selection: skipping {:?}, removal would empty it", sentence.raw_text);
            skipped += 1;
            continue;
        }
        used += 1;
        if k == 0 {
            continue;
        }
        let label = sentence.style.index();
        let full = classifier.classify(&sentence.tokens)?;
        let p_full = full.probs[label].f64();
        for (hi, &head) in heads.iter().enumerate() {
            let drop = top_positions(&alpha_from(&full, head), k);
            let reduced: Vec<TokenId> = (0..n)
                .filter(|i| drop.binary_search(i).is_err())
                .map(|i| sentence.tokens[i])
                .collect();
            let p_red = classifier.classify(&reduced)?.probs[label].f64();
            sums[hi] += (p_full - p_red).abs();
        }
    }
    if used == 0 {
        return Err(Error::invalid("every dev sentence was skipped during head selection"));
    }
    let deviations: Vec<(HeadId, f64)> = heads.iter().zip(&sums).map(|(&h, &s)| (h, s / used as f64)).collect();
    let mut best = 0;
    for (i, (_, d)) in deviations.iter().enumerate() {
        if *d > deviations[best].1 {
            best = i;
        }
    }
    Ok(HeadSelection {
        head: deviations[best].0,
        lambda_frac: lambda,
        deviations,
        sentences_used: used,
        sentences_skipped: skipped,
    })
}

/// Run the head search for each candidate λ and keep the one whose winning
/// head deviates most.
pub fn tune_lambda<S: Scalar>(classifier: &Model<S>, dev: &[StyledSentence], candidates: &[f64]) -> Result<HeadSelection> {
    let mut best: Option<HeadSelection> = None;
    for &lambda in candidates {
        let sel = select_style_head(classifier, dev, lambda)?;
        let score = sel.deviation(sel.head).unwrap_or(0.0);
        if best.as_ref().is_none_or(|b| score > b.deviation(b.head).unwrap_or(0.0)) {
            best = Some(sel);
        }
    }
    best.ok_or_else(|| Error::invalid("no lambda candidates given"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        let m = compute_mask(&[0.1, 0.6, 0.3], 0.34, MaskMode::Hard);
        assert_eq!(m.mask, vec![0.0, 1.0, 0.0]);
        let m = compute_mask(&[0.1, 0.6, 0.3], 0.0, MaskMode::Hard);
        assert_eq!(m.mask, vec![0.0; 3]);
        let m = compute_mask(&[0.5, 0.5], 0.5, MaskMode::Hard);
        assert_eq!(m.mask, vec![1.0, 0.0]);
        let m = compute_mask(&[0.2, 0.8], 0.5, MaskMode::Continuous);
        assert_eq!(m.mask, m.alpha);
    }

    #[test]
    fn mask_count_is_exact_floor() {
        assert_eq!(mask_count(0.25, 7), 1);
        assert_eq!(mask_count(0.25, 8), 2);
        assert_eq!(mask_count(0.29, 100), 29);
        assert_eq!(mask_count(0.34, 3), 1);
    }

    proptest! {
        #[test]
        fn hard_mask_cardinality(alpha in prop::collection::vec(0.0f64..1.0, 1..30), lambda in 0.0f64..1.0) {
            let m = compute_mask(&alpha, lambda, MaskMode::Hard);
            let ones = m.mask.iter().filter(|&&v| v == 1.0).count();
            prop_assert_eq!(ones, mask_count(lambda, alpha.len()));
            prop_assert!(m.mask.iter().all(|&v| v == 0.0 || v == 1.0));
        }

        #[test]
        fn hard_mask_is_scale_invariant(alpha in prop::collection::vec(0.01f64..1.0, 1..30), lambda in 0.0f64..1.0, c in 0.1f64..10.0) {
            let scaled: Vec<f64> = alpha.iter().map(|a| a * c).collect();
            prop_assert_eq!(
                compute_mask(&alpha, lambda, MaskMode::Hard).mask,
                compute_mask(&scaled, lambda, MaskMode::Hard).mask
            );
        }
    }
}
