//! Pseudo-parallel corpora for MLE pre-training, produced by cheap
//! "baseline" transforms of a non-parallel corpus.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::toy::gold_transfer;
use super::{Lexicon, StyledSentence, Vocab};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transform {
    /// Target is the source itself under the opposite label.
    Identity,
    /// Target is the gold aligned swap.
    LexiconSwap,
    /// Aligned swap where each swap independently fails with probability
    /// `p_noise`, leaving a random source-style lexicon word in place.
    NoisySwap { p_noise: f64 },
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Identity => write!(f, "identity"),
            Transform::LexiconSwap => write!(f, "lexicon_swap"),
            Transform::NoisySwap { p_noise } => write!(f, "noisy_swap({p_noise})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub source: StyledSentence,
    pub target: StyledSentence,
    pub provenance: String,
}

pub fn synthesize_parallel_corpus(
    corpus: &[StyledSentence],
    transform: Transform,
    vocab: &Vocab,
    lexicon: Option<&Lexicon>,
    seed: u64,
) -> Result<Vec<ParallelPair>> {
    let provenance = transform.to_string();
    let needs_lexicon = !matches!(transform, Transform::Identity);
    let lexicon = match (needs_lexicon, lexicon) {
        (true, None) => return Err(Error::invalid(format!("{provenance} requires style lexicons"))),
        (_, l) => l,
    };
    if let Transform::NoisySwap { p_noise } = transform {
        if !(0.0..=1.0).contains(&p_noise) {
            return Err(Error::invalid("p_noise must lie in [0, 1]"));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut pairs = Vec::with_capacity(corpus.len());
    for s in corpus {
        if s.is_empty() {
            return Err(Error::invalid("empty sentence in corpus"));
        }
        let target = match transform {
            Transform::Identity => StyledSentence::new(s.tokens.clone(), s.style.opposite(), s.raw_text.clone()),
            Transform::LexiconSwap => gold_transfer(vocab, lexicon.unwrap(), s),
            Transform::NoisySwap { p_noise } => {
                let lex = lexicon.unwrap();
                let tokens: Vec<_> = s
                    .tokens
                    .iter()
                    .map(|&t| match lex.style_of(t) {
                        Some(style) => {
                            let fail: f64 = rng.gen();
                            if fail < p_noise {
                                *lex.words(style).choose(&mut rng).unwrap()
                            } else {
                                lex.swap(t)
                            }
                        }
                        None => t,
                    })
                    .collect();
                let raw = vocab.decode(&tokens);
                StyledSentence::new(tokens, s.style.opposite(), raw)
            }
        };
        pairs.push(ParallelPair {
            source: s.clone(),
            target,
            provenance: provenance.clone(),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{StyleId, StyleSet};

    fn setup() -> (Vocab, Lexicon, StyledSentence) {
        let vocab = Vocab::build(StyleSet::sentiment(), ["the food was good bad great awful"]);
        let lex = Lexicon::new([
            vec![vocab.id("good").unwrap(), vocab.id("great").unwrap()],
            vec![vocab.id("bad").unwrap(), vocab.id("awful").unwrap()],
        ])
        .unwrap();
        let s = StyledSentence::from_text(&vocab, "the food was good", StyleId::ZERO);
        (vocab, lex, s)
    }

    #[test]
    fn identity_flips_label_only() {
        let (vocab, _, s) = setup();
        let p = synthesize_parallel_corpus(std::slice::from_ref(&s), Transform::Identity, &vocab, None, 0).unwrap();
        assert_eq!(p[0].target.raw_text, "the food was good");
        assert_eq!(p[0].target.style, StyleId::ONE);
        assert_eq!(p[0].provenance, "identity");
    }

    #[test]
    fn lexicon_swap_uses_aligned_word() {
        let (vocab, lex, s) = setup();
        let p = synthesize_parallel_corpus(&[s], Transform::LexiconSwap, &vocab, Some(&lex), 0).unwrap();
        assert_eq!(p[0].target.raw_text, "the food was bad");
        assert_ne!(p[0].source.style, p[0].target.style);
    }

    #[test]
    fn noiseless_noisy_swap_equals_lexicon_swap() {
        let (vocab, lex, s) = setup();
        let a = synthesize_parallel_corpus(std::slice::from_ref(&s), Transform::LexiconSwap, &vocab, Some(&lex), 3).unwrap();
        let b = synthesize_parallel_corpus(&[s], Transform::NoisySwap { p_noise: 0.0 }, &vocab, Some(&lex), 3).unwrap();
        assert_eq!(a[0].target, b[0].target);
    }

    #[test]
    fn full_noise_keeps_source_style_words() {
        let (vocab, lex, s) = setup();
        let p = synthesize_parallel_corpus(&[s], Transform::NoisySwap { p_noise: 1.0 }, &vocab, Some(&lex), 3).unwrap();
        let w = p[0].target.tokens[3];
        assert_eq!(lex.style_of(w), Some(StyleId::ZERO));
    }

    #[test]
    fn lexicon_transforms_need_a_lexicon() {
        let (vocab, _, s) = setup();
        assert!(synthesize_parallel_corpus(&[s], Transform::LexiconSwap, &vocab, None, 0).is_err());
    }
}
