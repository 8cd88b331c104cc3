//! Word-dropout augmentation for classifier training.

use rand::Rng as _;

use super::{StyledSentence, Vocab};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// The input sentences followed by `copies` passes over them in which every
/// token is dropped independently with probability `p`. Copies that would
/// be empty are skipped. A sentence that loses its style words keeps its
/// label, so remnants without style evidence appear under both labels and
/// the classifier learns to stay undecided on them.
pub fn word_dropout(
    sentences: &[StyledSentence],
    vocab: &Vocab,
    p: f64,
    copies: usize,
    seed: u64,
) -> Result<Vec<StyledSentence>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("word dropout must lie in [0, 1), got {p}")));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = sentences.to_vec();
    for _ in 0..copies {
        for s in sentences {
            let tokens: Vec<_> = s.tokens.iter().copied().filter(|_| rng.gen::<f64>() >= p).collect();
            if !tokens.is_empty() {
                let raw = vocab.decode(&tokens);
                out.push(StyledSentence::new(tokens, s.style, raw));
            }
        }
    }
    Ok(out)
}
