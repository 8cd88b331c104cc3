//! Normalization and word-level tokenization.

/// Split raw text into lowercase word tokens. Whitespace separates tokens and
/// every ASCII punctuation character becomes a token of its own.
pub fn split_words(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in raw.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_string());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Canonical form of a sentence: lowercase, punctuation split off, single spaces.
pub fn normalize(raw: &str) -> String {
    split_words(raw).join(" ")
}

pub fn join_words<S: AsRef<str>>(words: &[S]) -> String {
    words
        .iter()
        .map(|w| w.as_ref())
        .collect::<Vec<_>>()
        .join(" ")
}
