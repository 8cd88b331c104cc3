use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::text::split_words;
use super::{StyleId, StyleSet, TokenId};
use crate::error::{Error, Result};

pub const SRC_START: TokenId = 2;
pub const START: TokenId = 3;
pub const END: TokenId = 4;
pub const PAD: TokenId = 5;
pub const UNK: TokenId = 6;
/// Count of reserved ids: two style markers followed by the five fixed specials.
pub const NUM_SPECIAL: usize = 7;

/// Marker token announcing the target style; markers take ids 0 and 1.
pub fn style_marker(style: StyleId) -> TokenId {
    style.index()
}

pub fn is_special(token: TokenId) -> bool {
    token < NUM_SPECIAL
}

/// Bijective word/id table. Special tokens occupy the lowest ids, words follow
/// in lexicographic order so the table depends only on the word set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    styles: StyleSet,
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub fn build<I, S>(styles: StyleSet, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words = BTreeSet::new();
        for text in texts {
            words.extend(split_words(text.as_ref()));
        }
        Self::from_words(styles, words)
    }

    pub fn from_words<I: IntoIterator<Item = String>>(styles: StyleSet, words: I) -> Self {
        let mut tokens = special_strings(&styles);
        let specials: BTreeSet<String> = tokens.iter().cloned().collect();
        let words: BTreeSet<String> = words.into_iter().filter(|w| !specials.contains(w)).collect();
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            styles,
            tokens,
            index,
        }
    }

    pub fn styles(&self) -> &StyleSet {
        &self.styles
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Ids of the word tokens of `raw`; unknown words map to `UNK`.
    pub fn encode(&self, raw: &str) -> Vec<TokenId> {
        split_words(raw)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Decode dropping special tokens (markers, START, END, ...).
    pub fn decode_words(&self, ids: &[TokenId]) -> String {
        let words: Vec<TokenId> = ids.iter().copied().filter(|&t| !is_special(t)).collect();
        self.decode(&words)
    }

    /// SHA-256 over the ordered token table; recorded in checkpoint manifests.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// One token per line, specials first.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for t in &self.tokens {
            body.push_str(t);
            body.push('\n');
        }
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = body.lines().collect();
        if lines.len() < NUM_SPECIAL {
            return Err(Error::Format {
                path: path.into(),
                msg: "vocab shorter than the special-token block".into(),
            });
        }
        let styles = StyleSet::new(
            strip_marker(lines[0]).ok_or_else(|| bad_marker(path))?,
            strip_marker(lines[1]).ok_or_else(|| bad_marker(path))?,
        );
        let vocab = Vocab::from_words(styles, lines[NUM_SPECIAL..].iter().map(|s| s.to_string()));
        if vocab.tokens.len() != lines.len() || vocab.tokens.iter().zip(&lines).any(|(a, b)| a != b) {
            return Err(Error::Format {
                path: path.into(),
                msg: "vocab entries are not in canonical order".into(),
            });
        }
        Ok(vocab)
    }
}

fn special_strings(styles: &StyleSet) -> Vec<String> {
    vec![
        marker_string(styles.name(StyleId::new(0))),
        marker_string(styles.name(StyleId::new(1))),
        "<SRC_START>".into(),
        "<START>".into(),
        "<END>".into(),
        "<PAD>".into(),
        "<UNK>".into(),
    ]
}

fn marker_string(name: &str) -> String {
    format!("<{}>", name.to_uppercase())
}

fn strip_marker(s: &str) -> Option<String> {
    s.strip_prefix('<')?
        .strip_suffix('>')
        .map(|n| n.to_lowercase())
}

fn bad_marker(path: &Path) -> Error {
    Error::Format {
        path: path.into(),
        msg: "first two entries must be style markers".into(),
    }
}
