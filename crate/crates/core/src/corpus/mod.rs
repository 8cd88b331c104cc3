//! Corpora: tokenization, vocabularies, the synthetic toy task and parallel
//! corpus synthesis for pre-training.

mod augment;
mod io;
mod parallel;
pub mod text;
mod toy;
mod vocab;

use serde::{Deserialize, Serialize};

pub use augment::word_dropout;
pub use io::{
    load_corpus, load_records, read_gold_map, read_jsonl, read_lines, write_gold_map, write_lines,
    write_records, GoldRecord, LoadedCorpus, StyleRecord,
};
pub use parallel::{synthesize_parallel_corpus, ParallelPair, Transform};
pub use toy::{generate_toy_corpus, Lexicon, ToyCorpus, ToyTaskSpec};
pub use vocab::{
    is_special, style_marker, Vocab, END, NUM_SPECIAL, PAD, SRC_START, START, UNK,
};

pub type TokenId = usize;

/// One of the two styles of a task; ids are 0 and 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StyleId(u8);

impl StyleId {
    pub const ZERO: StyleId = StyleId(0);
    pub const ONE: StyleId = StyleId(1);

    pub fn new(id: u8) -> Self {
        assert!(id < 2, "style ids are 0 and 1");
        StyleId(id)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn opposite(self) -> Self {
        StyleId(1 - self.0)
    }

    pub fn both() -> [StyleId; 2] {
        [StyleId(0), StyleId(1)]
    }
}

/// Names of the two styles of a task, indexed by `StyleId`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleSet {
    names: [String; 2],
}

impl StyleSet {
    pub fn new(first: impl Into<String>, second: impl Into<String>) -> Self {
        let names = [first.into(), second.into()];
        assert_ne!(names[0], names[1], "style names must differ");
        StyleSet { names }
    }

    pub fn sentiment() -> Self {
        Self::new("pos", "neg")
    }

    pub fn name(&self, id: StyleId) -> &str {
        &self.names[id.index()]
    }

    pub fn parse(&self, name: &str) -> Option<StyleId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| StyleId(i as u8))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StyledSentence {
    pub tokens: Vec<TokenId>,
    pub style: StyleId,
    pub raw_text: String,
}

impl StyledSentence {
    pub fn new(tokens: Vec<TokenId>, style: StyleId, raw_text: impl Into<String>) -> Self {
        StyledSentence {
            tokens,
            style,
            raw_text: raw_text.into(),
        }
    }

    pub fn from_text(vocab: &Vocab, raw: &str, style: StyleId) -> Self {
        let raw_text = text::normalize(raw);
        StyledSentence {
            tokens: vocab.encode(&raw_text),
            style,
            raw_text,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
