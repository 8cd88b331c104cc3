//! Synthetic two-style corpus with planted, aligned style lexicons.
//!
//! Every sentence is a template filled with content words and one or more
//! words from the lexicon of its style. Index `i` of one lexicon is the gold
//! replacement for index `i` of the other, so the gold transfer of a sentence
//! is a position-wise swap.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{GoldRecord, StyleId, StyleSet, StyledSentence, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyTaskSpec {
    /// Whitespace-separated patterns. Slots are `{noun}`, `{verb}`, `{mod}`
    /// and `{style}`; tokens between `[` and `]` form an optional segment
    /// that is included with probability `multi_attribute_prob`.
    pub templates: Vec<String>,
    pub style_names: [String; 2],
    pub style_lexicons: [Vec<String>; 2],
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub modifiers: Vec<String>,
    pub min_len: usize,
    pub max_len: usize,
    pub multi_attribute_prob: f64,
    pub seed: u64,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl Default for ToyTaskSpec {
    fn default() -> Self {
        ToyTaskSpec {
            templates: [
                "the {noun} was {style} [ and {style} ]",
                "the {noun} was {mod} {style} [ and {style} ]",
                "their {noun} is {style} [ and {style} ] .",
                "we {verb} the {style} {noun} .",
                "a {style} {noun} [ and {style} {noun} ] .",
                "it was a {style} {noun} .",
                "the {noun} seemed {mod} {style} .",
                "we {verb} the {noun} , so {style} [ and {style} ]",
                "my {noun} was {style} [ , {mod} {style} ] .",
                "overall the {noun} is {mod} {style} [ and {style} ]",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            style_names: ["pos".into(), "neg".into()],
            style_lexicons: [
                words("good great delicious friendly amazing excellent fresh clean fast helpful tasty lovely"),
                words("bad terrible bland rude awful poor stale dirty slow useless nasty horrible"),
            ],
            nouns: words("food pizza service staff place pasta coffee room menu waiter soup bread"),
            verbs: words("ordered tried shared booked picked found got saw"),
            modifiers: words("really very quite pretty truly rather"),
            min_len: 4,
            max_len: 14,
            multi_attribute_prob: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Word(String),
    Noun,
    Verb,
    Modifier,
    Style,
}

#[derive(Debug, Clone)]
struct Template {
    base: Vec<Slot>,
    /// Optional segment and the index in `base` it is inserted at.
    optional: Option<(usize, Vec<Slot>)>,
}

impl Template {
    fn parse(pattern: &str) -> Result<Self> {
        let mut base = Vec::new();
        let mut optional: Option<(usize, Vec<Slot>)> = None;
        let mut in_opt = false;
        for tok in pattern.split_whitespace() {
            match tok {
                "[" if !in_opt && optional.is_none() => {
                    in_opt = true;
                    optional = Some((base.len(), Vec::new()));
                }
                "]" if in_opt => in_opt = false,
                "[" | "]" => {
                    return Err(Error::invalid(format!("bad optional segment in {pattern:?}")))
                }
                _ => {
                    let slot = match tok {
                        "{noun}" => Slot::Noun,
                        "{verb}" => Slot::Verb,
                        "{mod}" => Slot::Modifier,
                        "{style}" => Slot::Style,
                        w if w.starts_with('{') => {
                            return Err(Error::invalid(format!("unknown slot {w} in {pattern:?}")))
                        }
                        w => Slot::Word(w.to_string()),
                    };
                    match (&mut optional, in_opt) {
                        (Some((_, seg)), true) => seg.push(slot),
                        _ => base.push(slot),
                    }
                }
            }
        }
        if in_opt {
            return Err(Error::invalid(format!("unclosed optional segment in {pattern:?}")));
        }
        if !base.contains(&Slot::Style) {
            return Err(Error::invalid(format!("template {pattern:?} has no mandatory {{style}} slot")));
        }
        Ok(Template { base, optional })
    }

    fn base_len(&self) -> usize {
        self.base.len()
    }

    fn full_len(&self) -> usize {
        self.base.len() + self.optional.as_ref().map_or(0, |(_, s)| s.len())
    }
}

/// Aligned style lexicons over vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: [Vec<TokenId>; 2],
    lookup: HashMap<TokenId, (StyleId, usize)>,
}

impl Lexicon {
    pub fn new(words: [Vec<TokenId>; 2]) -> Result<Self> {
        if words[0].len() != words[1].len() || words[0].is_empty() {
            return Err(Error::invalid("aligned style lexicons must be non-empty and of equal length"));
        }
        let mut lookup = HashMap::new();
        for style in StyleId::both() {
            for (i, &w) in words[style.index()].iter().enumerate() {
                if lookup.insert(w, (style, i)).is_some() {
                    return Err(Error::invalid("style lexicons must be disjoint"));
                }
            }
        }
        Ok(Lexicon { words, lookup })
    }

    pub fn from_spec(spec: &ToyTaskSpec, vocab: &Vocab) -> Result<Self> {
        let ids = |ws: &Vec<String>| -> Result<Vec<TokenId>> {
            ws.iter()
                .map(|w| {
                    vocab
                        .id(w)
                        .ok_or_else(|| Error::invalid(format!("lexicon word {w:?} not in vocab")))
                })
                .collect()
        };
        Lexicon::new([ids(&spec.style_lexicons[0])?, ids(&spec.style_lexicons[1])?])
    }

    pub fn words(&self, style: StyleId) -> &[TokenId] {
        &self.words[style.index()]
    }

    pub fn style_of(&self, token: TokenId) -> Option<StyleId> {
        self.lookup.get(&token).map(|&(s, _)| s)
    }

    pub fn is_style_word(&self, token: TokenId) -> bool {
        self.lookup.contains_key(&token)
    }

    /// Aligned counterpart of a style word; other tokens map to themselves.
    pub fn swap(&self, token: TokenId) -> TokenId {
        match self.lookup.get(&token) {
            Some(&(s, i)) => self.words[s.opposite().index()][i],
            None => token,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub vocab: Vocab,
    pub lexicon: Lexicon,
    pub train: Vec<StyledSentence>,
    pub dev: Vec<StyledSentence>,
    pub test: Vec<StyledSentence>,
}

impl ToyCorpus {
    /// Gold transfer: every style word replaced by its aligned counterpart.
    pub fn gold(&self, s: &StyledSentence) -> StyledSentence {
        gold_transfer(&self.vocab, &self.lexicon, s)
    }

    pub fn gold_records(&self) -> Vec<GoldRecord> {
        let styles = self.vocab.styles();
        self.train
            .iter()
            .chain(&self.dev)
            .chain(&self.test)
            .map(|s| {
                let g = self.gold(s);
                GoldRecord {
                    source: s.raw_text.clone(),
                    target: g.raw_text,
                    style_src: styles.name(s.style).to_string(),
                    style_tgt: styles.name(g.style).to_string(),
                }
            })
            .collect()
    }
}

pub(crate) fn gold_transfer(vocab: &Vocab, lexicon: &Lexicon, s: &StyledSentence) -> StyledSentence {
    let tokens: Vec<TokenId> = s.tokens.iter().map(|&t| lexicon.swap(t)).collect();
    let raw_text = vocab.decode(&tokens);
    StyledSentence::new(tokens, s.style.opposite(), raw_text)
}

fn validate(spec: &ToyTaskSpec) -> Result<Vec<Template>> {
    if spec.style_lexicons[0].len() != spec.style_lexicons[1].len() {
        return Err(Error::invalid("aligned style lexicons have different lengths"));
    }
    if spec.style_lexicons[0].is_empty() || spec.nouns.is_empty() || spec.verbs.is_empty() || spec.modifiers.is_empty() {
        return Err(Error::invalid("toy spec lexicons must be non-empty"));
    }
    if !(0.0..=1.0).contains(&spec.multi_attribute_prob) {
        return Err(Error::invalid("multi_attribute_prob must lie in [0, 1]"));
    }
    let templates = spec
        .templates
        .iter()
        .map(|t| Template::parse(t))
        .collect::<Result<Vec<_>>>()?;
    let mut seen: HashSet<&str> = HashSet::new();
    let content = spec.nouns.iter().chain(&spec.verbs).chain(&spec.modifiers);
    let literals: Vec<&str> = templates
        .iter()
        .flat_map(|t| t.base.iter().chain(t.optional.iter().flat_map(|(_, s)| s.iter())))
        .filter_map(|s| match s {
            Slot::Word(w) => Some(w.as_str()),
            _ => None,
        })
        .collect();
    for w in spec.style_lexicons[0].iter().chain(&spec.style_lexicons[1]) {
        if !seen.insert(w) {
            return Err(Error::invalid(format!("style word {w:?} appears twice")));
        }
    }
    for w in content.map(String::as_str).chain(literals.iter().copied()) {
        if seen.contains(w) {
            return Err(Error::invalid(format!("style word {w:?} also used as a content word")));
        }
    }
    let usable = templates
        .iter()
        .filter(|t| t.base_len() >= spec.min_len && t.base_len() <= spec.max_len)
        .count();
    if usable == 0 {
        let shortest = templates.iter().map(Template::base_len).min().unwrap_or(0);
        return Err(Error::invalid(format!(
            "no template fits length range {}..={} (shortest template has {} tokens)",
            spec.min_len, spec.max_len, shortest
        )));
    }
    Ok(templates)
}

fn fill(slots: &[Slot], spec: &ToyTaskSpec, style: StyleId, used: &mut Vec<String>, rng: &mut Rng) -> Vec<String> {
    slots
        .iter()
        .map(|slot| match slot {
            Slot::Word(w) => w.clone(),
            Slot::Noun => spec.nouns.choose(rng).unwrap().clone(),
            Slot::Verb => spec.verbs.choose(rng).unwrap().clone(),
            Slot::Modifier => spec.modifiers.choose(rng).unwrap().clone(),
            Slot::Style => {
                let lex = &spec.style_lexicons[style.index()];
                let fresh: Vec<&String> = lex.iter().filter(|w| !used.contains(w)).collect();
                let w = if fresh.is_empty() {
                    lex.choose(rng).unwrap().clone()
                } else {
                    (*fresh.choose(rng).unwrap()).clone()
                };
                used.push(w.clone());
                w
            }
        })
        .collect()
}

/// Generate `n_per_style` unique sentences of each style and split them
/// 80/10/10 (per style) into train/dev/test.
pub fn generate_toy_corpus(spec: &ToyTaskSpec, n_per_style: usize) -> Result<ToyCorpus> {
    if n_per_style < 10 {
        return Err(Error::invalid("n_per_style must be at least 10"));
    }
    let templates = validate(spec)?;
    let usable: Vec<&Template> = templates
        .iter()
        .filter(|t| t.base_len() >= spec.min_len && t.base_len() <= spec.max_len)
        .collect();

    let styles = StyleSet::new(spec.style_names[0].clone(), spec.style_names[1].clone());
    let mut all_words: Vec<String> = Vec::new();
    for t in &templates {
        for s in t.base.iter().chain(t.optional.iter().flat_map(|(_, s)| s.iter())) {
            if let Slot::Word(w) = s {
                all_words.push(w.clone());
            }
        }
    }
    all_words.extend(spec.nouns.iter().cloned());
    all_words.extend(spec.verbs.iter().cloned());
    all_words.extend(spec.modifiers.iter().cloned());
    all_words.extend(spec.style_lexicons.iter().flatten().cloned());
    let vocab = Vocab::from_words(styles, all_words);
    let lexicon = Lexicon::from_spec(spec, &vocab)?;

    let mut rng = rng_from_seed(spec.seed);
    let mut seen = HashSet::new();
    let mut splits: [Vec<StyledSentence>; 3] = Default::default();
    for style in StyleId::both() {
        let mut sentences = Vec::with_capacity(n_per_style);
        let mut attempts = 0usize;
        while sentences.len() < n_per_style {
            attempts += 1;
            if attempts > n_per_style * 200 {
                return Err(Error::invalid(format!(
                    "could not generate {n_per_style} distinct sentences per style from this spec"
                )));
            }
            let t = usable[rng.gen_range(0..usable.len())];
            let mut used = Vec::new();
            let mut words = fill(&t.base, spec, style, &mut used, &mut rng);
            if let Some((at, seg)) = &t.optional {
                let roll: f64 = rng.gen();
                if roll < spec.multi_attribute_prob && t.full_len() <= spec.max_len {
                    let extra = fill(seg, spec, style, &mut used, &mut rng);
                    words.splice(*at..*at, extra);
                }
            }
            let raw = words.join(" ");
            if seen.insert(raw.clone()) {
                let tokens = vocab.encode(&raw);
                sentences.push(StyledSentence::new(tokens, style, raw));
            }
        }
        sentences.shuffle(&mut rng);
        let n_eval = n_per_style / 10;
        let test = sentences.split_off(n_per_style - n_eval);
        let dev = sentences.split_off(n_per_style - 2 * n_eval);
        splits[0].extend(sentences);
        splits[1].extend(dev);
        splits[2].extend(test);
    }
    for split in splits.iter_mut() {
        split.shuffle(&mut rng);
    }
    let [train, dev, test] = splits;
    Ok(ToyCorpus {
        vocab,
        lexicon,
        train,
        dev,
        test,
    })
}
