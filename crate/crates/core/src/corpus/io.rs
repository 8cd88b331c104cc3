//! Corpus file formats: plain text (one sentence per line, one file per
//! style), JSON-lines style records and JSON-lines gold transfer maps.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{StyleId, StyledSentence, Vocab};
use crate::error::{Error, Result};

/// Non-empty lines of a UTF-8 text file.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut body = String::new();
    for l in lines {
        body.push_str(l.as_ref());
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub sentences: Vec<StyledSentence>,
    /// Lines dropped for exceeding the length limit.
    pub skipped_overlong: usize,
}

/// Load a one-sentence-per-line corpus, labelling every line with `style`.
pub fn load_corpus(
    path: &Path,
    style: StyleId,
    vocab: &Vocab,
    max_len: usize,
) -> Result<LoadedCorpus> {
    let mut loaded = LoadedCorpus::default();
    for line in read_lines(path)? {
        let s = StyledSentence::from_text(vocab, &line, style);
        if s.is_empty() {
            continue;
        }
        if s.len() > max_len {
            loaded.skipped_overlong += 1;
            continue;
        }
        loaded.sentences.push(s);
    }
    if loaded.skipped_overlong > 0 {
        warn!(
            "{}: skipped {} lines longer than {} tokens",
            path.display(),
            loaded.skipped_overlong,
            max_len
        );
    }
    Ok(loaded)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleRecord {
    pub text: String,
    pub style: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub source: String,
    pub target: String,
    pub style_src: String,
    pub style_tgt: String,
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format {
                path: path.into(),
                msg: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

pub fn write_records(path: &Path, vocab: &Vocab, sentences: &[StyledSentence]) -> Result<()> {
    let records: Vec<StyleRecord> = sentences
        .iter()
        .map(|s| StyleRecord {
            text: s.raw_text.clone(),
            style: vocab.styles().name(s.style).to_string(),
        })
        .collect();
    write_jsonl(path, &records)
}

/// Load a records file; unknown style names are a format error.
pub fn load_records(path: &Path, vocab: &Vocab, max_len: usize) -> Result<LoadedCorpus> {
    let mut loaded = LoadedCorpus::default();
    for rec in read_jsonl::<StyleRecord>(path)? {
        let style = vocab.styles().parse(&rec.style).ok_or_else(|| Error::Format {
            path: path.into(),
            msg: format!("unknown style {:?}", rec.style),
        })?;
        let s = StyledSentence::from_text(vocab, &rec.text, style);
        if s.is_empty() {
            continue;
        }
        if s.len() > max_len {
            loaded.skipped_overlong += 1;
            continue;
        }
        loaded.sentences.push(s);
    }
    Ok(loaded)
}

pub fn write_gold_map(path: &Path, records: &[GoldRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_gold_map(path: &Path) -> Result<Vec<GoldRecord>> {
    read_jsonl(path)
}
