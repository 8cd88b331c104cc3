//! Flat parameter vector layout with named segments.

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Readout};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub readout: Option<usize>,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub head_w: usize,
    pub head_b: usize,
}

/// Segment table plus fast offsets; a pure function of the model config.
#[derive(Debug, Clone)]
pub struct Layout {
    segments: Vec<Segment>,
    pub(crate) offsets: Offsets,
    total: usize,
}

struct Builder {
    segments: Vec<Segment>,
    next: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.next;
        let seg = Segment {
            name,
            offset,
            shape,
        };
        self.next += seg.len();
        self.segments.push(seg);
        offset
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.width;
        let f = cfg.mlp_width();
        let mut b = Builder {
            segments: Vec::new(),
            next: 0,
        };
        let tok_emb = b.push("tok_emb".into(), vec![cfg.vocab_size, d]);
        let pos_emb = b.push("pos_emb".into(), vec![cfg.max_len, d]);
        let readout = match cfg.readout {
            Readout::Classify { .. } => Some(b.push("readout".into(), vec![d])),
            Readout::NextToken => None,
        };
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let mut p = |n: &str, shape: Vec<usize>| b.push(format!("layer{l}.{n}"), shape);
            layers.push(LayerOffsets {
                ln1_g: p("ln1.gain", vec![d]),
                ln1_b: p("ln1.bias", vec![d]),
                wq: p("attn.wq", vec![d, d]),
                bq: p("attn.bq", vec![d]),
                wk: p("attn.wk", vec![d, d]),
                bk: p("attn.bk", vec![d]),
                wv: p("attn.wv", vec![d, d]),
                bv: p("attn.bv", vec![d]),
                wo: p("attn.wo", vec![d, d]),
                bo: p("attn.bo", vec![d]),
                ln2_g: p("ln2.gain", vec![d]),
                ln2_b: p("ln2.bias", vec![d]),
                w1: p("mlp.w1", vec![d, f]),
                b1: p("mlp.b1", vec![f]),
                w2: p("mlp.w2", vec![f, d]),
                b2: p("mlp.b2", vec![d]),
            });
        }
        let lnf_g = b.push("lnf.gain".into(), vec![d]);
        let lnf_b = b.push("lnf.bias".into(), vec![d]);
        let out = cfg.output_width();
        let head_w = b.push("head.w".into(), vec![d, out]);
        let head_b = b.push("head.b".into(), vec![out]);
        Layout {
            total: b.next,
            segments: b.segments,
            offsets: Offsets {
                tok_emb,
                pos_emb,
                readout,
                layers,
                lnf_g,
                lnf_b,
                head_w,
                head_b,
            },
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn total(&self) -> usize {
        self.total
    }
}
