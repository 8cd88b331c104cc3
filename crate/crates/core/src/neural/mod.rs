//! Small attention models behind one handle type: the generator policy, the
//! style classifier and the fluency language model.

mod checkpoint;
mod kernels;
mod layout;
mod optim;
mod transformer;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use layout::{Layout, Segment};
pub use optim::{clip_global_norm, global_norm, Adam};
pub use transformer::DecodeState;

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::{log_softmax, softmax, Scalar};
use transformer::Net;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Causal,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Readout {
    /// Distribution over the vocabulary at every position.
    NextToken,
    /// Class distribution read from a dedicated position prepended to the input.
    Classify { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_len: usize,
    pub context: Context,
    pub readout: Readout,
    /// Standard deviation scale of the random initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn generator(vocab_size: usize, max_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            width: 64,
            layers: 2,
            heads: 2,
            max_len,
            context: Context::Causal,
            readout: Readout::NextToken,
            init_scale: 1.0,
        }
    }

    pub fn language_model(vocab_size: usize, max_len: usize) -> Self {
        Self::generator(vocab_size, max_len)
    }

    pub fn classifier(vocab_size: usize, max_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            width: 64,
            layers: 2,
            heads: 4,
            max_len,
            context: Context::Bidirectional,
            readout: Readout::Classify { classes: 2 },
            init_scale: 1.0,
        }
    }

    pub fn mlp_width(&self) -> usize {
        4 * self.width
    }

    pub fn output_width(&self) -> usize {
        match self.readout {
            Readout::NextToken => self.vocab_size,
            Readout::Classify { classes } => classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.layers == 0 || self.vocab_size == 0 || self.max_len == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if let Readout::Classify { classes } = self.readout {
            if classes < 2 {
                return Err(Error::invalid("classifier needs at least two classes"));
            }
        }
        Ok(())
    }

    /// Number of scalar parameters; depends on the config alone.
    pub fn param_count(&self) -> usize {
        Layout::new(self).total()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Trainable,
    Frozen,
}

/// Per-layer, per-head attention weights of one input sequence.
#[derive(Debug, Clone)]
pub struct AttentionMap<S> {
    pub layers: usize,
    pub heads: usize,
    pub len: usize,
    weights: Vec<Vec<S>>,
}

impl<S: Scalar> AttentionMap<S> {
    /// Weights of query position `query` over all key positions.
    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[S] {
        let start = (head * self.len + query) * self.len;
        &self.weights[layer][start..start + self.len]
    }
}

#[derive(Debug, Clone)]
pub struct Classification<S> {
    pub probs: Vec<S>,
    pub attention: AttentionMap<S>,
}

/// Per-position log-probabilities of a sequence under a causal model.
/// Entry `t` is `log p(tokens[t] | tokens[..t])`; entry 0 is never supervised.
#[derive(Debug, Clone)]
pub struct LogProbs<S> {
    pub values: Vec<S>,
    pub mask: Vec<bool>,
}

impl<S: Scalar> LogProbs<S> {
    pub fn total(&self) -> S {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .sum()
    }
}

/// A causal training sequence; `weights[t]` multiplies `-log p(tokens[t] | tokens[..t])`.
#[derive(Debug, Clone)]
pub struct WeightedSequence<S> {
    pub tokens: Vec<TokenId>,
    pub weights: Vec<S>,
}

/// A classification example contributing `-weight * log p(label | tokens)`.
#[derive(Debug, Clone)]
pub struct LabeledSequence<S> {
    pub tokens: Vec<TokenId>,
    pub label: usize,
    pub weight: S,
}

/// A model: config, flat parameter vector and trainable/frozen mode.
#[derive(Debug, Clone)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    layout: Layout,
    params: Vec<S>,
    mode: Mode,
}

impl<S: Scalar> Model<S> {
    /// Random initialization: matrices N(0, scale/sqrt(fan_in)), residual
    /// output projections additionally divided by sqrt(2 * layers), gains 1,
    /// biases 0, embeddings N(0, 0.1 * scale), output head N(0, 0.02 * scale).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![S::zero(); layout.total()];
        let mut rng = rng_from_seed(seed);
        let scale = config.init_scale;
        let resid = (2.0 * config.layers as f64).sqrt();
        for seg in layout.segments() {
            let name = seg.name.as_str();
            let leaf = name.rsplit('.').next().unwrap_or(name);
            let std = match leaf {
                "gain" => {
                    params[seg.range()].iter_mut().for_each(|p| *p = S::one());
                    continue;
                }
                "bias" | "bq" | "bk" | "bv" | "bo" | "b1" | "b2" | "b" => continue,
                "tok_emb" | "pos_emb" | "readout" => 0.1 * scale,
                "w" => 0.02 * scale,
                "wo" | "w2" => scale / (seg.shape[0] as f64).sqrt() / resid,
                _ => scale / (seg.shape[0] as f64).sqrt(),
            };
            let dist = Normal::new(0.0, std).expect("finite std");
            for p in &mut params[seg.range()] {
                *p = S::of(dist.sample(&mut rng));
            }
        }
        Ok(Model {
            config,
            layout,
            params,
            mode: Mode::Trainable,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<S>, mode: Mode) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, config needs {}",
                params.len(),
                layout.total()
            )));
        }
        Ok(Model {
            config,
            layout,
            params,
            mode,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_frozen(&self) -> bool {
        self.mode == Mode::Frozen
    }

    pub fn params_mut(&mut self) -> Result<&mut [S]> {
        match self.mode {
            Mode::Frozen => Err(Error::Frozen),
            Mode::Trainable => Ok(&mut self.params),
        }
    }

    pub fn segment(&self, name: &str) -> Option<&[S]> {
        self.layout.segment(name).map(|s| &self.params[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Result<&mut [S]> {
        let range = self
            .layout
            .segment(name)
            .ok_or_else(|| Error::invalid(format!("no parameter segment {name:?}")))?
            .range();
        Ok(&mut self.params_mut()?[range])
    }

    pub fn freeze(mut self) -> Self {
        self.mode = Mode::Frozen;
        self
    }

    /// Frozen copy, e.g. a reward-model snapshot.
    pub fn snapshot(&self) -> Self {
        self.clone().freeze()
    }

    pub fn unfreeze(mut self) -> Self {
        self.mode = Mode::Trainable;
        self
    }

    /// Same model in another scalar type.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|&p| T::of(p.f64())).collect(),
            mode: self.mode,
        }
    }

    fn net(&self) -> Net<'_, S> {
        Net {
            cfg: &self.config,
            off: &self.layout.offsets,
            p: &self.params,
        }
    }

    fn check_tokens(&self, tokens: &[TokenId], positions: usize) -> Result<()> {
        if positions > self.config.max_len {
            return Err(Error::TooLong {
                len: positions,
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} outside vocab of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn require_causal(&self) -> Result<()> {
        if self.config.context != Context::Causal || self.config.readout != Readout::NextToken {
            return Err(Error::invalid("operation requires a causal next-token model"));
        }
        Ok(())
    }

    fn require_classifier(&self) -> Result<usize> {
        match self.config.readout {
            Readout::Classify { classes } => Ok(classes),
            Readout::NextToken => Err(Error::invalid("operation requires a classification model")),
        }
    }

    /// Logits over the vocabulary for the token following `prefix`.
    pub fn next_token_logits(&self, prefix: &[TokenId]) -> Result<Vec<S>> {
        self.require_causal()?;
        if prefix.is_empty() {
            return Err(Error::invalid("prefix must be non-empty"));
        }
        self.check_tokens(prefix, prefix.len())?;
        let fp = self.net().forward(&wrap(prefix));
        let v = self.config.vocab_size;
        let last = prefix.len() - 1;
        Ok(fp.logits[last * v..(last + 1) * v].to_vec())
    }

    /// Next-token logits at every position of `tokens`, row-major `[len, vocab]`.
    pub fn all_logits(&self, tokens: &[TokenId]) -> Result<Vec<S>> {
        self.require_causal()?;
        self.check_tokens(tokens, tokens.len())?;
        Ok(self.net().forward(&wrap(tokens)).logits)
    }

    pub fn sequence_log_probs(&self, tokens: &[TokenId], mask: &[bool]) -> Result<LogProbs<S>> {
        if mask.len() != tokens.len() {
            return Err(Error::invalid("mask length differs from sequence length"));
        }
        let logits = self.all_logits(tokens)?;
        let v = self.config.vocab_size;
        let mut values = vec![S::zero(); tokens.len()];
        for t in 1..tokens.len() {
            let lp = log_softmax(&logits[(t - 1) * v..t * v]);
            values[t] = lp[tokens[t]];
        }
        let mut mask = mask.to_vec();
        if let Some(m) = mask.first_mut() {
            *m = false;
        }
        Ok(LogProbs { values, mask })
    }

    /// Class distribution of `sentence` and the attention maps of every head.
    /// Position 0 of the maps is the readout position; token `i` sits at `i + 1`.
    pub fn classify(&self, sentence: &[TokenId]) -> Result<Classification<S>> {
        self.require_classifier()?;
        if sentence.is_empty() {
            return Err(Error::invalid("cannot classify an empty sentence"));
        }
        self.check_tokens(sentence, sentence.len() + 1)?;
        let fp = self.net().forward(&readout_inputs(sentence));
        let probs = softmax(&fp.logits);
        let attention = AttentionMap {
            layers: self.config.layers,
            heads: self.config.heads,
            len: fp.len,
            weights: fp.layers.into_iter().map(|l| l.att).collect(),
        };
        Ok(Classification { probs, attention })
    }

    /// Loss `-Σ w_t log p(tokens[t] | tokens[..t])` over the batch and its gradient.
    pub fn weighted_nll_gradient(&self, batch: &[WeightedSequence<S>]) -> Result<(S, Vec<S>)> {
        self.require_causal()?;
        let v = self.config.vocab_size;
        let mut grad = vec![S::zero(); self.params.len()];
        let mut loss = S::zero();
        let net = self.net();
        for seq in batch {
            if seq.weights.len() != seq.tokens.len() {
                return Err(Error::invalid("weights length differs from sequence length"));
            }
            if seq.weights.iter().skip(1).all(|&w| w == S::zero()) {
                continue;
            }
            self.check_tokens(&seq.tokens, seq.tokens.len())?;
            let fp = net.forward(&wrap(&seq.tokens));
            let mut dlogits = vec![S::zero(); fp.logits.len()];
            for t in 1..seq.tokens.len() {
                let w = seq.weights[t];
                if w == S::zero() {
                    continue;
                }
                let row = &fp.logits[(t - 1) * v..t * v];
                let lp = log_softmax(row);
                loss -= w * lp[seq.tokens[t]];
                let d = &mut dlogits[(t - 1) * v..t * v];
                for (di, &l) in d.iter_mut().zip(&lp) {
                    *di = w * l.exp();
                }
                d[seq.tokens[t]] -= w;
            }
            net.backward(&fp, &dlogits, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("weighted NLL loss = {loss}")));
        }
        Ok((loss, grad))
    }

    /// Loss `-Σ weight · log p(label | tokens)` and its gradient.
    pub fn classification_gradient(&self, batch: &[LabeledSequence<S>]) -> Result<(S, Vec<S>)> {
        let classes = self.require_classifier()?;
        let mut grad = vec![S::zero(); self.params.len()];
        let mut loss = S::zero();
        let net = self.net();
        for ex in batch {
            if ex.label >= classes {
                return Err(Error::invalid(format!("label {} out of range", ex.label)));
            }
            if ex.tokens.is_empty() {
                return Err(Error::invalid("cannot classify an empty sentence"));
            }
            if ex.weight == S::zero() {
                continue;
            }
            self.check_tokens(&ex.tokens, ex.tokens.len() + 1)?;
            let fp = net.forward(&readout_inputs(&ex.tokens));
            let lp = log_softmax(&fp.logits);
            loss -= ex.weight * lp[ex.label];
            let mut dlogits: Vec<S> = lp.iter().map(|&l| ex.weight * l.exp()).collect();
            dlogits[ex.label] -= ex.weight;
            net.backward(&fp, &dlogits, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("classification loss = {loss}")));
        }
        Ok((loss, grad))
    }

    /// Fresh incremental decoding state.
    pub fn decoder(&self) -> Result<DecodeState<S>> {
        self.require_causal()?;
        Ok(DecodeState::new(self.config.layers))
    }

    /// Feed one token and return logits for the following position.
    pub fn decode_step(&self, state: &mut DecodeState<S>, token: TokenId) -> Result<Vec<S>> {
        if state.position() >= self.config.max_len {
            return Err(Error::TooLong {
                len: state.position() + 1,
                max: self.config.max_len,
            });
        }
        if token >= self.config.vocab_size {
            return Err(Error::invalid(format!("token id {token} outside vocab")));
        }
        Ok(self.net().step(state, token))
    }

    /// Plain SGD step `θ ← θ − lr · clip(g)` with global-norm clipping.
    /// Returns the pre-clip gradient norm.
    pub fn sgd_update(&mut self, gradient: &[S], lr: S, clip: Option<S>) -> Result<S> {
        optim::sgd_update(self, gradient, lr, clip)
    }
}

fn wrap(tokens: &[TokenId]) -> Vec<Option<TokenId>> {
    tokens.iter().map(|&t| Some(t)).collect()
}

fn readout_inputs(sentence: &[TokenId]) -> Vec<Option<TokenId>> {
    std::iter::once(None).chain(sentence.iter().map(|&t| Some(t))).collect()
}
