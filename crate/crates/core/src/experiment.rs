//! End-to-end toy pipeline shared by the command-line driver and the
//! acceptance suite: corpus, frozen reward models, evaluation models and
//! pretrained policies.

use serde::{Deserialize, Serialize};

use crate::attribution::{select_style_head, HeadSelection};
use crate::corpus::{
    generate_toy_corpus, synthesize_parallel_corpus, word_dropout, ParallelPair, StyledSentence, ToyCorpus, ToyTaskSpec, Transform,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_transfer, EvalReport};
use crate::neural::{Model, ModelConfig};
use crate::rewards::{ContentMatching, RewardModels, RewardWeights};
use crate::rng::derive_seed_path;
use crate::trainer::{pretrain_classifier, pretrain_lm, pretrain_policy, MleConfig, MleReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub toy: ToyTaskSpec,
    pub n_per_style: usize,
    pub lambda: f64,
    pub classifier_epochs: usize,
    /// Per-token drop rate of the classifier's word-dropout copies.
    pub classifier_word_dropout: f64,
    /// Number of word-dropout passes added to the classifier training set.
    pub classifier_dropout_copies: usize,
    pub lm_epochs: usize,
    pub policy_epochs: usize,
    /// Width of the evaluation classifier; the reward classifier keeps the default.
    pub eval_classifier_width: usize,
    pub max_output_len: usize,
    pub mle: MleConfig,
    /// Root of every model seed in the pipeline.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            toy: ToyTaskSpec::default(),
            n_per_style: 600,
            lambda: 0.25,
            classifier_epochs: 5,
            classifier_word_dropout: 0.5,
            classifier_dropout_copies: 3,
            lm_epochs: 3,
            policy_epochs: 8,
            eval_classifier_width: 48,
            max_output_len: 24,
            mle: MleConfig::default(),
            seed: 1,
        }
    }
}

/// Seeds of the individual models, derived from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    RewardClassifier,
    RewardLm,
    EvalClassifier,
    EvalLm,
    Policy,
}

impl ModelRole {
    fn index(self) -> u64 {
        match self {
            ModelRole::RewardClassifier => 0,
            ModelRole::RewardLm => 1,
            ModelRole::EvalClassifier => 2,
            ModelRole::EvalLm => 3,
            ModelRole::Policy => 4,
        }
    }
}

impl ExperimentConfig {
    pub fn model_seed(&self, role: ModelRole) -> u64 {
        derive_seed_path(self.seed, &[role.index()])
    }

    fn mle_for(&self, role: ModelRole, epochs: usize) -> MleConfig {
        MleConfig {
            epochs,
            seed: derive_seed_path(self.seed, &[role.index(), 1]),
            ..self.mle.clone()
        }
    }

    /// Longest sentence the classifier and LM accept.
    pub fn sentence_max_len(&self) -> usize {
        self.toy.max_len.max(self.max_output_len)
    }

    /// Policy context: prompt of the longest source plus a full output.
    pub fn policy_max_len(&self) -> usize {
        self.toy.max_len + 3 + self.max_output_len
    }

    pub fn corpus(&self) -> Result<ToyCorpus> {
        generate_toy_corpus(&self.toy, self.n_per_style)
    }

    pub fn classifier_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig::classifier(vocab, self.sentence_max_len() + 1)
    }

    pub fn eval_classifier_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            width: self.eval_classifier_width,
            ..self.classifier_config(vocab)
        }
    }

    pub fn lm_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig::language_model(vocab, self.sentence_max_len() + 2)
    }

    pub fn policy_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig::generator(vocab, self.policy_max_len())
    }

    pub fn train_classifier(&self, role: ModelRole, corpus: &ToyCorpus) -> Result<(Model<f32>, MleReport)> {
        let cfg = match role {
            ModelRole::RewardClassifier => self.classifier_config(corpus.vocab.len()),
            ModelRole::EvalClassifier => self.eval_classifier_config(corpus.vocab.len()),
            _ => return Err(Error::invalid("not a classifier role")),
        };
        let train = word_dropout(
            &corpus.train,
            &corpus.vocab,
            self.classifier_word_dropout,
            self.classifier_dropout_copies,
            derive_seed_path(self.seed, &[role.index(), 2]),
        )?;
        let mut model = Model::new(cfg, self.model_seed(role))?;
        let report = pretrain_classifier(&mut model, &train, &corpus.dev, &self.mle_for(role, self.classifier_epochs))?;
        Ok((model.freeze(), report))
    }

    pub fn train_lm(&self, role: ModelRole, corpus: &ToyCorpus) -> Result<(Model<f32>, MleReport)> {
        if !matches!(role, ModelRole::RewardLm | ModelRole::EvalLm) {
            return Err(Error::invalid("not a language-model role"));
        }
        let mut model = Model::new(self.lm_config(corpus.vocab.len()), self.model_seed(role))?;
        let report = pretrain_lm(&mut model, &corpus.train, &corpus.dev, &self.mle_for(role, self.lm_epochs))?;
        Ok((model.freeze(), report))
    }

    /// Pseudo-parallel train and dev pairs built with `transform`.
    pub fn synthesize(&self, corpus: &ToyCorpus, transform: Transform) -> Result<(Vec<ParallelPair>, Vec<ParallelPair>)> {
        let seed = self.model_seed(ModelRole::Policy);
        let lexicon = Some(&corpus.lexicon);
        let train = synthesize_parallel_corpus(&corpus.train, transform, &corpus.vocab, lexicon, derive_seed_path(seed, &[2]))?;
        let dev = synthesize_parallel_corpus(&corpus.dev, transform, &corpus.vocab, lexicon, derive_seed_path(seed, &[3]))?;
        Ok((train, dev))
    }

    /// MLE-pretrain a fresh policy on the given pairs.
    pub fn pretrain_policy_on(
        &self,
        vocab: usize,
        train: &[ParallelPair],
        dev: &[ParallelPair],
        epochs: usize,
    ) -> Result<(Model<f32>, MleReport)> {
        let mut model = Model::new(self.policy_config(vocab), self.model_seed(ModelRole::Policy))?;
        let report = pretrain_policy(&mut model, train, dev, &self.mle_for(ModelRole::Policy, epochs))?;
        Ok((model, report))
    }

    /// MLE-pretrain a policy on pairs synthesized with `transform`.
    pub fn train_policy(&self, corpus: &ToyCorpus, transform: Transform, epochs: usize) -> Result<(Model<f32>, MleReport)> {
        let (train, dev) = self.synthesize(corpus, transform)?;
        self.pretrain_policy_on(corpus.vocab.len(), &train, &dev, epochs)
    }
}

/// Corpus plus every frozen model the RL stage and the evaluation need.
pub struct Workbench {
    pub config: ExperimentConfig,
    pub corpus: ToyCorpus,
    pub classifier: Model<f32>,
    pub selection: HeadSelection,
    pub lm: Model<f32>,
    pub eval_classifier: Model<f32>,
    pub eval_lm: Model<f32>,
}

impl Workbench {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        let corpus = config.corpus()?;
        let (classifier, _) = config.train_classifier(ModelRole::RewardClassifier, &corpus)?;
        let selection = select_style_head(&classifier, &corpus.dev, config.lambda)?;
        let (lm, _) = config.train_lm(ModelRole::RewardLm, &corpus)?;
        let (eval_classifier, _) = config.train_classifier(ModelRole::EvalClassifier, &corpus)?;
        let (eval_lm, _) = config.train_lm(ModelRole::EvalLm, &corpus)?;
        Ok(Workbench {
            config,
            corpus,
            classifier,
            selection,
            lm,
            eval_classifier,
            eval_lm,
        })
    }

    pub fn reward_models(&self) -> RewardModels<'_, f32> {
        RewardModels {
            classifier: &self.classifier,
            head: self.selection.head,
            lm: &self.lm,
            lambda: self.config.lambda,
            weights: RewardWeights::default(),
            matching: ContentMatching::Windowed,
        }
    }

    /// Greedy transfer of `sources` to the opposite style, scored against gold.
    pub fn evaluate(&self, policy: &Model<f32>, sources: &[StyledSentence]) -> Result<EvalReport> {
        let references: Vec<StyledSentence> = sources.iter().map(|s| self.corpus.gold(s)).collect();
        evaluate_transfer(
            policy,
            &self.eval_classifier,
            &self.eval_lm,
            &self.corpus.vocab,
            sources,
            &references,
            self.config.max_output_len,
        )
    }
}
