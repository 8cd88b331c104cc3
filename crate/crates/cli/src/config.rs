use std::fs;
use std::path::Path;

use drst::corpus::Transform;
use drst::experiment::ExperimentConfig;
use drst::rewards::{ContentMatching, RewardWeights, StrategyKind};
use drst::trainer::RLConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Fraction of the normalized peak that counts as "reached".
    pub fraction: f64,
    /// Trailing-mean window, in steps, applied before normalization.
    pub smoothing: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { fraction: 0.9, smoothing: 10 }
    }
}

/// Everything a run needs. Read from TOML, where dotted keys such as
/// `rl.lr = 0.02` and tables are interchangeable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Run directories are named `<name>-seed<seed>`.
    pub name: String,
    pub experiment: ExperimentConfig,
    /// Baseline used to synthesize the pre-training pairs.
    pub transform: Transform,
    pub weights: RewardWeights,
    pub content_matching: ContentMatching,
    pub rl: RLConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "toy".into(),
            experiment: ExperimentConfig::default(),
            transform: Transform::NoisySwap { p_noise: 0.5 },
            weights: RewardWeights::default(),
            content_matching: ContentMatching::default(),
            rl: RLConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// A run has one seed: `--seed` if given, else `experiment.seed`. It
    /// reseeds every model and the RL loop.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        let seed = seed.unwrap_or(self.experiment.seed);
        self.experiment.seed = seed;
        self.rl.seed = seed;
        self.rl.sampling.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let invalid = |msg: String| Err(Failure::Validation(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return invalid(format!("name {:?} cannot be used as a directory name", self.name));
        }
        self.rl.validate().map_err(Failure::from)?;
        self.weights.validate().map_err(Failure::from)?;
        if self.rl.sampling.max_output_len > self.experiment.max_output_len {
            return invalid(format!(
                "rl.sampling.max_output_len {} exceeds experiment.max_output_len {}",
                self.rl.sampling.max_output_len, self.experiment.max_output_len
            ));
        }
        if !(0.0..=1.0).contains(&self.experiment.lambda) {
            return invalid("experiment.lambda must lie in [0, 1]".into());
        }
        if self.experiment.n_per_style < 10 {
            return invalid("experiment.n_per_style must be at least 10".into());
        }
        if !(self.report.fraction > 0.0 && self.report.fraction <= 1.0) {
            return invalid("report.fraction must lie in (0, 1]".into());
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        format!("{}-seed{}", self.name, self.experiment.seed)
    }

    pub fn strategy(&self, flag: Option<StrategyKind>) -> StrategyKind {
        flag.unwrap_or(self.rl.strategy)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
