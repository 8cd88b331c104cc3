//! Run directory layout and the stage manifest.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    PretrainClassifier,
    SelectHead,
    PretrainLm,
    SynthParallel,
    PretrainPolicy,
    TrainRl,
    Transfer,
    Evaluate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::PretrainClassifier => "pretrain-classifier",
            Stage::SelectHead => "select-head",
            Stage::PretrainLm => "pretrain-lm",
            Stage::SynthParallel => "synth-parallel",
            Stage::PretrainPolicy => "pretrain-policy",
            Stage::TrainRl => "train-rl",
            Stage::Transfer => "transfer",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// One completed stage execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub stage: String,
    /// Strategy or policy name for stages that run once per variant.
    pub variant: Option<String>,
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub version: String,
}

pub fn version() -> String {
    format!("drst-{}", env!("CARGO_PKG_VERSION"))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct RunDir {
    pub root: PathBuf,
    pub run_id: String,
}

impl RunDir {
    pub fn new(out: &Path, config: &RunConfig) -> Self {
        let run_id = config.run_id();
        RunDir { root: out.join(&run_id), run_id }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config_path(&self) -> PathBuf {
        self.path("config.resolved")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path("manifest")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.path("metrics.records")
    }

    /// Create the layout and record the resolved config. A run keeps the
    /// config it was started with unless `force` replaces it.
    pub fn prepare(&self, config: &RunConfig, force: bool) -> Result<(), Failure> {
        for dir in ["checkpoints", "reports", "data"] {
            let p = self.path(dir);
            fs::create_dir_all(&p).map_err(|e| Failure::io(&p, e))?;
        }
        let resolved = config.to_toml();
        let path = self.config_path();
        if let Ok(existing) = fs::read_to_string(&path) {
            if existing == resolved {
                return Ok(());
            }
            if !force {
                return Err(Failure::Validation(format!(
                    "{} was started with a different configuration; pass --force to replace it or choose another name",
                    self.root.display()
                )));
            }
        }
        fs::write(&path, resolved).map_err(|e| Failure::io(&path, e))
    }

    pub fn manifest(&self) -> Result<Vec<ManifestEntry>, Failure> {
        let path = self.manifest_path();
        if !path.exists() {
            return Ok(Vec::new());
        }
        drst::corpus::read_jsonl(&path).map_err(Failure::from)
    }

    /// Latest entry of `stage` (and `variant`, when given) whose outputs still exist.
    pub fn completed(&self, stage: Stage, variant: Option<&str>) -> Result<Option<ManifestEntry>, Failure> {
        let entry = self
            .manifest()?
            .into_iter()
            .rev()
            .find(|e| e.stage == stage.name() && (variant.is_none() || e.variant.as_deref() == variant));
        Ok(entry.filter(|e| e.outputs.iter().all(|o| self.path(&o.path).exists())))
    }

    pub fn digest(&self, rel: &str) -> Result<FileDigest, Failure> {
        Ok(FileDigest {
            path: rel.to_string(),
            sha256: sha256_file(&self.path(rel))?,
        })
    }

    pub fn append_manifest(&self, entry: &ManifestEntry) -> Result<(), Failure> {
        let path = self.manifest_path();
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Failure::io(&path, e))?;
        let line = serde_json::to_string(entry).expect("manifest entry serializes");
        writeln!(file, "{line}").map_err(|e| Failure::io(&path, e))
    }
}

/// A prerequisite: a stage, optionally a specific variant of it.
pub struct Requirement<'a> {
    pub stage: Stage,
    pub variant: Option<&'a str>,
}

impl<'a> Requirement<'a> {
    pub fn stage(stage: Stage) -> Self {
        Requirement { stage, variant: None }
    }

    pub fn variant(stage: Stage, variant: &'a str) -> Self {
        Requirement { stage, variant: Some(variant) }
    }
}

/// Run `body` as `stage` unless it already completed under the same config.
/// `body` returns the paths of its outputs relative to the run directory.
pub fn execute(
    run: &RunDir,
    config: &RunConfig,
    stage: Stage,
    variant: Option<&str>,
    requires: &[Requirement],
    force: bool,
    body: impl FnOnce() -> Result<Vec<String>, Failure>,
) -> Result<(), Failure> {
    let mut inputs = Vec::new();
    for req in requires {
        match run.completed(req.stage, req.variant)? {
            Some(entry) => inputs.extend(entry.outputs),
            None => {
                let what = match req.variant {
                    Some(v) => format!("`{}` for {v}", req.stage),
                    None => format!("`{}`", req.stage),
                };
                let hint = match req.variant {
                    Some(v) => format!("drst {} --strategy {v}", req.stage),
                    None => format!("drst {}", req.stage),
                };
                return Err(Failure::Validation(format!(
                    "`{stage}` needs {what} to have completed in {}; run `{hint}` first",
                    run.root.display()
                )));
            }
        }
    }
    let config_hash = config.hash();
    if !force && stage != Stage::Report {
        if let Some(done) = run.completed(stage, variant)? {
            if done.config_hash == config_hash {
                println!("{stage}: up to date in {} (pass --force to redo)", run.root.display());
                return Ok(());
            }
        }
    }
    let started_unix = unix_now();
    let outputs = body()?;
    let outputs = outputs.iter().map(|p| run.digest(p)).collect::<Result<Vec<_>, _>>()?;
    run.append_manifest(&ManifestEntry {
        run_id: run.run_id.clone(),
        stage: stage.name().to_string(),
        variant: variant.map(str::to_string),
        config_hash,
        inputs,
        outputs,
        started_unix,
        finished_unix: unix_now(),
        version: version(),
    })
}
