//! Run directories: one configuration file, a manifest of content hashes and
//! a fixed sequence of stages whose outputs feed the next.
//!
//! ```text
//! config.json  manifest.json
//! data/         corpus.jsonl splits.jsonl
//! scores/       samples.jsonl scored.jsonl ranked.jsonl
//! prefs/        prefs.jsonl (+ .manifest.json) pairs.jsonl summary.json
//! checkpoints/  dpo.json
//! results/      dpo_trace.csv teacher_records.jsonl teacher_scores.jsonl sim.csv sim.json stats.json
//! report/       report.html *.csv
//! ```
//!
//! A stage is skipped when its fingerprint (parameters plus input hashes)
//! and its recorded output hashes still match what is on disk.

mod config;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{
    Backends, CorpusConfig, RunConfig, SamplingConfig, ScoringConfig, SimConfig, StatsConfig,
    TrainerCommand,
};
pub use report::render_report;
pub use stages::{
    init_toy, DpoVsSft, KendallRow, SimReport, StatsReport, TeacherScore, ToyInit,
    VariantDistribution,
};

use crate::error::{Error, Result};
use crate::hashing::sha256_hex;
use crate::io::{read_json, write_json};

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Step {
    Ingest,
    Split,
    Sample,
    Score,
    Rank,
    BuildPrefs,
    TrainToy,
    EvalSim,
    Stats,
    Report,
}

impl Step {
    pub const ALL: [Step; 10] = [
        Step::Ingest,
        Step::Split,
        Step::Sample,
        Step::Score,
        Step::Rank,
        Step::BuildPrefs,
        Step::TrainToy,
        Step::EvalSim,
        Step::Stats,
        Step::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::Ingest => "ingest",
            Step::Split => "split",
            Step::Sample => "sample",
            Step::Score => "score",
            Step::Rank => "rank",
            Step::BuildPrefs => "build-prefs",
            Step::TrainToy => "train-toy",
            Step::EvalSim => "eval-sim",
            Step::Stats => "stats",
            Step::Report => "report",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Step {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Step::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub fingerprint: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Configuration in effect for the most recent stage run.
    pub config: Option<RunConfig>,
    /// Hash of every file any stage has read, by run-relative path.
    pub inputs: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ran(String),
    Skipped,
}

/// What a stage reads and writes, plus the parameters that shape its output.
pub(crate) struct Plan {
    pub params: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

/// A run directory with the configuration in effect for this invocation.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub config: RunConfig,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn key(path: &Path) -> String {
    path.to_string_lossy().replace('\\', "/")
}

impl Run {
    /// Loads `config.json` from `dir`.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let path = dir.join(CONFIG_FILE);
        if !path.exists() {
            return Err(Error::Config(format!(
                "no {CONFIG_FILE} in {}",
                dir.display()
            )));
        }
        let config: RunConfig =
            read_json(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::new(dir, config)
    }

    pub fn new(dir: impl Into<PathBuf>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            dir: dir.into(),
            config,
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let path = self.path(MANIFEST_FILE);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").into(),
                ..RunManifest::default()
            })
        }
    }

    /// Runs one stage unless the manifest shows it is up to date.
    pub fn execute(&self, step: Step, force: bool) -> Result<Outcome> {
        self.config.validate()?;
        let plan = stages::plan(self, step)?;
        let mut inputs = BTreeMap::new();
        for rel in &plan.inputs {
            let path = self.path(rel);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "stage {step} needs {} which does not exist",
                    path.display()
                )));
            }
            inputs.insert(key(rel), file_hash(&path)?);
        }
        let fingerprint = sha256_hex(
            serde_json::to_string(&(
                step.name(),
                &plan.params,
                &inputs,
                env!("CARGO_PKG_VERSION"),
            ))?
            .as_bytes(),
        );
        let mut manifest = self.manifest()?;
        if !force {
            if let Some(entry) = manifest.stages.get(step.name()) {
                if entry.fingerprint == fingerprint && self.outputs_intact(entry)? {
                    return Ok(Outcome::Skipped);
                }
            }
        }
        let summary = stages::run(self, step)?;
        let mut outputs = BTreeMap::new();
        for rel in &plan.outputs {
            outputs.insert(key(rel), file_hash(&self.path(rel))?);
        }
        manifest.tool_version = env!("CARGO_PKG_VERSION").into();
        manifest.config = Some(self.config.clone());
        manifest.inputs.extend(inputs.clone());
        manifest.stages.insert(
            step.name().into(),
            StageEntry {
                fingerprint,
                inputs,
                outputs,
                summary: summary.clone(),
            },
        );
        write_json(&self.path(MANIFEST_FILE), &manifest)?;
        Ok(Outcome::Ran(summary))
    }

    fn outputs_intact(&self, entry: &StageEntry) -> Result<bool> {
        for (rel, hash) in &entry.outputs {
            let path = self.path(rel);
            if !path.exists() || &file_hash(&path)? != hash {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Every stage in order.
    pub fn execute_all(&self, force: bool) -> Result<Vec<(Step, Outcome)>> {
        Step::ALL
            .into_iter()
            .map(|s| Ok((s, self.execute(s, force)?)))
            .collect()
    }
}
