use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backend::BackendDescriptor;
use crate::consistency::ScoreVariant;
use crate::datasets::{Format, Schema, SplitSpec};
use crate::error::{Error, Result};
use crate::optim::DpoConfig;
use crate::prefs::SelectionPolicy;
use crate::prompting::{PromptVariant, ShotMode, TaskSpec};
use crate::sampler::SamplingSchedule;
use crate::simeval::{SimRunConfig, TeacherSampling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Raw input file, relative to the run directory.
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub schema: Schema,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backends {
    /// Generates explanations and serves as the SFT system and DPO reference.
    pub teacher: BackendDescriptor,
    /// Computes consistency scores.
    pub scorer: BackendDescriptor,
    /// Initial weights for simulated students.
    pub student: BackendDescriptor,
}

impl PartialEq for Backends {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub schedule: SamplingSchedule,
    /// Sample for at most this many training reviews, taken in id order.
    #[serde(default)]
    pub max_reviews: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    pub variant: ScoreVariant,
    pub prompt_variant: PromptVariant,
    /// Prompt variants compared against each other in the stats stage.
    #[serde(default = "default_compare")]
    pub compare: Vec<PromptVariant>,
}

fn default_compare() -> Vec<PromptVariant> {
    vec![PromptVariant::V1, PromptVariant::V2, PromptVariant::V3]
}

/// An external student trainer; see [`crate::simeval::CommandTrainer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub ks: Vec<usize>,
    pub passes: usize,
    /// Overrides the per-k epoch default when set.
    #[serde(default)]
    pub epochs: Option<usize>,
    /// Learning rate of the in-process toy student.
    pub lr: f64,
    pub seed: u64,
    pub teacher: TeacherSampling,
    #[serde(default)]
    pub trainer: Option<TrainerCommand>,
}

impl SimConfig {
    pub fn run_configs(&self) -> Vec<SimRunConfig> {
        self.ks
            .iter()
            .map(|&k| {
                let mut c = SimRunConfig::for_k(k, self.seed);
                c.passes = self.passes;
                if let Some(e) = self.epochs {
                    c.epochs = e;
                }
                c
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: String,
    #[serde(default)]
    pub shot: ShotMode,
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Timestamp stamped on score records; fixed so reruns are byte-identical.
    #[serde(default)]
    pub clock: u64,
    pub corpus: CorpusConfig,
    pub split: SplitSpec,
    pub backends: Backends,
    pub sampling: SamplingConfig,
    pub scoring: ScoringConfig,
    pub selection: SelectionPolicy,
    pub dpo: DpoConfig,
    pub sim: SimConfig,
    pub stats: StatsConfig,
}

fn default_jobs() -> usize {
    1
}

impl RunConfig {
    /// Settings for the bundled synthetic corpus, every seed derived from `seed`.
    pub fn toy(seed: u64) -> Self {
        let checkpoint = || BackendDescriptor::checkpoint("checkpoints/base.json");
        let mut schedule = SamplingSchedule::from_pairs(&[(20, 1.0), (20, 1.2)], seed);
        schedule.max_tokens = 16;
        let mut teacher = TeacherSampling::new(seed);
        teacher.max_tokens = 16;
        Self {
            task: "hotel".into(),
            shot: ShotMode::ZeroShot,
            seed,
            jobs: 1,
            clock: 0,
            corpus: CorpusConfig {
                path: "data/raw.csv".into(),
                format: Some(Format::Csv),
                schema: Schema::default(),
            },
            split: SplitSpec::standard(seed),
            backends: Backends {
                teacher: checkpoint(),
                scorer: checkpoint(),
                student: BackendDescriptor::checkpoint("checkpoints/student_init.json"),
            },
            sampling: SamplingConfig {
                schedule,
                max_reviews: Some(12),
            },
            scoring: ScoringConfig {
                variant: ScoreVariant::Adjusted,
                prompt_variant: PromptVariant::Analysis,
                compare: default_compare(),
            },
            selection: SelectionPolicy::tripadvisor(seed),
            dpo: DpoConfig {
                beta: 0.1,
                lr: 2.0,
                epochs: 200,
                batch_size: None,
            },
            sim: SimConfig {
                ks: vec![10, 20],
                passes: 5,
                epochs: None,
                lr: 0.05,
                seed,
                teacher,
                trainer: None,
            },
            stats: StatsConfig {
                level: 0.90,
                resamples: 1000,
                seed,
            },
        }
    }

    pub fn task_spec(&self) -> Result<TaskSpec> {
        Ok(TaskSpec::by_id(&self.task)?.with_shot(self.shot))
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.task_spec()?;
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.split.validate()?;
        self.sampling.schedule.validate().map_err(config)?;
        self.selection.validate().map_err(config)?;
        self.dpo.validate().map_err(config)?;
        if self.sim.ks.is_empty() || self.sim.ks.contains(&0) || self.sim.passes == 0 {
            return Err(Error::Config(
                "sim needs at least one k ≥ 1 and one pass".into(),
            ));
        }
        if !(self.stats.level > 0.0 && self.stats.level < 1.0) {
            return Err(Error::Config(format!(
                "stats level must lie in (0, 1), got {}",
                self.stats.level
            )));
        }
        if self.scoring.compare.len() < 2 {
            return Err(Error::Config(
                "at least two prompt variants are needed for the correlation table".into(),
            ));
        }
        Ok(())
    }
}
