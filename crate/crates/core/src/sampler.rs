//! Multiple sampling of explanations per (review, predicted answer) under a
//! temperature schedule, batch scoring, and ranking by consistency.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::{sample, LmBackend};
use crate::consistency::{
    adjusted_from_parts, pex_sequence, posterior_logodds, prior_logodds, Breakdown,
    ConsistencyScore, ScoreVariant,
};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::parallel::par_map;
use crate::prompting::{render_explain_prompt, Label, PromptVariant, TaskSpec};

pub const DEFAULT_MAX_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub count: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub stages: Vec<Stage>,
    pub base_seed: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

impl SamplingSchedule {
    /// 40 samples at temperature 1.0 followed by 40 at 1.2.
    pub fn standard(base_seed: u64) -> Self {
        Self::from_pairs(&[(40, 1.0), (40, 1.2)], base_seed)
    }

    pub fn from_pairs(stages: &[(usize, f64)], base_seed: u64) -> Self {
        Self {
            stages: stages
                .iter()
                .map(|&(count, temperature)| Stage { count, temperature })
                .collect(),
            base_seed,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::domain("sampling schedule has no stages"));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.count == 0 {
                return Err(Error::domain(format!("stage {i} has a zero sample count")));
            }
            if !(s.temperature.is_finite() && s.temperature > 0.0) {
                return Err(Error::domain(format!(
                    "stage {i} temperature must be positive, got {}",
                    s.temperature
                )));
            }
        }
        if self.max_tokens == 0 {
            return Err(Error::domain("max_tokens must be positive"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.stages.iter().map(|s| s.count).sum()
    }

    /// Seed for one sample, stable across partial re-runs.
    pub fn sample_seed(&self, review_id: &str, answer: Label, stage: usize, index: usize) -> u64 {
        derive_seed(&[
            &self.base_seed.to_string(),
            review_id,
            answer.as_str(),
            &stage.to_string(),
            &index.to_string(),
        ])
    }
}

/// Score fields attached to a sampled explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub variant: ScoreVariant,
    pub prompt_variant: Option<PromptVariant>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_logodds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_logodds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numerator_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denominator_logprob: Option<f64>,
    pub backend_id: String,
    pub timestamp: u64,
}

impl ScoreRecord {
    pub fn new(score: &ConsistencyScore, backend_id: String, timestamp: u64) -> Self {
        let mut r = Self {
            variant: score.variant,
            prompt_variant: score.prompt_variant,
            score: score.value,
            posterior_logodds: None,
            prior_logodds: None,
            numerator_logprob: None,
            denominator_logprob: None,
            backend_id,
            timestamp,
        };
        match score.breakdown {
            Breakdown::Adjusted { posterior, prior } => {
                r.posterior_logodds = Some(posterior);
                r.prior_logodds = Some(prior);
            }
            Breakdown::Sequence {
                numerator,
                denominator,
            } => {
                r.numerator_logprob = Some(numerator);
                r.denominator_logprob = Some(denominator);
            }
        }
        r
    }

    /// Rebuilds the score from the stored breakdown.
    pub fn consistency(&self) -> Option<ConsistencyScore> {
        let breakdown = match self.variant {
            ScoreVariant::Adjusted => Breakdown::Adjusted {
                posterior: self.posterior_logodds?,
                prior: self.prior_logodds?,
            },
            ScoreVariant::Sequence => Breakdown::Sequence {
                numerator: self.numerator_logprob?,
                denominator: self.denominator_logprob?,
            },
        };
        Some(ConsistencyScore {
            value: breakdown.value(),
            variant: self.variant,
            prompt_variant: self.prompt_variant,
            breakdown,
        })
    }
}

/// One sampled explanation with its provenance and optional score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub review_id: String,
    pub answer: Label,
    pub explanation: String,
    pub temperature: f64,
    pub seed: u64,
    pub stage: usize,
    pub sample_index: usize,
    pub truncated: bool,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreRecord>,
}

impl Explanation {
    pub fn score_value(&self) -> Option<f64> {
        self.score.as_ref().map(|s| s.score)
    }
}

/// A review together with the answer whose explanations are sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleTarget {
    pub review_id: String,
    pub review: String,
    pub answer: Label,
}

/// Draws `schedule.total()` explanations of `answer` for one review.
pub fn sample_batch<B: LmBackend + ?Sized>(
    backend: &B,
    task: &TaskSpec,
    target: &SampleTarget,
    schedule: &SamplingSchedule,
) -> Result<Vec<Explanation>> {
    sample_batch_par(backend, task, target, schedule, 1)
}

pub fn sample_batch_par<B: LmBackend + ?Sized>(
    backend: &B,
    task: &TaskSpec,
    target: &SampleTarget,
    schedule: &SamplingSchedule,
    jobs: usize,
) -> Result<Vec<Explanation>> {
    schedule.validate()?;
    let prompt = render_explain_prompt(task, &target.review, target.answer);
    let mut slots = Vec::with_capacity(schedule.total());
    let mut index = 0;
    for (stage, s) in schedule.stages.iter().enumerate() {
        for _ in 0..s.count {
            slots.push((stage, index, s.temperature));
            index += 1;
        }
    }
    par_map(jobs, &slots, |&(stage, index, temperature)| {
        let seed = schedule.sample_seed(&target.review_id, target.answer, stage, index);
        let out = sample(backend, &prompt, temperature, seed, schedule.max_tokens)?;
        Ok(Explanation {
            review_id: target.review_id.clone(),
            answer: target.answer,
            explanation: out.text,
            temperature,
            seed,
            stage,
            sample_index: index,
            truncated: out.truncated,
            score: None,
        })
    })
    .into_iter()
    .collect()
}

/// Samples every target in order.
pub fn sample_targets<B: LmBackend + ?Sized>(
    backend: &B,
    task: &TaskSpec,
    targets: &[SampleTarget],
    schedule: &SamplingSchedule,
    jobs: usize,
) -> Result<Vec<Explanation>> {
    schedule.validate()?;
    let batches = par_map(jobs, targets, |t| sample_batch(backend, task, t, schedule));
    let mut out = Vec::new();
    for b in batches {
        out.extend(b?);
    }
    Ok(out)
}

/// How explanations are scored in batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoringSpec {
    pub variant: ScoreVariant,
    pub prompt_variant: PromptVariant,
    pub timestamp: u64,
}

/// Scores explanations in place; the prior term is computed once per
/// (review, answer). Results are assigned by input index.
pub fn score_explanations<B: LmBackend + ?Sized>(
    backend: &B,
    task: &TaskSpec,
    reviews: &HashMap<String, String>,
    explanations: &mut [Explanation],
    spec: ScoringSpec,
    jobs: usize,
) -> Result<()> {
    let lookup = |id: &str| -> Result<&String> {
        reviews
            .get(id)
            .ok_or_else(|| Error::data(None, format!("no review text for id {id:?}")))
    };
    let mut priors: HashMap<(String, Label), f64> = HashMap::new();
    if spec.variant == ScoreVariant::Adjusted {
        let mut keys: Vec<(String, Label)> = explanations
            .iter()
            .map(|e| (e.review_id.clone(), e.answer))
            .collect();
        keys.sort();
        keys.dedup();
        let values = par_map(jobs, &keys, |(id, a)| {
            prior_logodds(backend, lookup(id)?, *a)
        });
        for (k, v) in keys.into_iter().zip(values) {
            priors.insert(k, v?);
        }
    }
    let backend_id = backend.id();
    let scores = par_map(jobs, explanations, |e| -> Result<ConsistencyScore> {
        let review = lookup(&e.review_id)?;
        match spec.variant {
            ScoreVariant::Sequence => pex_sequence(backend, task, review, e.answer, &e.explanation),
            ScoreVariant::Adjusted => {
                let post = posterior_logodds(
                    backend,
                    review,
                    e.answer,
                    &e.explanation,
                    spec.prompt_variant,
                )?;
                let prior = priors[&(e.review_id.clone(), e.answer)];
                Ok(adjusted_from_parts(post, prior, spec.prompt_variant))
            }
        }
    });
    for (e, s) in explanations.iter_mut().zip(scores) {
        e.score = Some(ScoreRecord::new(&s?, backend_id.clone(), spec.timestamp));
    }
    Ok(())
}

/// Sorts by descending score; equal scores keep ascending sample index.
pub fn rank(explanations: Vec<Explanation>) -> Result<Vec<Explanation>> {
    let mut kind = None;
    for e in &explanations {
        let s = e
            .score
            .as_ref()
            .ok_or_else(|| Error::domain("cannot rank an unscored explanation"))?;
        if !s.score.is_finite() {
            return Err(Error::domain(format!(
                "cannot rank non-finite score {}",
                s.score
            )));
        }
        let k = (s.variant, s.prompt_variant);
        match kind {
            None => kind = Some(k),
            Some(prev) if prev != k => {
                return Err(Error::domain(
                    "explanations carry scores of different variants",
                ))
            }
            _ => {}
        }
    }
    let mut out = explanations;
    out.sort_by(|a, b| {
        let (sa, sb) = (a.score_value().unwrap(), b.score_value().unwrap());
        sb.partial_cmp(&sa)
            .unwrap_or(Ordering::Equal)
            .then(a.sample_index.cmp(&b.sample_index))
    });
    Ok(out)
}

/// Groups explanations by (review id, answer), preserving first-seen order.
pub fn group_by_example(
    explanations: Vec<Explanation>,
) -> Vec<((String, Label), Vec<Explanation>)> {
    let mut order: Vec<(String, Label)> = Vec::new();
    let mut groups: HashMap<(String, Label), Vec<Explanation>> = HashMap::new();
    for e in explanations {
        let key = (e.review_id.clone(), e.answer);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            })
            .push(e);
    }
    order
        .into_iter()
        .map(|k| {
            let v = groups.remove(&k).expect("group exists");
            (k, v)
        })
        .collect()
}
