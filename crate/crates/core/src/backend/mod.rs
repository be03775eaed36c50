//! Uniform contract over language models that can score a fixed
//! continuation, compare the two task answers and sample text.
//!
//! All log-probabilities are natural logs.

mod descriptor;
mod remote;
mod tabular;

pub use descriptor::BackendDescriptor;

pub use remote::{
    CompletionRequest, CompletionResponse, RemoteConfig, RemoteLm, ENDPOINT_ENV, TOKEN_ENV,
};
pub use tabular::{TabularBuilder, TabularLm, TabularQuestion};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompting::Label;

/// Probability floor used when a backend is allowed to score impossible events.
pub const ZERO_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Tabular,
    Remote,
    SoftmaxToy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub can_score: bool,
    pub can_sample: bool,
    pub can_enumerate: bool,
}

/// How the end of a scored continuation is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Score only the continuation tokens (labels, response prefixes).
    Prefix,
    /// Also score the end-of-text event after the last token, so that the
    /// total is the probability of the continuation as a whole sample.
    /// Backends without an end-of-text notion treat this like `Prefix`.
    Complete,
}

/// A continuation scored under teacher forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub continuation: String,
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<f64>,
    pub total: f64,
}

impl ScoredSequence {
    pub fn new(continuation: &str, tokens: Vec<String>, token_logprobs: Vec<f64>) -> Self {
        let total = token_logprobs.iter().sum();
        Self {
            continuation: continuation.to_string(),
            tokens,
            token_logprobs,
            total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRequest {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: usize,
}

impl SampleRequest {
    pub fn new(temperature: f64, seed: u64, max_tokens: usize) -> Self {
        Self {
            temperature,
            seed,
            max_tokens,
        }
    }
}

/// Sampled text plus whether generation stopped on the token budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sampled {
    pub text: String,
    pub tokens: Vec<String>,
    pub truncated: bool,
}

pub trait LmBackend: Send + Sync {
    fn id(&self) -> String;

    fn kind(&self) -> BackendKind;

    fn capabilities(&self) -> Capabilities;

    fn score(&self, prompt: &str, continuation: &str, boundary: Boundary)
        -> Result<ScoredSequence>;

    fn sample(&self, prompt: &str, request: &SampleRequest) -> Result<Sampled>;
}

impl<T: LmBackend + ?Sized> LmBackend for &T {
    fn id(&self) -> String {
        (**self).id()
    }
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn score(
        &self,
        prompt: &str,
        continuation: &str,
        boundary: Boundary,
    ) -> Result<ScoredSequence> {
        (**self).score(prompt, continuation, boundary)
    }
    fn sample(&self, prompt: &str, request: &SampleRequest) -> Result<Sampled> {
        (**self).sample(prompt, request)
    }
}

impl<T: LmBackend + ?Sized> LmBackend for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn score(
        &self,
        prompt: &str,
        continuation: &str,
        boundary: Boundary,
    ) -> Result<ScoredSequence> {
        (**self).score(prompt, continuation, boundary)
    }
    fn sample(&self, prompt: &str, request: &SampleRequest) -> Result<Sampled> {
        (**self).sample(prompt, request)
    }
}

/// `log M(e | prompt)` for a complete explanation, via the chain rule.
pub fn sequence_logprob<B: LmBackend + ?Sized>(
    backend: &B,
    prompt: &str,
    continuation: &str,
) -> Result<ScoredSequence> {
    if !backend.capabilities().can_score {
        return Err(Error::domain(format!(
            "backend {} cannot score",
            backend.id()
        )));
    }
    backend.score(prompt, continuation, Boundary::Complete)
}

/// `log M(answer | prompt) - log M(negation | prompt)`, each label scored as
/// a word sequence continuing the prompt.
pub fn answer_logodds<B: LmBackend + ?Sized>(
    backend: &B,
    prompt: &str,
    answer: Label,
    negation: Label,
) -> Result<f64> {
    if answer == negation {
        return Err(Error::domain("answer and negation must differ"));
    }
    let dist = answer_distribution(backend, prompt)?;
    Ok(dist.logprob(answer) - dist.logprob(negation))
}

/// Log-probabilities of both task answers as continuations of `prompt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub truthful: f64,
    pub deceptive: f64,
}

impl AnswerDistribution {
    pub fn logprob(&self, label: Label) -> f64 {
        match label {
            Label::Truthful => self.truthful,
            Label::Deceptive => self.deceptive,
        }
    }

    /// The more likely label; ties go to `Truthful`.
    pub fn argmax(&self) -> Label {
        if self.deceptive > self.truthful {
            Label::Deceptive
        } else {
            Label::Truthful
        }
    }
}

pub fn answer_distribution<B: LmBackend + ?Sized>(
    backend: &B,
    prompt: &str,
) -> Result<AnswerDistribution> {
    if !backend.capabilities().can_score {
        return Err(Error::domain(format!(
            "backend {} cannot score",
            backend.id()
        )));
    }
    let truthful = backend
        .score(prompt, Label::Truthful.as_str(), Boundary::Prefix)?
        .total;
    let deceptive = backend
        .score(prompt, Label::Deceptive.as_str(), Boundary::Prefix)?
        .total;
    if !truthful.is_finite() || !deceptive.is_finite() {
        return Err(Error::domain(format!(
            "non-finite answer log-probabilities ({truthful}, {deceptive})"
        )));
    }
    Ok(AnswerDistribution {
        truthful,
        deceptive,
    })
}

pub fn sample<B: LmBackend + ?Sized>(
    backend: &B,
    prompt: &str,
    temperature: f64,
    seed: u64,
    max_tokens: usize,
) -> Result<Sampled> {
    if !backend.capabilities().can_sample {
        return Err(Error::domain(format!(
            "backend {} cannot sample",
            backend.id()
        )));
    }
    check_temperature(temperature)?;
    backend.sample(prompt, &SampleRequest::new(temperature, seed, max_tokens))
}

pub(crate) fn check_temperature(temperature: f64) -> Result<()> {
    if temperature.is_finite() && temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )))
    }
}

/// Draws an index from log-weights scaled by `1 / temperature`.
pub(crate) fn draw_tempered<R: Rng>(rng: &mut R, logweights: &[f64], temperature: f64) -> usize {
    let max = logweights
        .iter()
        .copied()
        .filter(|w| w.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logweights
        .iter()
        .map(|&w| {
            if w.is_finite() {
                ((w - max) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    WeightedIndex::new(&weights)
        .expect("at least one finite weight")
        .sample(rng)
}
