//! Prediction-explanation consistency: how strongly an explanation supports
//! the predicted answer over its negation, as a log-odds weight of evidence
//! in nats.
//!
//! Two estimators are provided. The sequence form compares the likelihood of
//! the explanation under the two explanation prompts. The adjusted form asks
//! the model for the answer with and without the explanation in view and
//! subtracts the prior log-odds from the posterior log-odds; on an exact
//! joint the two coincide by Bayes' rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backend::{answer_logodds, sequence_logprob, LmBackend};
use crate::error::{Error, Result};
use crate::prompting::{
    render_adjusted_prompt, render_explain_prompt, render_prior_prompt, Label, PromptVariant,
    TaskSpec,
};

/// Scores strictly above this are consistent.
pub const CONSISTENT_ABOVE: f64 = 2.0;
/// Scores strictly below this are inconsistent.
pub const INCONSISTENT_BELOW: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreVariant {
    Sequence,
    #[default]
    Adjusted,
}

impl std::str::FromStr for ScoreVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequence" => Ok(ScoreVariant::Sequence),
            "adjusted" => Ok(ScoreVariant::Adjusted),
            other => Err(Error::Config(format!("unknown score variant {other:?}"))),
        }
    }
}

impl fmt::Display for ScoreVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreVariant::Sequence => "sequence",
            ScoreVariant::Adjusted => "adjusted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Breakdown {
    /// `log M(e | Q(q, a))` and `log M(e | Q(q, ¬a))`.
    Sequence { numerator: f64, denominator: f64 },
    /// Posterior log-odds given `Q'(q, e)` and prior log-odds given `q`.
    Adjusted { posterior: f64, prior: f64 },
}

impl Breakdown {
    pub fn value(&self) -> f64 {
        match *self {
            Breakdown::Sequence {
                numerator,
                denominator,
            } => numerator - denominator,
            Breakdown::Adjusted { posterior, prior } => posterior - prior,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScore {
    pub value: f64,
    pub variant: ScoreVariant,
    /// Set for the adjusted form only.
    pub prompt_variant: Option<PromptVariant>,
    pub breakdown: Breakdown,
}

impl ConsistencyScore {
    fn from_breakdown(breakdown: Breakdown, prompt_variant: Option<PromptVariant>) -> Self {
        let variant = match breakdown {
            Breakdown::Sequence { .. } => ScoreVariant::Sequence,
            Breakdown::Adjusted { .. } => ScoreVariant::Adjusted,
        };
        Self {
            value: breakdown.value(),
            variant,
            prompt_variant,
            breakdown,
        }
    }

    pub fn verdict(&self) -> Result<Verdict> {
        classify_value(self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Consistent,
    Indeterminate,
    Inconsistent,
}

pub fn classify(score: &ConsistencyScore) -> Result<Verdict> {
    classify_value(score.value)
}

pub fn classify_value(value: f64) -> Result<Verdict> {
    if !value.is_finite() {
        return Err(Error::domain(format!(
            "cannot classify non-finite score {value}"
        )));
    }
    Ok(if value > CONSISTENT_ABOVE {
        Verdict::Consistent
    } else if value < INCONSISTENT_BELOW {
        Verdict::Inconsistent
    } else {
        Verdict::Indeterminate
    })
}

/// `log M(e | Q(q, a)) - log M(e | Q(q, ¬a))`.
pub fn pex_sequence<B: LmBackend + ?Sized>(
    backend: &B,
    task: &TaskSpec,
    review: &str,
    answer: Label,
    explanation: &str,
) -> Result<ConsistencyScore> {
    let numerator = sequence_logprob(
        backend,
        &render_explain_prompt(task, review, answer),
        explanation,
    )?
    .total;
    let denominator = sequence_logprob(
        backend,
        &render_explain_prompt(task, review, answer.negate()),
        explanation,
    )?
    .total;
    Ok(ConsistencyScore::from_breakdown(
        Breakdown::Sequence {
            numerator,
            denominator,
        },
        None,
    ))
}

/// Prior log-odds `log M(a | q) - log M(¬a | q)`.
pub fn prior_logodds<B: LmBackend + ?Sized>(
    backend: &B,
    review: &str,
    answer: Label,
) -> Result<f64> {
    answer_logodds(
        backend,
        &render_prior_prompt(review),
        answer,
        answer.negate(),
    )
}

/// Posterior log-odds `log M(a | Q'(q, e)) - log M(¬a | Q'(q, e))`.
pub fn posterior_logodds<B: LmBackend + ?Sized>(
    backend: &B,
    review: &str,
    answer: Label,
    explanation: &str,
    variant: PromptVariant,
) -> Result<f64> {
    let prompt = render_adjusted_prompt(variant, review, explanation)?;
    answer_logodds(backend, &prompt, answer, answer.negate())
}

/// Posterior minus prior log-odds of the answer.
pub fn pex_adjusted<B: LmBackend + ?Sized>(
    backend: &B,
    review: &str,
    answer: Label,
    explanation: &str,
    variant: PromptVariant,
) -> Result<ConsistencyScore> {
    let posterior = posterior_logodds(backend, review, answer, explanation, variant)?;
    let prior = prior_logodds(backend, review, answer)?;
    Ok(adjusted_from_parts(posterior, prior, variant))
}

pub fn adjusted_from_parts(posterior: f64, prior: f64, variant: PromptVariant) -> ConsistencyScore {
    ConsistencyScore::from_breakdown(Breakdown::Adjusted { posterior, prior }, Some(variant))
}
