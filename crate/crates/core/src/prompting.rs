//! Prompt and response templates for the opinion-spam task.
//!
//! Every template lives in `templates/` as a UTF-8 fixture with named slots
//! `{review}`, `{explanation}` and `{answer}`; the files are embedded at
//! compile time so rendering never touches the filesystem.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUESTION: &str = include_str!("../templates/question.txt");
pub const PRIOR: &str = include_str!("../templates/prior.txt");
pub const EXPLAIN_TRUTHFUL: &str = include_str!("../templates/explain_truthful.txt");
pub const EXPLAIN_DECEPTIVE: &str = include_str!("../templates/explain_deceptive.txt");
pub const ADJUSTED_ANALYSIS: &str = include_str!("../templates/adjusted_analysis.txt");
pub const ADJUSTED_V1: &str = include_str!("../templates/adjusted_v1.txt");
pub const ADJUSTED_V2: &str = include_str!("../templates/adjusted_v2.txt");
pub const ADJUSTED_V3: &str = include_str!("../templates/adjusted_v3.txt");
pub const STUDENT_PROMPT: &str = include_str!("../templates/student_prompt.txt");
pub const STUDENT_RESPONSE: &str = include_str!("../templates/student_response.txt");
const ONESHOT_HOTEL: &str = include_str!("../templates/oneshot_hotel.json");
const ONESHOT_AMAZON: &str = include_str!("../templates/oneshot_amazon.json");

/// Literal markers an explanation may not contain; they delimit the
/// response format and would make parsing ambiguous.
pub const DELIMITERS: [&str; 2] = ["Answer:", "Analysis:"];

const REVIEW_SLOT: &str = "{review}";
const EXPLANATION_SLOT: &str = "{explanation}";
const ANSWER_SLOT: &str = "{answer}";

/// One of the two task answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Truthful,
    Deceptive,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Truthful, Label::Deceptive];

    pub fn negate(self) -> Label {
        match self {
            Label::Truthful => Label::Deceptive,
            Label::Deceptive => Label::Truthful,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Truthful => "Truthful",
            Label::Deceptive => "Deceptive",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Label::Truthful => 0,
            Label::Deceptive => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "truthful" => Ok(Label::Truthful),
            "deceptive" => Ok(Label::Deceptive),
            other => Err(Error::domain(format!("unknown answer label {other:?}"))),
        }
    }
}

/// Prompt used to elicit the posterior answer given an explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PromptVariant {
    /// `... Review: {review}. Analysis: {explanation}.`
    #[default]
    #[serde(rename = "analysis")]
    Analysis,
    V1,
    V2,
    V3,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] = [
        PromptVariant::Analysis,
        PromptVariant::V1,
        PromptVariant::V2,
        PromptVariant::V3,
    ];

    pub fn template(self) -> &'static str {
        match self {
            PromptVariant::Analysis => ADJUSTED_ANALYSIS,
            PromptVariant::V1 => ADJUSTED_V1,
            PromptVariant::V2 => ADJUSTED_V2,
            PromptVariant::V3 => ADJUSTED_V3,
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            PromptVariant::Analysis => "analysis",
            PromptVariant::V1 => "V1",
            PromptVariant::V2 => "V2",
            PromptVariant::V3 => "V3",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "analysis" | "default" => Ok(PromptVariant::Analysis),
            "v1" => Ok(PromptVariant::V1),
            "v2" => Ok(PromptVariant::V2),
            "v3" => Ok(PromptVariant::V3),
            other => Err(Error::Config(format!("unknown prompt variant {other:?}"))),
        }
    }
}

/// Whether explanation prompts carry the worked example in front.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotMode {
    #[default]
    OneShot,
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneShotExample {
    pub review: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
struct OneShotPair {
    truthful: OneShotExample,
    deceptive: OneShotExample,
}

/// The task framing: question, labels, explanation requests and worked examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: String,
    pub shot: ShotMode,
    oneshot: [OneShotExample; 2],
}

impl TaskSpec {
    /// TripAdvisor hotel reviews.
    pub fn hotel() -> Self {
        Self::with_oneshot("hotel", ONESHOT_HOTEL)
    }

    /// Amazon product reviews.
    pub fn amazon() -> Self {
        Self::with_oneshot("amazon", ONESHOT_AMAZON)
    }

    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "hotel" | "tripadvisor" => Ok(Self::hotel()),
            "amazon" => Ok(Self::amazon()),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }

    fn with_oneshot(id: &str, json: &str) -> Self {
        let pair: OneShotPair =
            serde_json::from_str(json).expect("embedded one-shot fixture is valid JSON");
        Self {
            id: id.to_string(),
            shot: ShotMode::OneShot,
            oneshot: [pair.truthful, pair.deceptive],
        }
    }

    pub fn zero_shot(mut self) -> Self {
        self.shot = ShotMode::ZeroShot;
        self
    }

    pub fn with_shot(mut self, shot: ShotMode) -> Self {
        self.shot = shot;
        self
    }

    pub fn labels(&self) -> [Label; 2] {
        Label::ALL
    }

    pub fn oneshot_example(&self, answer: Label) -> &OneShotExample {
        &self.oneshot[answer.index()]
    }
}

fn explain_template(answer: Label) -> &'static str {
    match answer {
        Label::Truthful => EXPLAIN_TRUTHFUL,
        Label::Deceptive => EXPLAIN_DECEPTIVE,
    }
}

fn fill(template: &str, review: &str, explanation: &str, answer: &str) -> String {
    template
        .replace(REVIEW_SLOT, review)
        .replace(EXPLANATION_SLOT, explanation)
        .replace(ANSWER_SLOT, answer)
}

/// Rejects explanation text containing a response-format delimiter.
pub fn check_explanation(explanation: &str) -> Result<()> {
    for d in DELIMITERS {
        if explanation.contains(d) {
            return Err(Error::Template(format!(
                "explanation contains the reserved marker {d:?}"
            )));
        }
    }
    Ok(())
}

/// The bare question `q`.
pub fn render_question(review: &str) -> String {
    fill(QUESTION, review, "", "")
}

/// `q` followed by the answer cue, used for the prior term `M(a | q)`.
pub fn render_prior_prompt(review: &str) -> String {
    fill(PRIOR, review, "", "")
}

/// `Q(q, a)`: the explanation request, prefixed by the label-matched worked
/// example in one-shot mode.
pub fn render_explain_prompt(task: &TaskSpec, review: &str, answer: Label) -> String {
    let body = fill(explain_template(answer), review, "", "");
    match task.shot {
        ShotMode::ZeroShot => body,
        ShotMode::OneShot => {
            let ex = task.oneshot_example(answer);
            let shot = fill(explain_template(answer), &ex.review, "", "");
            format!("{shot} {}\n\n{body}", ex.explanation)
        }
    }
}

/// `Q'(q, e)` for the given variant, left open for the answer continuation.
pub fn render_adjusted_prompt(
    variant: PromptVariant,
    review: &str,
    explanation: &str,
) -> Result<String> {
    check_explanation(explanation)?;
    Ok(fill(variant.template(), review, explanation, ""))
}

/// The student's input: the question terminated with a period.
pub fn render_student_prompt(review: &str) -> String {
    fill(STUDENT_PROMPT, review, "", "")
}

/// `R(a, e) = "Answer: a. Analysis: e"`.
pub fn render_student_response(answer: Label, explanation: &str) -> String {
    fill(STUDENT_RESPONSE, "", explanation, answer.as_str())
}

/// Inverse of [`render_student_response`].
pub fn parse_student_response(text: &str) -> Result<(Label, String)> {
    let rest = text
        .strip_prefix("Answer: ")
        .ok_or_else(|| Error::Template("response does not start with \"Answer: \"".into()))?;
    let (label, explanation) = rest
        .split_once(". Analysis: ")
        .ok_or_else(|| Error::Template("response lacks \". Analysis: \"".into()))?;
    let label: Label = label
        .parse()
        .map_err(|_| Error::Template(format!("unknown label {label:?} in response")))?;
    check_explanation(explanation)?;
    Ok((label, explanation.to_string()))
}

/// A prompt recognised as one of the rendered templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedPrompt {
    Explain {
        review: String,
        answer: Label,
    },
    Prior {
        review: String,
    },
    Adjusted {
        variant: PromptVariant,
        review: String,
        explanation: String,
    },
}

impl ParsedPrompt {
    pub fn review(&self) -> &str {
        match self {
            ParsedPrompt::Explain { review, .. }
            | ParsedPrompt::Prior { review }
            | ParsedPrompt::Adjusted { review, .. } => review,
        }
    }
}

/// Splits a template around its `{review}` slot (and optional second slot).
fn split_template(template: &str) -> (&str, &str) {
    let at = template
        .find(REVIEW_SLOT)
        .expect("template has a review slot");
    (&template[..at], &template[at + REVIEW_SLOT.len()..])
}

/// Recognises a prompt produced by this module. Any one-shot prefix is
/// skipped by anchoring on the last occurrence of the template head.
pub fn parse_prompt(text: &str) -> Option<ParsedPrompt> {
    for answer in Label::ALL {
        let (head, tail) = split_template(explain_template(answer));
        if let Some(review) = between(text, head, tail) {
            return Some(ParsedPrompt::Explain {
                review: review.to_string(),
                answer,
            });
        }
    }
    {
        let (head, tail) = split_template(PRIOR);
        if let Some(review) = between(text, head, tail) {
            return Some(ParsedPrompt::Prior {
                review: review.to_string(),
            });
        }
    }
    for variant in PromptVariant::ALL {
        let template = variant.template();
        let (head, rest) = split_template(template);
        let e_at = rest
            .find(EXPLANATION_SLOT)
            .expect("adjusted template has explanation slot");
        let mid = &rest[..e_at];
        let tail = &rest[e_at + EXPLANATION_SLOT.len()..];
        let Some(start) = text.rfind(head) else {
            continue;
        };
        let body = &text[start + head.len()..];
        let Some(body) = body.strip_suffix(tail) else {
            continue;
        };
        let Some(split) = body.rfind(mid) else {
            continue;
        };
        let review = &body[..split];
        let explanation = &body[split + mid.len()..];
        if check_explanation(explanation).is_err() {
            continue;
        }
        return Some(ParsedPrompt::Adjusted {
            variant,
            review: review.to_string(),
            explanation: explanation.to_string(),
        });
    }
    None
}

fn between<'a>(text: &'a str, head: &str, tail: &str) -> Option<&'a str> {
    let body = text.strip_suffix(tail)?;
    let start = body.rfind(head)?;
    Some(&body[start + head.len()..])
}
