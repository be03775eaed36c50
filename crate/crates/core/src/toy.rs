//! A synthetic review world small enough to train end to end on a laptop.
//!
//! Truthful reviews carry concrete, spatial cue words; deceptive ones carry
//! superlatives and travel-story words. Each label's cues come in groups,
//! and a review draws its cues from a single group. Common filler words are
//! shared by both labels.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::TabularLm;
use crate::datasets::ReviewExample;
use crate::error::Result;
use crate::optim::{train_or_err, ContextSpec, Objective, SoftmaxLm, TrainConfig};
use crate::prompting::{
    render_adjusted_prompt, render_explain_prompt, render_prior_prompt, Label, PromptVariant,
    TaskSpec,
};

pub const TRUTHFUL_CUES: [&[&str]; 3] = [
    &[
        "bathroom",
        "shower",
        "towels",
        "sink",
        "mirror",
        "tub",
        "faucet",
        "toilet",
        "tiles",
        "drain",
        "soap",
        "hairdryer",
    ],
    &[
        "elevator", "lobby", "corridor", "hallway", "floor", "stairs", "door", "carpet", "walls",
        "window", "ceiling", "closet",
    ],
    &[
        "street", "block", "subway", "parking", "station", "bus", "taxi", "river", "bridge",
        "corner", "avenue", "garage",
    ],
];

pub const DECEPTIVE_CUES: [&[&str]; 3] = [
    &[
        "luxury",
        "elegant",
        "stunning",
        "exquisite",
        "superb",
        "magnificent",
        "lavish",
        "glamorous",
        "opulent",
        "splendid",
        "gorgeous",
        "impeccable",
    ],
    &[
        "husband",
        "wife",
        "family",
        "anniversary",
        "honeymoon",
        "kids",
        "vacation",
        "weekend",
        "getaway",
        "celebration",
        "birthday",
        "romantic",
    ],
    &[
        "amazing",
        "wonderful",
        "perfect",
        "definitely",
        "recommend",
        "unforgettable",
        "incredible",
        "fabulous",
        "delightful",
        "exceptional",
        "fantastic",
        "awesome",
    ],
];

pub const FILLERS: [&str; 12] = [
    "the", "hotel", "room", "was", "we", "stayed", "and", "our", "very", "at", "in", "for",
];

/// Answer-side tokens a toy model must be able to emit.
pub const RESPONSE_TOKENS: [&str; 6] = ["Truthful", "Deceptive", "Answer", "Analysis", ":", "."];

pub fn cue_groups(label: Label) -> &'static [&'static [&'static str]; 3] {
    match label {
        Label::Truthful => &TRUTHFUL_CUES,
        Label::Deceptive => &DECEPTIVE_CUES,
    }
}

pub fn lexicon(label: Label) -> Vec<&'static str> {
    cue_groups(label)
        .iter()
        .flat_map(|g| g.iter().copied())
        .collect()
}

/// Label whose lexicon contains `word`.
pub fn cue_label(word: &str) -> Option<Label> {
    Label::ALL.into_iter().find(|l| lexicon(*l).contains(&word))
}

/// Cue group index of `word` within its label's lexicon.
pub fn cue_group(word: &str) -> Option<(Label, usize)> {
    Label::ALL.into_iter().find_map(|l| {
        cue_groups(l)
            .iter()
            .position(|g| g.contains(&word))
            .map(|i| (l, i))
    })
}

/// Every token a toy model may predict.
pub fn vocabulary() -> Vec<String> {
    let mut v: Vec<String> = Label::ALL
        .into_iter()
        .flat_map(lexicon)
        .chain(FILLERS)
        .chain(RESPONSE_TOKENS)
        .map(String::from)
        .collect();
    v.sort();
    v.dedup();
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub size: usize,
    pub cues_per_review: usize,
    pub fillers_per_review: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn new(size: usize, seed: u64) -> Self {
        Self {
            size,
            cues_per_review: 2,
            fillers_per_review: 6,
            seed,
        }
    }
}

/// Balanced toy corpus; ids are `toy-0000`, `toy-0001`, ...
pub fn generate_corpus(spec: &CorpusSpec) -> Vec<ReviewExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.size)
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Truthful
            } else {
                Label::Deceptive
            };
            let group = cue_groups(label)[rng.gen_range(0..3)];
            let mut words: Vec<&str> = group
                .choose_multiple(&mut rng, spec.cues_per_review)
                .copied()
                .collect();
            words.extend(FILLERS.choose_multiple(&mut rng, spec.fillers_per_review));
            words.shuffle(&mut rng);
            ReviewExample::new(format!("toy-{i:04}"), words.join(" "), label)
        })
        .collect()
}

/// Cue words of `review` in order of appearance.
pub fn review_cues(review: &str) -> Vec<&str> {
    review
        .split_whitespace()
        .filter(|w| cue_label(w).is_some())
        .collect()
}

/// Majority label of the review's cue words; ties go to `Truthful`.
pub fn cue_majority(review: &str) -> Label {
    let d = review_cues(review)
        .iter()
        .filter(|w| cue_label(w) == Some(Label::Deceptive))
        .count();
    let t = review_cues(review).len() - d;
    if d > t {
        Label::Deceptive
    } else {
        Label::Truthful
    }
}

/// The informative explanation: every cue of the review's group, then the
/// label they signal.
pub fn group_explanation(review: &str, label: Label) -> Option<String> {
    let (_, g) = review_cues(review)
        .iter()
        .find_map(|w| cue_group(w).filter(|(l, _)| *l == label))?;
    let mut words: Vec<&str> = cue_groups(label)[g].to_vec();
    words.push(label.as_str());
    Some(words.join(" "))
}

/// A teacher that answers with the cue majority (probability `confidence`)
/// and justifies an answer with the group explanation when the review
/// supports it, or with the review's own words otherwise. Explanations are
/// deterministic.
pub fn cue_teacher(reviews: &[ReviewExample], confidence: f64) -> Result<TabularLm> {
    let mut b = TabularLm::builder().id("toy-cue-teacher");
    for r in reviews {
        let majority = cue_majority(&r.text);
        let prior_truthful = if majority == Label::Truthful {
            confidence
        } else {
            1.0 - confidence
        };
        let explain = |label: Label| -> String {
            group_explanation(&r.text, label).unwrap_or_else(|| {
                let cues = review_cues(&r.text);
                if cues.is_empty() {
                    label.as_str().to_string()
                } else {
                    cues.join(" ")
                }
            })
        };
        b = b.question(
            r.text.clone(),
            prior_truthful,
            vec![(explain(Label::Truthful), 1.0)],
            vec![(explain(Label::Deceptive), 1.0)],
        );
    }
    b.build()
}

/// An empty bag-feature student over the toy vocabulary.
pub fn student_init() -> SoftmaxLm {
    SoftmaxLm::new(
        vocabulary(),
        ContextSpec {
            history: 2,
            bag: true,
        },
    )
    .with_id("toy-student")
}

/// Short explanations of `answer`: two or three cue words, drawn from the
/// answer's lexicon with probability `consistent_rate` and from the other
/// label's lexicon otherwise.
fn noisy_explanation(rng: &mut ChaCha8Rng, answer: Label, consistent_rate: f64) -> (String, Label) {
    let source = if rng.gen_bool(consistent_rate) {
        answer
    } else {
        answer.negate()
    };
    let n = rng.gen_range(2..=3);
    let words: Vec<&str> = lexicon(source).choose_multiple(rng, n).copied().collect();
    (words.join(" "), source)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainSpec {
    pub explanations_per_answer: usize,
    pub consistent_rate: f64,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl PretrainSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            explanations_per_answer: 3,
            consistent_rate: 0.6,
            lr: 3e-4,
            epochs: 100,
            seed,
        }
    }
}

/// Synthetic multi-task corpus: answer MLE on prior prompts, explanation
/// generation on explanation prompts, and answer MLE on adjusted prompts
/// whose answer follows the explanation's cue words.
type Pair = (String, String);

pub fn pretraining_corpus(
    reviews: &[ReviewExample],
    task: &TaskSpec,
    spec: &PretrainSpec,
) -> Result<(Vec<Pair>, Vec<Pair>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut answers = Vec::new();
    let mut explanations = Vec::new();
    for r in reviews {
        answers.push((render_prior_prompt(&r.text), r.label.as_str().to_string()));
        for answer in Label::ALL {
            let prompt = render_explain_prompt(task, &r.text, answer);
            for _ in 0..spec.explanations_per_answer {
                let (e, source) = noisy_explanation(&mut rng, answer, spec.consistent_rate);
                let adjusted = render_adjusted_prompt(PromptVariant::Analysis, &r.text, &e)?;
                answers.push((adjusted, source.as_str().to_string()));
                explanations.push((prompt.clone(), e));
            }
        }
    }
    Ok((answers, explanations))
}

/// Base model for the pipeline: one pass of answer MLE and explanation
/// generation training over [`pretraining_corpus`].
pub fn pretrain_base(
    reviews: &[ReviewExample],
    task: &TaskSpec,
    spec: &PretrainSpec,
) -> Result<SoftmaxLm> {
    let (answers, explanations) = pretraining_corpus(reviews, task, spec)?;
    let config = TrainConfig {
        lr: spec.lr,
        epochs: spec.epochs,
        batch_size: None,
    };
    let model = student_init().with_id("toy-base");
    let model = train_or_err(model, Objective::Sft(&answers), &config)?.model;
    Ok(train_or_err(model, Objective::Completion(&explanations), &config)?.model)
}
