//! Simulatability: how well a student that learned from a teacher's answers
//! and explanations predicts the teacher's answers on unseen reviews.
//!
//! Students see `(question, "Answer: a. Analysis: e")` pairs at training
//! time and only the bare question at test time; their answer is the label
//! with the higher log-probability. F1 is measured against the teacher's own
//! test predictions with `Deceptive` as the positive class.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{answer_distribution, sample, BackendDescriptor, LmBackend};
use crate::error::{Error, Result};
use crate::hashing::{derive_seed, sha256_hex};
use crate::io::{read_json, to_jsonl, write_atomic};
use crate::optim::{train_or_err, Objective, SoftmaxLm, TrainConfig};
use crate::parallel::par_map;
use crate::prompting::{
    check_explanation, render_explain_prompt, render_prior_prompt, render_student_prompt,
    render_student_response, Label, TaskSpec, DELIMITERS,
};
use crate::stats::{f1_score, mean, sample_sd, t_critical};

pub const PRED_ONLY: &str = "PredOnly";
pub const SFT: &str = "SFT";
pub const DPO: &str = "DPO";

pub const POSITIVE: Label = Label::Deceptive;

/// Explanations shorter than this many characters are too generic to be
/// searched for in test prompts.
pub const MIN_LEAK_CHARS: usize = 12;

/// Resampling attempts when a teacher explanation contains a reserved marker.
const EXPLANATION_ATTEMPTS: u64 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub review_id: String,
    pub review: String,
    pub answer: Label,
    pub explanation: String,
    pub system: String,
}

impl TeacherRecord {
    pub fn validate(&self) -> Result<()> {
        if self.system == PRED_ONLY && !self.explanation.is_empty() {
            return Err(Error::domain(format!(
                "{PRED_ONLY} record for {} carries an explanation",
                self.review_id
            )));
        }
        check_explanation(&self.explanation)
    }

    /// The same prediction with the explanation dropped.
    pub fn pred_only(&self) -> Self {
        Self {
            explanation: String::new(),
            system: PRED_ONLY.to_string(),
            ..self.clone()
        }
    }
}

/// A review as seen by the harness: id and text, no gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRef {
    pub id: String,
    pub text: String,
}

impl ReviewRef {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

impl From<&crate::datasets::ReviewExample> for ReviewRef {
    fn from(e: &crate::datasets::ReviewExample) -> Self {
        ReviewRef::new(e.id.clone(), e.text.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherSampling {
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: usize,
}

impl TeacherSampling {
    pub fn new(seed: u64) -> Self {
        Self {
            temperature: 1.0,
            seed,
            max_tokens: 64,
        }
    }
}

/// The teacher's answer per review: the more likely label after "Answer:".
pub fn teacher_predictions<B: LmBackend + ?Sized>(
    teacher: &B,
    reviews: &[ReviewRef],
    jobs: usize,
) -> Result<Vec<Label>> {
    par_map(jobs, reviews, |r| {
        Ok(answer_distribution(teacher, &render_prior_prompt(&r.text))?.argmax())
    })
    .into_iter()
    .collect()
}

/// Teacher answers plus one sampled explanation each; `PredOnly` skips sampling.
pub fn build_teacher_records<B: LmBackend + ?Sized>(
    teacher: &B,
    task: &TaskSpec,
    reviews: &[ReviewRef],
    system: &str,
    sampling: &TeacherSampling,
    jobs: usize,
) -> Result<Vec<TeacherRecord>> {
    let answers = teacher_predictions(teacher, reviews, jobs)?;
    explain_answers(teacher, task, reviews, &answers, system, sampling, jobs)
}

/// Records whose explanations come from `explainer` for answers fixed in
/// advance, typically by another model.
pub fn explain_answers<B: LmBackend + ?Sized>(
    explainer: &B,
    task: &TaskSpec,
    reviews: &[ReviewRef],
    answers: &[Label],
    system: &str,
    sampling: &TeacherSampling,
    jobs: usize,
) -> Result<Vec<TeacherRecord>> {
    if answers.len() != reviews.len() {
        return Err(Error::domain(format!(
            "{} answers for {} reviews",
            answers.len(),
            reviews.len()
        )));
    }
    let items: Vec<(&ReviewRef, Label)> = reviews.iter().zip(answers.iter().copied()).collect();
    par_map(jobs, &items, |&(r, answer)| {
        let explanation = if system == PRED_ONLY {
            String::new()
        } else {
            explain(explainer, task, r, answer, sampling)?
        };
        Ok(TeacherRecord {
            review_id: r.id.clone(),
            review: r.text.clone(),
            answer,
            explanation,
            system: system.to_string(),
        })
    })
    .into_iter()
    .collect()
}

fn explain<B: LmBackend + ?Sized>(
    teacher: &B,
    task: &TaskSpec,
    r: &ReviewRef,
    answer: Label,
    sampling: &TeacherSampling,
) -> Result<String> {
    let prompt = render_explain_prompt(task, &r.text, answer);
    let mut last = None;
    for attempt in 0..EXPLANATION_ATTEMPTS {
        let seed = derive_seed(&[
            "teacher",
            &sampling.seed.to_string(),
            &r.id,
            &attempt.to_string(),
        ]);
        let text = sample(
            teacher,
            &prompt,
            sampling.temperature,
            seed,
            sampling.max_tokens,
        )?
        .text;
        match check_explanation(&text) {
            Ok(()) => return Ok(text),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// `k` records drawn without replacement, rendered as student examples.
/// Systems covering the same reviews draw the same subset for a given seed.
pub fn build_student_trainset(
    records: &[TeacherRecord],
    k: usize,
    seed: u64,
) -> Result<Vec<(String, String)>> {
    if k == 0 || k > records.len() {
        return Err(Error::domain(format!(
            "cannot draw {k} training examples from {} records",
            records.len()
        )));
    }
    let mut sorted: Vec<&TeacherRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.review_id.cmp(&b.review_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_indices(&mut rng, sorted.len(), k)
        .into_iter()
        .map(|i| {
            let r = sorted[i];
            r.validate()?;
            Ok((
                render_student_prompt(&r.review),
                render_student_response(r.answer, &r.explanation),
            ))
        })
        .collect()
}

/// Rejects test prompts that could reveal teacher explanations.
#[derive(Debug, Clone, Default)]
pub struct LeakageGuard {
    explanations: Vec<String>,
}

impl LeakageGuard {
    pub fn new<'a>(records: impl IntoIterator<Item = &'a TeacherRecord>) -> Self {
        let mut explanations: Vec<String> = records
            .into_iter()
            .map(|r| r.explanation.trim().to_string())
            .filter(|e| e.chars().count() >= MIN_LEAK_CHARS)
            .collect();
        explanations.sort();
        explanations.dedup();
        Self { explanations }
    }

    pub fn check(&self, prompt: &str) -> Result<()> {
        if let Some(d) = DELIMITERS.iter().skip(1).find(|d| prompt.contains(*d)) {
            return Err(Error::Leakage(format!("test prompt contains {d:?}")));
        }
        if let Some(e) = self
            .explanations
            .iter()
            .find(|e| prompt.contains(e.as_str()))
        {
            return Err(Error::Leakage(format!(
                "test prompt contains teacher explanation {e:?}"
            )));
        }
        Ok(())
    }
}

/// The student's answers on test prompts.
pub fn student_predictions<B: LmBackend + ?Sized>(
    student: &B,
    prompts: &[String],
    guard: &LeakageGuard,
) -> Result<Vec<Label>> {
    for p in prompts {
        guard.check(p)?;
    }
    prompts
        .iter()
        .map(|p| Ok(answer_distribution(student, p)?.argmax()))
        .collect()
}

/// F1 of the student's test answers against the teacher's.
pub fn evaluate_student<B: LmBackend + ?Sized>(
    student: &B,
    test: &[ReviewRef],
    teacher_test: &[Label],
    guard: &LeakageGuard,
) -> Result<f64> {
    if test.len() != teacher_test.len() {
        return Err(Error::domain(
            "teacher test predictions do not match the test set",
        ));
    }
    let prompts: Vec<String> = test.iter().map(|r| render_prior_prompt(&r.text)).collect();
    let predicted = student_predictions(student, &prompts, guard)?;
    f1_score(teacher_test, &predicted, POSITIVE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRunConfig {
    pub k: usize,
    pub passes: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SimRunConfig {
    /// Five passes; 100 epochs for k ≤ 10, 50 beyond.
    pub fn for_k(k: usize, seed: u64) -> Self {
        Self {
            k,
            passes: 5,
            epochs: if k <= 10 { 100 } else { 50 },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.passes == 0 {
            return Err(Error::Config("k and passes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn pass_seed(&self, pass: usize) -> u64 {
        derive_seed(&[
            "sim-pass",
            &self.seed.to_string(),
            &self.k.to_string(),
            &pass.to_string(),
        ])
    }
}

/// Turns a student training set into a model that can be scored.
pub trait StudentTrainer: Send + Sync {
    fn name(&self) -> String;

    fn train(
        &self,
        trainset: &[(String, String)],
        config: &SimRunConfig,
        pass_seed: u64,
    ) -> Result<Box<dyn LmBackend>>;
}

/// Fits a copy of a toy model in-process with the student objective.
pub struct ToyStudentTrainer {
    pub init: SoftmaxLm,
    pub lr: f64,
}

impl StudentTrainer for ToyStudentTrainer {
    fn name(&self) -> String {
        self.init.id()
    }

    fn train(
        &self,
        trainset: &[(String, String)],
        config: &SimRunConfig,
        _pass_seed: u64,
    ) -> Result<Box<dyn LmBackend>> {
        let cfg = TrainConfig {
            lr: self.lr,
            epochs: config.epochs,
            batch_size: None,
        };
        let trained = train_or_err(self.init.clone(), Objective::Student(trainset), &cfg)?;
        Ok(Box::new(trained.model))
    }
}

/// Delegates training to an external program.
///
/// Arguments may contain `{trainset}`, `{output}`, `{epochs}`, `{k}` and
/// `{seed}`. The trainset is JSONL of `{"prompt", "response"}`; the program
/// must write a [`BackendDescriptor`] JSON file to `{output}`, whose relative
/// paths resolve against the output's directory.
pub struct CommandTrainer {
    pub program: String,
    pub args: Vec<String>,
    pub workdir: PathBuf,
}

#[derive(Serialize)]
struct TrainsetLine<'a> {
    prompt: &'a str,
    response: &'a str,
}

impl StudentTrainer for CommandTrainer {
    fn name(&self) -> String {
        self.program.clone()
    }

    fn train(
        &self,
        trainset: &[(String, String)],
        config: &SimRunConfig,
        pass_seed: u64,
    ) -> Result<Box<dyn LmBackend>> {
        let lines: Vec<TrainsetLine> = trainset
            .iter()
            .map(|(p, r)| TrainsetLine {
                prompt: p,
                response: r,
            })
            .collect();
        let body = to_jsonl(&lines)?;
        let tag = &sha256_hex(&[body.as_slice(), &pass_seed.to_le_bytes()].concat())[..16];
        let dir = self.workdir.join(tag);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let trainset_path = dir.join("trainset.jsonl");
        let output = dir.join("student.json");
        write_atomic(&trainset_path, &body)?;
        let fill = |a: &String| {
            a.replace("{trainset}", &trainset_path.display().to_string())
                .replace("{output}", &output.display().to_string())
                .replace("{epochs}", &config.epochs.to_string())
                .replace("{k}", &config.k.to_string())
                .replace("{seed}", &pass_seed.to_string())
        };
        let status = Command::new(&self.program)
            .args(self.args.iter().map(fill))
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        if !status.success() {
            return Err(Error::domain(format!(
                "student trainer {} exited with {status}",
                self.program
            )));
        }
        let descriptor: BackendDescriptor = read_json(&output)?;
        descriptor.open(&dir)
    }
}

/// One system's teacher material.
#[derive(Debug, Clone)]
pub struct SystemInput {
    pub name: String,
    /// Training pool for students.
    pub records: Vec<TeacherRecord>,
    /// The teacher's answers on the test reviews.
    pub test_predictions: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub system: String,
    pub model: String,
    pub k: usize,
    pub per_pass: Vec<f64>,
    pub mean: f64,
    /// Half-width of the 95 % t-interval across passes.
    pub ci95: f64,
}

impl SimResult {
    pub fn from_passes(system: &str, model: &str, k: usize, per_pass: Vec<f64>) -> Self {
        let n = per_pass.len();
        let ci95 = if n > 1 {
            t_critical(0.95, (n - 1) as f64) * sample_sd(&per_pass) / (n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            system: system.to_string(),
            model: model.to_string(),
            k,
            mean: mean(&per_pass),
            per_pass,
            ci95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMatrix {
    pub rows: Vec<SimResult>,
    /// Mean over k of each system's mean F1, in system order.
    pub averages: Vec<(String, f64)>,
}

impl SimMatrix {
    pub fn get(&self, system: &str, k: usize) -> Option<&SimResult> {
        self.rows.iter().find(|r| r.system == system && r.k == k)
    }

    pub fn average(&self, system: &str) -> Option<f64> {
        self.averages
            .iter()
            .find(|(s, _)| s == system)
            .map(|(_, v)| *v)
    }

    /// `system,model,k,pass,f1` with one row per pass.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,model,k,pass,f1\n");
        for r in &self.rows {
            for (p, f) in r.per_pass.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{:.6}\n",
                    r.system, r.model, r.k, p, f
                ));
            }
        }
        out
    }
}

fn check_coverage(systems: &[SystemInput], test: &[ReviewRef]) -> Result<()> {
    let ids = |s: &SystemInput| -> BTreeSet<String> {
        s.records.iter().map(|r| r.review_id.clone()).collect()
    };
    let first = systems
        .first()
        .ok_or_else(|| Error::domain("no teacher systems to evaluate"))?;
    let reference = ids(first);
    for s in systems {
        if ids(s) != reference || s.records.len() != reference.len() {
            return Err(Error::domain(format!(
                "system {} covers different reviews than {}",
                s.name, first.name
            )));
        }
        if s.test_predictions.len() != test.len() {
            return Err(Error::domain(format!(
                "system {} has {} test predictions for {} test reviews",
                s.name,
                s.test_predictions.len(),
                test.len()
            )));
        }
        for r in &s.records {
            r.validate()?;
        }
    }
    Ok(())
}

/// Every (system, k, pass) cell; passes may run in parallel, results are
/// collected in key order.
pub fn run_matrix(
    systems: &[SystemInput],
    test: &[ReviewRef],
    configs: &[SimRunConfig],
    trainer: &dyn StudentTrainer,
    jobs: usize,
) -> Result<SimMatrix> {
    check_coverage(systems, test)?;
    for c in configs {
        c.validate()?;
    }
    let guard = LeakageGuard::new(systems.iter().flat_map(|s| &s.records));
    let mut cells = Vec::new();
    for (si, _) in systems.iter().enumerate() {
        for (ci, c) in configs.iter().enumerate() {
            for pass in 0..c.passes {
                cells.push((si, ci, pass));
            }
        }
    }
    let scores = par_map(jobs, &cells, |&(si, ci, pass)| -> Result<f64> {
        let (s, c) = (&systems[si], &configs[ci]);
        let seed = c.pass_seed(pass);
        let trainset = build_student_trainset(&s.records, c.k, seed)?;
        let student = trainer.train(&trainset, c, seed)?;
        evaluate_student(student.as_ref(), test, &s.test_predictions, &guard)
    });
    let mut scores = scores.into_iter();
    let model = trainer.name();
    let mut rows = Vec::new();
    let mut averages = Vec::new();
    for s in systems {
        let mut means = Vec::new();
        for c in configs {
            let per_pass = scores
                .by_ref()
                .take(c.passes)
                .collect::<Result<Vec<f64>>>()?;
            let r = SimResult::from_passes(&s.name, &model, c.k, per_pass);
            means.push(r.mean);
            rows.push(r);
        }
        averages.push((s.name.clone(), mean(&means)));
    }
    Ok(SimMatrix { rows, averages })
}
