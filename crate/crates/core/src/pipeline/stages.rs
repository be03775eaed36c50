use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::render_report;
use super::{Plan, Run, RunConfig, Step, CONFIG_FILE};
use crate::backend::{BackendDescriptor, LmBackend};
use crate::consistency::ScoreVariant;
use crate::datasets::{
    ingest, of_split, read_examples, split, write_examples, Format, ReviewExample, Split,
};
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::optim::{train_or_err, Objective, SoftmaxLm, TrainConfig};
use crate::prefs::{build_dataset, emit_dataset, manifest_path, PreferencePair, RankedExample};
use crate::prompting::{render_explain_prompt, Label, PromptVariant};
use crate::sampler::{
    group_by_example, rank, sample_targets, score_explanations, Explanation, SampleTarget,
    ScoringSpec,
};
use crate::simeval::{
    explain_answers, run_matrix, teacher_predictions, CommandTrainer, ReviewRef, SimMatrix,
    SimRunConfig, StudentTrainer, SystemInput, TeacherRecord, ToyStudentTrainer, DPO, PRED_ONLY,
    SFT,
};
use crate::stats::{
    bootstrap_ci, distribution_summary, kendall_tau, paired_t_test, BootstrapConfig,
    DistributionSummary, Interval, TTest,
};
use crate::toy::{generate_corpus, pretrain_base, student_init, CorpusSpec, PretrainSpec};

const CORPUS: &str = "data/corpus.jsonl";
const SPLITS: &str = "data/splits.jsonl";
const SAMPLES: &str = "scores/samples.jsonl";
const SCORED: &str = "scores/scored.jsonl";
const RANKED: &str = "scores/ranked.jsonl";
const PREFS: &str = "prefs/prefs.jsonl";
const PAIRS: &str = "prefs/pairs.jsonl";
const PREFS_SUMMARY: &str = "prefs/summary.json";
const DPO_CHECKPOINT: &str = "checkpoints/dpo.json";
const DPO_TRACE: &str = "results/dpo_trace.csv";
const TEACHER_RECORDS: &str = "results/teacher_records.jsonl";
const TEACHER_SCORES: &str = "results/teacher_scores.jsonl";
const SIM_CSV: &str = "results/sim.csv";
const SIM_JSON: &str = "results/sim.json";
const STATS: &str = "results/stats.json";
pub(crate) const REPORT_FILES: [&str; 5] = [
    "report/report.html",
    "report/distributions.csv",
    "report/prompt_variants.csv",
    "report/dpo_vs_sft.csv",
    "report/simulation.csv",
];

fn paths(list: &[&str]) -> Vec<PathBuf> {
    list.iter().map(PathBuf::from).collect()
}

/// Files a backend descriptor depends on, relative to the run directory.
fn backend_inputs(d: &BackendDescriptor) -> Vec<PathBuf> {
    match d {
        BackendDescriptor::SoftmaxToy { checkpoint } => vec![checkpoint.clone()],
        BackendDescriptor::Remote(_) => Vec::new(),
    }
}

fn backend_params(d: &BackendDescriptor) -> serde_json::Value {
    serde_json::to_value(d).unwrap_or(serde_json::Value::Null)
}

pub(crate) fn plan(run: &Run, step: Step) -> Result<Plan> {
    let c = &run.config;
    let plan = match step {
        Step::Ingest => Plan {
            params: json!({ "format": c.corpus.format, "schema": c.corpus.schema }),
            inputs: vec![c.corpus.path.clone()],
            outputs: paths(&[CORPUS]),
        },
        Step::Split => Plan {
            params: json!({ "split": c.split }),
            inputs: paths(&[CORPUS]),
            outputs: paths(&[SPLITS]),
        },
        Step::Sample => Plan {
            params: json!({
                "task": c.task, "shot": c.shot, "sampling": c.sampling,
                "teacher": backend_params(&c.backends.teacher),
            }),
            inputs: [paths(&[SPLITS]), backend_inputs(&c.backends.teacher)].concat(),
            outputs: paths(&[SAMPLES]),
        },
        Step::Score => Plan {
            params: json!({
                "task": c.task, "shot": c.shot, "variant": c.scoring.variant,
                "prompt_variant": c.scoring.prompt_variant, "clock": c.clock,
                "scorer": backend_params(&c.backends.scorer),
            }),
            inputs: [
                paths(&[SPLITS, SAMPLES]),
                backend_inputs(&c.backends.scorer),
            ]
            .concat(),
            outputs: paths(&[SCORED]),
        },
        Step::Rank => Plan {
            params: json!({}),
            inputs: paths(&[SCORED]),
            outputs: paths(&[RANKED]),
        },
        Step::BuildPrefs => {
            let manifest = manifest_path(Path::new(PREFS));
            Plan {
                params: json!({ "task": c.task, "shot": c.shot, "selection": c.selection }),
                inputs: paths(&[SPLITS, RANKED]),
                outputs: [paths(&[PREFS, PAIRS, PREFS_SUMMARY]), vec![manifest]].concat(),
            }
        }
        Step::TrainToy => Plan {
            params: json!({ "dpo": c.dpo, "teacher": backend_params(&c.backends.teacher) }),
            inputs: [paths(&[PAIRS]), backend_inputs(&c.backends.teacher)].concat(),
            outputs: paths(&[DPO_CHECKPOINT, DPO_TRACE]),
        },
        Step::EvalSim => Plan {
            params: json!({
                "task": c.task, "shot": c.shot, "sim": c.sim, "clock": c.clock,
                "prompt_variant": c.scoring.prompt_variant,
                "teacher": backend_params(&c.backends.teacher),
                "scorer": backend_params(&c.backends.scorer),
                "student": backend_params(&c.backends.student),
            }),
            inputs: [
                paths(&[SPLITS, DPO_CHECKPOINT]),
                backend_inputs(&c.backends.teacher),
                backend_inputs(&c.backends.scorer),
                if c.sim.trainer.is_none() {
                    backend_inputs(&c.backends.student)
                } else {
                    Vec::new()
                },
            ]
            .concat(),
            outputs: paths(&[TEACHER_RECORDS, TEACHER_SCORES, SIM_CSV, SIM_JSON]),
        },
        Step::Stats => Plan {
            params: json!({
                "task": c.task, "shot": c.shot, "stats": c.stats,
                "compare": c.scoring.compare, "clock": c.clock,
                "scorer": backend_params(&c.backends.scorer),
            }),
            inputs: [
                paths(&[SPLITS, RANKED, TEACHER_SCORES, SIM_JSON]),
                backend_inputs(&c.backends.scorer),
            ]
            .concat(),
            outputs: paths(&[STATS]),
        },
        Step::Report => Plan {
            params: json!({ "task": c.task }),
            inputs: paths(&[STATS]),
            outputs: paths(&REPORT_FILES),
        },
    };
    Ok(plan)
}

pub(crate) fn run(run: &Run, step: Step) -> Result<String> {
    match step {
        Step::Ingest => run_ingest(run),
        Step::Split => run_split(run),
        Step::Sample => run_sample(run),
        Step::Score => run_score(run),
        Step::Rank => run_rank(run),
        Step::BuildPrefs => run_build_prefs(run),
        Step::TrainToy => run_train_toy(run),
        Step::EvalSim => run_eval_sim(run),
        Step::Stats => run_stats(run),
        Step::Report => run_report(run),
    }
}

fn open_backend(run: &Run, d: &BackendDescriptor) -> Result<Box<dyn LmBackend>> {
    d.open(&run.dir)
}

fn load_toy(run: &Run, d: &BackendDescriptor, role: &str) -> Result<SoftmaxLm> {
    match d {
        BackendDescriptor::SoftmaxToy { checkpoint } => SoftmaxLm::load(&run.path(checkpoint)),
        BackendDescriptor::Remote(_) => Err(Error::Config(format!(
            "the {role} backend must be a softmax-toy checkpoint for this stage"
        ))),
    }
}

fn sorted_split(examples: &[ReviewExample], which: Split) -> Vec<ReviewExample> {
    let mut v = of_split(examples, which);
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

fn review_texts(examples: &[ReviewExample]) -> HashMap<String, String> {
    examples
        .iter()
        .map(|e| (e.id.clone(), e.text.clone()))
        .collect()
}

// ------------------------------------------------------------------ stages

fn run_ingest(run: &Run) -> Result<String> {
    let c = &run.config.corpus;
    let path = run.path(&c.path);
    let format = match c.format {
        Some(f) => f,
        None => Format::from_path(&path)?,
    };
    let examples = ingest(&path, format, &c.schema)?;
    write_examples(&run.path(CORPUS), &examples)?;
    Ok(format!("{} reviews", examples.len()))
}

fn run_split(run: &Run) -> Result<String> {
    let examples = read_examples(&run.path(CORPUS))?;
    let assigned = split(examples, &run.config.split)?;
    write_examples(&run.path(SPLITS), &assigned)?;
    let count = |s| assigned.iter().filter(|e| e.split == Some(s)).count();
    Ok(format!(
        "train {} / validation {} / test {}",
        count(Split::Train),
        count(Split::Validation),
        count(Split::Test)
    ))
}

fn run_sample(run: &Run) -> Result<String> {
    let c = &run.config;
    let task = c.task_spec()?;
    let examples = read_examples(&run.path(SPLITS))?;
    let mut train = sorted_split(&examples, Split::Train);
    if let Some(n) = c.sampling.max_reviews {
        train.truncate(n);
    }
    let teacher = open_backend(run, &c.backends.teacher)?;
    let refs: Vec<ReviewRef> = train.iter().map(ReviewRef::from).collect();
    let answers = teacher_predictions(teacher.as_ref(), &refs, c.jobs)?;
    let targets: Vec<SampleTarget> = train
        .iter()
        .zip(answers)
        .map(|(e, answer)| SampleTarget {
            review_id: e.id.clone(),
            review: e.text.clone(),
            answer,
        })
        .collect();
    let samples = sample_targets(
        teacher.as_ref(),
        &task,
        &targets,
        &c.sampling.schedule,
        c.jobs,
    )?;
    write_jsonl(&run.path(SAMPLES), &samples)?;
    Ok(format!(
        "{} explanations for {} reviews",
        samples.len(),
        targets.len()
    ))
}

fn scoring_spec(c: &RunConfig, prompt_variant: PromptVariant) -> ScoringSpec {
    ScoringSpec {
        variant: c.scoring.variant,
        prompt_variant,
        timestamp: c.clock,
    }
}

fn run_score(run: &Run) -> Result<String> {
    let c = &run.config;
    let task = c.task_spec()?;
    let reviews = review_texts(&read_examples(&run.path(SPLITS))?);
    let mut samples: Vec<Explanation> = read_jsonl(&run.path(SAMPLES))?;
    let scorer = open_backend(run, &c.backends.scorer)?;
    score_explanations(
        scorer.as_ref(),
        &task,
        &reviews,
        &mut samples,
        scoring_spec(c, c.scoring.prompt_variant),
        c.jobs,
    )?;
    write_jsonl(&run.path(SCORED), &samples)?;
    Ok(format!(
        "{} explanations scored ({}, {})",
        samples.len(),
        c.scoring.variant,
        c.scoring.prompt_variant
    ))
}

fn run_rank(run: &Run) -> Result<String> {
    let scored: Vec<Explanation> = read_jsonl(&run.path(SCORED))?;
    let mut groups = group_by_example(scored);
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let n = groups.len();
    let mut out = Vec::new();
    for (_, g) in groups {
        out.extend(rank(g)?);
    }
    write_jsonl(&run.path(RANKED), &out)?;
    Ok(format!("{n} rankings"))
}

type Groups = Vec<((String, Label), Vec<Explanation>)>;

fn ranked_groups(run: &Run) -> Result<Groups> {
    let ranked: Vec<Explanation> = read_jsonl(&run.path(RANKED))?;
    let mut groups = group_by_example(ranked);
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(groups)
}

fn run_build_prefs(run: &Run) -> Result<String> {
    let c = &run.config;
    let task = c.task_spec()?;
    let reviews = review_texts(&read_examples(&run.path(SPLITS))?);
    let examples = ranked_groups(run)?
        .into_iter()
        .map(|((id, answer), ranked)| {
            let text = reviews.get(&id).ok_or_else(|| {
                Error::data(None, format!("ranked review {id:?} is not in the splits"))
            })?;
            Ok(RankedExample {
                prompt: render_explain_prompt(&task, text, answer),
                ranked,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (pairs, summary) = build_dataset(&examples, &c.selection)?;
    let source = crate::hashing::sha256_hex(
        &std::fs::read(run.path(RANKED)).map_err(|e| Error::io(run.path(RANKED), e))?,
    );
    emit_dataset(
        &run.path(PREFS),
        &pairs,
        &c.selection,
        examples.len(),
        vec![source],
    )?;
    write_jsonl(&run.path(PAIRS), &pairs)?;
    write_json(&run.path(PREFS_SUMMARY), &summary)?;
    Ok(format!(
        "{} pairs from {} examples ({} without pairs)",
        summary.pairs, summary.examples, summary.examples_without_pairs
    ))
}

fn run_train_toy(run: &Run) -> Result<String> {
    let c = &run.config;
    let reference = load_toy(run, &c.backends.teacher, "teacher")?;
    let pairs: Vec<PreferencePair> = read_jsonl(&run.path(PAIRS))?;
    if pairs.is_empty() {
        return Err(Error::domain("no preference pairs to train on"));
    }
    let config = TrainConfig {
        lr: c.dpo.lr,
        epochs: c.dpo.epochs,
        batch_size: c.dpo.batch_size,
    };
    let objective = Objective::Dpo {
        reference: &reference,
        pairs: &pairs,
        beta: c.dpo.beta,
    };
    let trained = train_or_err(reference.clone(), objective, &config)?;
    let model = trained.model.clone().with_id("toy-dpo");
    model.save(&run.path(DPO_CHECKPOINT))?;
    write_atomic(&run.path(DPO_TRACE), trained.trace_csv().as_bytes())?;
    let margin = |i: usize| trained.trace[i].mean_margin.unwrap_or(f64::NAN);
    Ok(format!(
        "{} pairs, mean margin {:.4} -> {:.4}",
        pairs.len(),
        margin(0),
        margin(trained.trace.len() - 1)
    ))
}

/// Consistency of one teacher system's explanation for one validation review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherScore {
    pub system: String,
    pub review_id: String,
    pub answer: Label,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub systems: Vec<String>,
    pub ks: Vec<usize>,
    pub runs: Vec<SimRunConfig>,
    pub trainer: String,
    pub records: String,
    pub pool_size: usize,
    pub test_size: usize,
    pub matrix: SimMatrix,
}

fn run_eval_sim(run: &Run) -> Result<String> {
    let c = &run.config;
    let task = c.task_spec()?;
    let examples = read_examples(&run.path(SPLITS))?;
    let pool: Vec<ReviewRef> = sorted_split(&examples, Split::Validation)
        .iter()
        .map(ReviewRef::from)
        .collect();
    let test: Vec<ReviewRef> = sorted_split(&examples, Split::Test)
        .iter()
        .map(ReviewRef::from)
        .collect();
    let sft = open_backend(run, &c.backends.teacher)?;
    let dpo = SoftmaxLm::load(&run.path(DPO_CHECKPOINT))?;

    let answers = teacher_predictions(sft.as_ref(), &pool, c.jobs)?;
    let sft_records = explain_answers(
        sft.as_ref(),
        &task,
        &pool,
        &answers,
        SFT,
        &c.sim.teacher,
        c.jobs,
    )?;
    let dpo_records = explain_answers(&dpo, &task, &pool, &answers, DPO, &c.sim.teacher, c.jobs)?;
    let sft_test = teacher_predictions(sft.as_ref(), &test, c.jobs)?;
    let systems = vec![
        SystemInput {
            name: PRED_ONLY.into(),
            records: sft_records.iter().map(TeacherRecord::pred_only).collect(),
            test_predictions: sft_test.clone(),
        },
        SystemInput {
            name: SFT.into(),
            records: sft_records,
            test_predictions: sft_test.clone(),
        },
        SystemInput {
            name: DPO.into(),
            records: dpo_records,
            test_predictions: sft_test.clone(),
        },
    ];

    let scorer = open_backend(run, &c.backends.scorer)?;
    let reviews = review_texts(&examples);
    let mut scores = Vec::new();
    for s in &systems[1..] {
        let mut xs: Vec<Explanation> = s
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| Explanation {
                review_id: r.review_id.clone(),
                answer: r.answer,
                explanation: r.explanation.clone(),
                temperature: c.sim.teacher.temperature,
                seed: c.sim.teacher.seed,
                stage: 0,
                sample_index: i,
                truncated: false,
                score: None,
            })
            .collect();
        let spec = ScoringSpec {
            variant: ScoreVariant::Adjusted,
            prompt_variant: c.scoring.prompt_variant,
            timestamp: c.clock,
        };
        score_explanations(scorer.as_ref(), &task, &reviews, &mut xs, spec, c.jobs)?;
        for x in xs {
            scores.push(TeacherScore {
                system: s.name.clone(),
                review_id: x.review_id.clone(),
                answer: x.answer,
                score: x.score_value().unwrap_or(f64::NAN),
            });
        }
    }

    let configs = c.sim.run_configs();
    let trainer: Box<dyn StudentTrainer> = match &c.sim.trainer {
        Some(cmd) => Box::new(CommandTrainer {
            program: cmd.program.clone(),
            args: cmd.args.clone(),
            workdir: run.path("checkpoints/students"),
        }),
        None => Box::new(ToyStudentTrainer {
            init: load_toy(run, &c.backends.student, "student")?,
            lr: c.sim.lr,
        }),
    };
    let matrix = run_matrix(&systems, &test, &configs, trainer.as_ref(), c.jobs)?;

    let records: Vec<&TeacherRecord> = systems.iter().flat_map(|s| &s.records).collect();
    write_jsonl(&run.path(TEACHER_RECORDS), &records)?;
    write_jsonl(&run.path(TEACHER_SCORES), &scores)?;
    write_atomic(&run.path(SIM_CSV), matrix.to_csv().as_bytes())?;
    let averages = matrix
        .averages
        .iter()
        .map(|(s, v)| format!("{s} {v:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    let report = SimReport {
        systems: systems.iter().map(|s| s.name.clone()).collect(),
        ks: c.sim.ks.clone(),
        runs: configs,
        trainer: trainer.name(),
        records: TEACHER_RECORDS.into(),
        pool_size: pool.len(),
        test_size: test.len(),
        matrix,
    };
    write_json(&run.path(SIM_JSON), &report)?;
    Ok(format!("mean F1: {averages}"))
}

// ------------------------------------------------------------------- stats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantDistribution {
    pub model: String,
    pub summary: DistributionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KendallRow {
    pub a: PromptVariant,
    pub b: PromptVariant,
    pub n: usize,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoVsSft {
    pub scope: String,
    pub dpo_mean: f64,
    pub sft_mean: f64,
    pub n: usize,
    pub test: Option<TTest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub task: String,
    pub distributions: Vec<VariantDistribution>,
    pub prompt_variants: Vec<KendallRow>,
    pub bootstrap: BootstrapConfig,
    pub dpo_vs_sft: Vec<DpoVsSft>,
    pub simulation: SimReport,
}

fn compare(scope: String, dpo: &[f64], sft: &[f64]) -> DpoVsSft {
    let (test, note) = match paired_t_test(dpo, sft) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    DpoVsSft {
        scope,
        dpo_mean: crate::stats::mean(dpo),
        sft_mean: crate::stats::mean(sft),
        n: dpo.len(),
        test,
        note,
    }
}

fn run_stats(run: &Run) -> Result<String> {
    let c = &run.config;
    let task = c.task_spec()?;
    let groups = ranked_groups(run)?;
    let samples: Vec<Explanation> = groups.into_iter().flat_map(|(_, g)| g).collect();
    let teacher: Vec<TeacherScore> = read_jsonl(&run.path(TEACHER_SCORES))?;
    let simulation: SimReport = read_json(&run.path(SIM_JSON))?;

    let sample_scores: Vec<f64> = samples
        .iter()
        .map(|e| {
            e.score_value()
                .ok_or_else(|| Error::domain("ranked sample without a score"))
        })
        .collect::<Result<_>>()?;
    let by_system = |name: &str| -> BTreeMap<String, f64> {
        teacher
            .iter()
            .filter(|t| t.system == name)
            .map(|t| (t.review_id.clone(), t.score))
            .collect()
    };
    let (sft, dpo) = (by_system(SFT), by_system(DPO));
    let sft_scores: Vec<f64> = sft.values().copied().collect();
    let dpo_scores: Vec<f64> = dpo.values().copied().collect();
    let mut distributions = vec![VariantDistribution {
        model: format!("{SFT} samples"),
        summary: distribution_summary(&sample_scores)?,
    }];
    for (name, v) in [(SFT, &sft_scores), (DPO, &dpo_scores)] {
        if !v.is_empty() {
            distributions.push(VariantDistribution {
                model: format!("{name} teacher"),
                summary: distribution_summary(v)?,
            });
        }
    }

    let reviews = review_texts(&read_examples(&run.path(SPLITS))?);
    let scorer = open_backend(run, &c.backends.scorer)?;
    let mut by_variant: Vec<(PromptVariant, Vec<f64>)> = Vec::new();
    for &v in &c.scoring.compare {
        let mut xs = samples.clone();
        let spec = ScoringSpec {
            variant: ScoreVariant::Adjusted,
            prompt_variant: v,
            timestamp: c.clock,
        };
        score_explanations(scorer.as_ref(), &task, &reviews, &mut xs, spec, c.jobs)?;
        by_variant.push((v, xs.iter().filter_map(Explanation::score_value).collect()));
    }
    let bootstrap =
        BootstrapConfig::new(c.stats.level, c.stats.seed).with_resamples(c.stats.resamples);
    let mut prompt_variants = Vec::new();
    for i in 0..by_variant.len() {
        for j in i + 1..by_variant.len() {
            let (a, x) = &by_variant[i];
            let (b, y) = &by_variant[j];
            let interval = bootstrap_ci(x, y, kendall_tau, &bootstrap, c.jobs)?;
            prompt_variants.push(KendallRow {
                a: *a,
                b: *b,
                n: x.len(),
                interval,
            });
        }
    }

    let mut dpo_vs_sft = Vec::new();
    let paired: Vec<(f64, f64)> = dpo
        .iter()
        .filter_map(|(id, d)| sft.get(id).map(|s| (*d, *s)))
        .collect();
    if !paired.is_empty() {
        let (d, s): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
        dpo_vs_sft.push(compare("consistency".into(), &d, &s));
    }
    for &k in &simulation.ks {
        if let (Some(d), Some(s)) = (simulation.matrix.get(DPO, k), simulation.matrix.get(SFT, k)) {
            dpo_vs_sft.push(compare(
                format!("simulation F1, k={k}"),
                &d.per_pass,
                &s.per_pass,
            ));
        }
    }

    let report = StatsReport {
        task: c.task.clone(),
        distributions,
        prompt_variants,
        bootstrap,
        dpo_vs_sft,
        simulation,
    };
    write_json(&run.path(STATS), &report)?;
    Ok(format!(
        "{} distributions, {} variant pairs, {} comparisons",
        report.distributions.len(),
        report.prompt_variants.len(),
        report.dpo_vs_sft.len()
    ))
}

fn run_report(run: &Run) -> Result<String> {
    let stats: StatsReport = read_json(&run.path(STATS))?;
    let files = render_report(&stats);
    for (rel, body) in REPORT_FILES.iter().zip(&files) {
        write_atomic(&run.path(rel), body.as_bytes())?;
    }
    Ok(format!("{} files in report/", files.len()))
}

// ---------------------------------------------------------------- toy-init

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyInit {
    pub seed: u64,
    /// Reviews in the generated input corpus.
    pub size: usize,
    /// Reviews in the separate corpus used to pretrain the base checkpoint.
    pub pretrain_size: usize,
}

impl ToyInit {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            size: 200,
            pretrain_size: 40,
        }
    }
}

/// Lays out a runnable toy experiment: `config.json`, a raw CSV corpus,
/// a pretrained base checkpoint and an untrained student.
pub fn init_toy(dir: &Path, init: &ToyInit, force: bool) -> Result<Run> {
    if dir.join(CONFIG_FILE).exists() && !force {
        return Err(Error::Config(format!(
            "{} already exists; pass --force to overwrite",
            dir.join(CONFIG_FILE).display()
        )));
    }
    let config = RunConfig::toy(init.seed);
    let run = Run::new(dir, config)?;
    let corpus = generate_corpus(&CorpusSpec::new(init.size, init.seed));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "text", "label"])
        .map_err(|e| Error::data(None, e.to_string()))?;
    for e in &corpus {
        w.write_record([e.id.as_str(), e.text.as_str(), e.label.as_str()])
            .map_err(|e| Error::data(None, e.to_string()))?;
    }
    let body = w
        .into_inner()
        .map_err(|e| Error::data(None, e.to_string()))?;
    write_atomic(&run.path(&run.config.corpus.path), &body)?;

    let pretrain_seed = crate::hashing::derive_seed(&["pretrain", &init.seed.to_string()]);
    let mut reviews = generate_corpus(&CorpusSpec::new(init.pretrain_size, pretrain_seed));
    for e in &mut reviews {
        e.id = format!("pre-{}", e.id);
    }
    let base = pretrain_base(
        &reviews,
        &run.config.task_spec()?,
        &PretrainSpec::new(pretrain_seed),
    )?;
    base.save(&run.path("checkpoints/base.json"))?;
    student_init().save(&run.path("checkpoints/student_init.json"))?;
    write_json(&run.path(CONFIG_FILE), &run.config)?;
    Ok(run)
}
