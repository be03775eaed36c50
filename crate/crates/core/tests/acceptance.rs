mod common;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pex::backend::Boundary;
use pex::backend::{answer_distribution, sample};
use pex::consistency::ScoreVariant;
use pex::consistency::{
    adjusted_from_parts, pex_adjusted, pex_sequence, posterior_logodds, prior_logodds,
};
use pex::datasets::{of_split, split, ReviewExample, Split, SplitSpec};
use pex::optim::{
    dpo_loss_and_grad, encode_all, sft_loss_and_grad, student_mle_loss_and_grad, train_or_err,
    DpoConfig, Encoded, LossReport, Objective, SoftmaxLm, TrainConfig,
};
use pex::prefs::{
    build_dataset, build_pairs, select_pools, PreferencePair, RankedExample, SelectionPolicy,
};
use pex::prompting::{
    render_adjusted_prompt, render_explain_prompt, render_prior_prompt, render_question,
    render_student_prompt, render_student_response, Label, PromptVariant, TaskSpec,
};
use pex::sampler::{
    rank, sample_batch_par, score_explanations, Explanation, SampleTarget, ScoreRecord, ScoringSpec,
};
use pex::simeval::{
    build_teacher_records, run_matrix, teacher_predictions, LeakageGuard, ReviewRef, SimRunConfig,
    SystemInput, TeacherSampling, ToyStudentTrainer, PRED_ONLY, SFT,
};
use pex::stats::{bootstrap_ci, kendall_tau, mean, paired_t_test, BootstrapConfig};
use pex::toy::{
    cue_teacher, generate_corpus, pretrain_base, student_init, CorpusSpec, PretrainSpec,
    RESPONSE_TOKENS,
};
use pex::Error;
use std::io::Write;

use common::{
    kendall_oracle, random_spec, random_tabular, random_words, randomize, t_tail_simpson,
};

fn verdict(name: &str, pass: bool, details: &str, elapsed: Duration, limit: Option<Duration>) {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let tag = if pass && in_time { "PASS" } else { "FAIL" };
    let budget = limit.map(|l| format!(" of {:.0?}", l)).unwrap_or_default();
    let line = format!("[{tag}] {name}: {details} ({elapsed:.2?}{budget})\n");
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{name} failed: {details}");
    assert!(
        in_time,
        "{name} exceeded its time budget: {elapsed:.2?}{budget}"
    );
}

// ----------------------------------------------------------------- 1

#[test]
fn bayes_identity_on_random_tabular_models() {
    let start = Instant::now();
    let task = TaskSpec::hotel();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_oracle, mut worst_bayes, mut checked) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..50 {
        let fx = random_tabular(&mut rng, 3, 20);
        for q in &fx.questions {
            for answer in Label::ALL {
                let not = answer.negate();
                let prior_oracle = (q.prior(answer) / q.prior(not)).ln();
                let prior = prior_logodds(&fx.lm, &q.review, answer).unwrap();
                for (i, (text, _, _)) in q.explanations.iter().enumerate() {
                    let seq = pex_sequence(&fx.lm, &task, &q.review, answer, text)
                        .unwrap()
                        .value;
                    let posterior_oracle = ((q.prior(answer) * q.likelihood(i, answer))
                        / (q.prior(not) * q.likelihood(i, not)))
                    .ln();
                    worst_oracle =
                        worst_oracle.max((seq - (posterior_oracle - prior_oracle)).abs());
                    let posterior =
                        posterior_logodds(&fx.lm, &q.review, answer, text, PromptVariant::Analysis)
                            .unwrap();
                    worst_bayes = worst_bayes.max((seq - (posterior - prior)).abs());
                    checked += 1;
                }
            }
        }
    }
    verdict(
        "bayes-identity",
        worst_oracle < 1e-9 && worst_bayes < 1e-9,
        &format!(
            "{checked} explanations, max |seq - oracle| = {worst_oracle:.2e}, max |seq - (post - prior)| = {worst_bayes:.2e}, tol 1e-9"
        ),
        start.elapsed(),
        Some(Duration::from_secs(5)),
    );
}

// ----------------------------------------------------------------- 2

const GRAD_WORDS: [&str; 8] = [
    "clean", "staff", "rude", "noisy", "view", "bed", "lobby", "price",
];
const FD_STEP: f64 = 1e-5;
/// Relative errors divide by `max(|analytic|, |numeric|, REL_FLOOR)`, so
/// entries smaller than the floor are held to an absolute 1e-8.
const REL_FLOOR: f64 = 1e-3;

fn grad_model(rng: &mut ChaCha8Rng) -> SoftmaxLm {
    SoftmaxLm::new(
        GRAD_WORDS.iter().chain(RESPONSE_TOKENS.iter()).copied(),
        random_spec(rng),
    )
}

fn total_logprob(model: &SoftmaxLm, enc: &Encoded) -> f64 {
    model.encoded_logprobs(enc).iter().sum()
}

#[derive(Default)]
struct GradStats {
    rel: f64,
    abs: f64,
    loss_gap: f64,
    params: usize,
}

impl GradStats {
    /// Compares every partial derivative in `report.grad` with a central
    /// difference of the independently computed `loss`.
    fn check(
        &mut self,
        model: &mut SoftmaxLm,
        report: &LossReport,
        loss: impl Fn(&SoftmaxLm) -> f64,
    ) {
        self.loss_gap = self.loss_gap.max((report.loss - loss(model)).abs());
        let mut rows: Vec<&String> = report.grad.rows.keys().collect();
        rows.sort();
        for row in rows {
            for t in 0..model.vocab_size() {
                let original = model.param(row, t);
                model.set_param(row, t, original + FD_STEP);
                let up = loss(model);
                model.set_param(row, t, original - FD_STEP);
                let down = loss(model);
                model.set_param(row, t, original);
                let numeric = (up - down) / (2.0 * FD_STEP);
                let analytic = report.grad.get(row, t);
                let diff = (analytic - numeric).abs();
                self.rel = self
                    .rel
                    .max(diff / analytic.abs().max(numeric.abs()).max(REL_FLOOR));
                self.abs = self.abs.max(diff);
                self.params += 1;
            }
        }
    }
}

fn rows_of(report: &LossReport) -> Vec<String> {
    let mut rows: Vec<String> = report.grad.rows.keys().cloned().collect();
    rows.sort();
    rows
}

fn label(rng: &mut ChaCha8Rng) -> Label {
    if rng.gen_bool(0.5) {
        Label::Truthful
    } else {
        Label::Deceptive
    }
}

type MleObjective = fn(&SoftmaxLm, &[(String, String)]) -> pex::Result<LossReport>;

fn mle_fixture(
    rng: &mut ChaCha8Rng,
    stats: &mut GradStats,
    data: &[(String, String)],
    objective: MleObjective,
) {
    let mut m = grad_model(rng);
    let rows = rows_of(&objective(&m, data).unwrap());
    randomize(&mut m, &rows, rng);
    let report = objective(&m, data).unwrap();
    let enc = encode_all(&m, data, Boundary::Prefix).unwrap();
    stats.check(&mut m, &report, |m| {
        -enc.iter().map(|e| total_logprob(m, e)).sum::<f64>()
    });
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let start = Instant::now();
    let task = TaskSpec::hotel().zero_shot();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut sft, mut student, mut dpo) = (
        GradStats::default(),
        GradStats::default(),
        GradStats::default(),
    );
    for _ in 0..100 {
        let data: Vec<(String, String)> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let review = random_words(&mut rng, &GRAD_WORDS, 1, 5);
                (
                    render_prior_prompt(&review),
                    label(&mut rng).as_str().to_string(),
                )
            })
            .collect();
        mle_fixture(&mut rng, &mut sft, &data, sft_loss_and_grad);

        let data: Vec<(String, String)> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let review = random_words(&mut rng, &GRAD_WORDS, 1, 5);
                let expl = random_words(&mut rng, &GRAD_WORDS, 1, 4);
                (
                    render_student_prompt(&review),
                    render_student_response(label(&mut rng), &expl),
                )
            })
            .collect();
        mle_fixture(&mut rng, &mut student, &data, student_mle_loss_and_grad);

        let mut policy = grad_model(&mut rng);
        let mut reference = policy.clone();
        let pairs: Vec<PreferencePair> = (0..rng.gen_range(1..=3))
            .map(|i| {
                let review = random_words(&mut rng, &GRAD_WORDS, 1, 5);
                let answer = label(&mut rng);
                let chosen = random_words(&mut rng, &GRAD_WORDS, 1, 4);
                let mut rejected = random_words(&mut rng, &GRAD_WORDS, 1, 4);
                while rejected == chosen {
                    rejected = random_words(&mut rng, &GRAD_WORDS, 1, 4);
                }
                PreferencePair {
                    review_id: format!("r{i}"),
                    answer,
                    prompt: render_explain_prompt(&task, &review, answer),
                    chosen,
                    rejected,
                    chosen_score: 1.0,
                    rejected_score: -1.0,
                }
            })
            .collect();
        let config = DpoConfig {
            beta: rng.gen_range(0.05..1.0),
            ..DpoConfig::default()
        };
        let rows = rows_of(&dpo_loss_and_grad(&policy, &reference, &pairs, &config).unwrap());
        randomize(&mut policy, &rows, &mut rng);
        randomize(&mut reference, &rows, &mut rng);
        let report = dpo_loss_and_grad(&policy, &reference, &pairs, &config).unwrap();
        let encoded: Vec<(Encoded, Encoded, f64)> = pairs
            .iter()
            .map(|p| {
                let w = policy
                    .encode(&p.prompt, &p.chosen, Boundary::Complete)
                    .unwrap();
                let l = policy
                    .encode(&p.prompt, &p.rejected, Boundary::Complete)
                    .unwrap();
                let reference_gap = total_logprob(&reference, &w) - total_logprob(&reference, &l);
                (w, l, reference_gap)
            })
            .collect();
        dpo.check(&mut policy, &report, |m| {
            encoded
                .iter()
                .map(|(w, l, reference_gap)| {
                    let z =
                        config.beta * (total_logprob(m, w) - total_logprob(m, l) - reference_gap);
                    (-z).exp().ln_1p()
                })
                .sum::<f64>()
                / encoded.len() as f64
        });
    }
    let all = [&sft, &student, &dpo];
    let gap = all.iter().map(|s| s.loss_gap).fold(0.0, f64::max);
    let abs = all.iter().map(|s| s.abs).fold(0.0, f64::max);
    verdict(
        "gradient-checks",
        all.iter().all(|s| s.rel < 1e-5) && gap < 1e-9,
        &format!(
            "max relative error SFT {:.2e} ({} params), student {:.2e} ({}), DPO {:.2e} ({}); max absolute error {abs:.2e}; loss vs oracle {gap:.1e}; step {FD_STEP:e}, floor {REL_FLOOR:e}, tol 1e-5",
            sft.rel, sft.params, student.rel, student.params, dpo.rel, dpo.params
        ),
        start.elapsed(),
        Some(Duration::from_secs(30)),
    );
}

// ----------------------------------------------------------------- 3

#[test]
fn dpo_raises_margin_and_consistency() {
    let start = Instant::now();
    let task = TaskSpec::hotel().zero_shot();
    let corpus = generate_corpus(&CorpusSpec::new(40, 11));
    let base = pretrain_base(&corpus, &task, &PretrainSpec::new(11)).unwrap();
    let reviews: HashMap<String, String> = corpus
        .iter()
        .map(|e| (e.id.clone(), e.text.clone()))
        .collect();
    let mut schedule = pex::sampler::SamplingSchedule::standard(5);
    schedule.max_tokens = 16;
    let spec = ScoringSpec {
        variant: ScoreVariant::Adjusted,
        prompt_variant: PromptVariant::Analysis,
        timestamp: 0,
    };
    let answer_of = |text: &str| {
        answer_distribution(&base, &render_prior_prompt(text))
            .unwrap()
            .argmax()
    };
    let mut examples = Vec::new();
    for e in &corpus[..10] {
        let answer = answer_of(&e.text);
        let target = SampleTarget {
            review_id: e.id.clone(),
            review: e.text.clone(),
            answer,
        };
        let mut xs = sample_batch_par(&base, &task, &target, &schedule, 4).unwrap();
        score_explanations(&base, &task, &reviews, &mut xs, spec, 4).unwrap();
        examples.push(RankedExample {
            prompt: render_explain_prompt(&task, &e.text, answer),
            ranked: rank(xs).unwrap(),
        });
    }
    let (pairs, _) = build_dataset(&examples, &SelectionPolicy::tripadvisor(3)).unwrap();
    let objective = Objective::Dpo {
        reference: &base,
        pairs: &pairs,
        beta: 0.1,
    };
    let trained = train_or_err(
        base.clone(),
        objective,
        &TrainConfig {
            lr: 2.0,
            epochs: 200,
            batch_size: None,
        },
    )
    .unwrap();
    let m0 = trained.trace[0].mean_margin.unwrap();
    let m1 = trained.trace.last().unwrap().mean_margin.unwrap();

    let (mut from_policy, mut from_reference) = (Vec::new(), Vec::new());
    for (i, e) in corpus[10..30].iter().enumerate() {
        let answer = answer_of(&e.text);
        let prompt = render_explain_prompt(&task, &e.text, answer);
        for j in 0..5 {
            let seed = (i * 100 + j) as u64;
            let x = sample(&trained.model, &prompt, 1.0, seed, 16).unwrap().text;
            let y = sample(&base, &prompt, 1.0, seed, 16).unwrap().text;
            from_policy.push(
                pex_adjusted(&base, &e.text, answer, &x, PromptVariant::Analysis)
                    .unwrap()
                    .value,
            );
            from_reference.push(
                pex_adjusted(&base, &e.text, answer, &y, PromptVariant::Analysis)
                    .unwrap()
                    .value,
            );
        }
    }
    let test = paired_t_test(&from_policy, &from_reference).unwrap();
    let (mp, mr) = (mean(&from_policy), mean(&from_reference));
    verdict(
        "dpo-direction",
        m1 > m0 && mp > mr && test.p_value < 0.05 && from_policy.len() >= 100,
        &format!(
            "{} pairs, mean margin {m0:.4} -> {m1:.4}; PEX policy {mp:.3} vs reference {mr:.3} over {} samples, t = {:.2}, p = {:.2e}",
            pairs.len(),
            from_policy.len(),
            test.t,
            test.p_value
        ),
        start.elapsed(),
        Some(Duration::from_secs(120)),
    );
}

// ----------------------------------------------------------------- 4

fn scored(review_id: &str, index: usize, text: String, value: f64) -> Explanation {
    let score = adjusted_from_parts(value, 0.0, PromptVariant::Analysis);
    Explanation {
        review_id: review_id.to_string(),
        answer: Label::Truthful,
        explanation: text,
        temperature: 1.0,
        seed: index as u64,
        stage: 0,
        sample_index: index,
        truncated: false,
        score: Some(ScoreRecord::new(&score, "fixture".into(), 0)),
    }
}

fn random_ranking(rng: &mut ChaCha8Rng, id: &str, n: usize) -> Vec<Explanation> {
    let mut xs: Vec<Explanation> = (0..n)
        .map(|i| {
            let value = match rng.gen_range(0..4) {
                0 => 0.0,
                1 => (rng.gen_range(-6.0..6.0f64) * 2.0).round() / 2.0,
                _ => rng.gen_range(-6.0..6.0),
            };
            let text = if i > 0 && rng.gen_bool(0.1) {
                format!("e{}", rng.gen_range(0..i))
            } else {
                format!("e{i}")
            };
            scored(id, i, text, value)
        })
        .collect();
    xs.sort_by(|a, b| {
        b.score_value()
            .unwrap()
            .total_cmp(&a.score_value().unwrap())
    });
    xs
}

fn eligible_oracle(top: &[Explanation], bottom: &[Explanation], straddle: bool) -> usize {
    let mut n = 0;
    for w in top {
        for l in bottom {
            let (a, b) = (w.score_value().unwrap(), l.score_value().unwrap());
            if a > b && (!straddle || (a > 0.0 && b < 0.0)) && w.explanation != l.explanation {
                n += 1;
            }
        }
    }
    n
}

#[test]
fn preference_construction_invariants() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = Vec::new();
    let (mut total_pairs, mut straddle_lists) = (0usize, 0usize);
    for case in 0..1000 {
        let n = rng.gen_range(2..=120);
        let percent = rng.gen_range(1..=50usize);
        let policy = SelectionPolicy {
            fraction: percent as f64 / 100.0,
            pairs_per_example: 8,
            zero_straddle: rng.gen_bool(0.5),
            seed: rng.gen(),
        };
        straddle_lists += usize::from(policy.zero_straddle);
        let id = format!("r{case}");
        let ranked = random_ranking(&mut rng, &id, n);
        let pools = select_pools(&ranked, &policy).unwrap();
        let want = (percent * n).div_ceil(100).min(n / 2);
        if pools.top.len() != want || pools.bottom.len() != want {
            failures.push(format!(
                "case {case}: pools {} for n={n} p={percent}%",
                pools.top.len()
            ));
        }
        let out = build_pairs("prompt", &pools.top, &pools.bottom, &policy).unwrap();
        let eligible = eligible_oracle(&pools.top, &pools.bottom, policy.zero_straddle);
        if out.pairs.len() != eligible.min(8) || out.eligible != eligible {
            failures.push(format!(
                "case {case}: {} pairs of {eligible} eligible",
                out.pairs.len()
            ));
        }
        for p in &out.pairs {
            if p.chosen_score.partial_cmp(&p.rejected_score) != Some(std::cmp::Ordering::Greater) {
                failures.push(format!(
                    "case {case}: chosen {} <= rejected {}",
                    p.chosen_score, p.rejected_score
                ));
            }
            if policy.zero_straddle && !(p.chosen_score > 0.0 && p.rejected_score < 0.0) {
                failures.push(format!("case {case}: pair does not straddle zero"));
            }
        }
        let again = build_pairs("prompt", &pools.top, &pools.bottom, &policy).unwrap();
        if again != out {
            failures.push(format!("case {case}: not deterministic"));
        }
        total_pairs += out.pairs.len();
    }
    let probe = random_ranking(&mut rng, "probe", 80);
    for (percent, want) in [(10, 8), (5, 4)] {
        let mut policy = SelectionPolicy::tripadvisor(0);
        policy.fraction = percent as f64 / 100.0;
        let pools = select_pools(&probe, &policy).unwrap();
        if pools.top.len() != want || pools.bottom.len() != want {
            failures.push(format!(
                "p={percent}% of 80 gave pools of {}",
                pools.top.len()
            ));
        }
    }
    verdict(
        "preference-invariants",
        failures.is_empty(),
        &format!(
            "1000 lists ({straddle_lists} with zero-straddle), {total_pairs} pairs, violations: {}",
            if failures.is_empty() {
                "none".to_string()
            } else {
                failures[..failures.len().min(3)].join("; ")
            }
        ),
        start.elapsed(),
        None,
    );
}

// ----------------------------------------------------------------- 5

fn simulation_gap(seed: u64) -> (f64, f64) {
    let task = TaskSpec::hotel().zero_shot();
    let corpus = generate_corpus(&CorpusSpec::new(160, seed));
    let teacher = cue_teacher(&corpus, 0.9).unwrap();
    let refs: Vec<ReviewRef> = corpus.iter().map(ReviewRef::from).collect();
    let (pool, test) = refs.split_at(60);
    let records =
        build_teacher_records(&teacher, &task, pool, SFT, &TeacherSampling::new(seed), 1).unwrap();
    let test_predictions = teacher_predictions(&teacher, test, 1).unwrap();
    let systems = [
        SystemInput {
            name: PRED_ONLY.into(),
            records: records.iter().map(|r| r.pred_only()).collect(),
            test_predictions: test_predictions.clone(),
        },
        SystemInput {
            name: SFT.into(),
            records,
            test_predictions,
        },
    ];
    let trainer = ToyStudentTrainer {
        init: student_init(),
        lr: 0.05,
    };
    let matrix = run_matrix(
        &systems,
        test,
        &[SimRunConfig::for_k(10, seed)],
        &trainer,
        4,
    )
    .unwrap();
    (
        matrix.get(PRED_ONLY, 10).unwrap().mean,
        matrix.get(SFT, 10).unwrap().mean,
    )
}

fn leakage_rejected() -> bool {
    let task = TaskSpec::hotel().zero_shot();
    let corpus = generate_corpus(&CorpusSpec::new(40, 5));
    let teacher = cue_teacher(&corpus, 0.9).unwrap();
    let refs: Vec<ReviewRef> = corpus.iter().map(ReviewRef::from).collect();
    let (pool, test) = refs.split_at(20);
    let records =
        build_teacher_records(&teacher, &task, pool, SFT, &TeacherSampling::new(5), 1).unwrap();
    let leaked = records
        .iter()
        .find(|r| r.explanation.len() >= pex::simeval::MIN_LEAK_CHARS)
        .expect("a long explanation")
        .explanation
        .clone();
    let test_predictions = teacher_predictions(&teacher, test, 1).unwrap();
    let mut test: Vec<ReviewRef> = test.to_vec();
    test[3].text = format!("{} {leaked}", test[3].text);
    let system = SystemInput {
        name: SFT.into(),
        records: records.clone(),
        test_predictions,
    };
    let trainer = ToyStudentTrainer {
        init: student_init(),
        lr: 0.05,
    };
    let run = run_matrix(&[system], &test, &[SimRunConfig::for_k(5, 1)], &trainer, 1);
    let guard = LeakageGuard::new(&records);
    let marker = guard.check(&format!(
        "{} Analysis: fine",
        render_prior_prompt("a review")
    ));
    matches!(run, Err(Error::Leakage(_))) && matches!(marker, Err(Error::Leakage(_)))
}

#[test]
fn explanations_improve_student_simulation() {
    let start = Instant::now();
    let gaps: Vec<(u64, f64, f64)> = (1..=5)
        .map(|seed| {
            let (pred, sft) = simulation_gap(seed);
            (seed, pred, sft)
        })
        .collect();
    let leak = leakage_rejected();
    let ok = gaps.iter().all(|(_, p, s)| s - p >= 0.10) && leak;
    let cells: Vec<String> = gaps
        .iter()
        .map(|(seed, p, s)| format!("seed {seed}: {p:.3} -> {s:.3} (+{:.3})", s - p))
        .collect();
    verdict(
        "simulatability",
        ok,
        &format!(
            "k=10, 5 passes, PredOnly -> explained F1 {}; leakage guard {}",
            cells.join(", "),
            if leak {
                "rejects leaked prompts"
            } else {
                "MISSED a leak"
            }
        ),
        start.elapsed(),
        None,
    );
}

// ----------------------------------------------------------------- 6

#[test]
fn statistics_match_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut kendall_mismatch = 0;
    let mut vectors = 0;
    while vectors < 100 {
        let n = rng.gen_range(2..=50);
        let levels = rng.gen_range(2..=12);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64).collect();
        let y: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 * 0.5)
            .collect();
        if x.iter().all(|v| *v == x[0]) || y.iter().all(|v| *v == y[0]) {
            assert!(kendall_tau(&x, &y).is_err());
            continue;
        }
        if kendall_tau(&x, &y).unwrap().to_bits() != kendall_oracle(&x, &y).to_bits() {
            kendall_mismatch += 1;
        }
        vectors += 1;
    }

    let mut worst_p = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(3..=40);
        let shift = rng.gen_range(-1.0..1.0);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| v + shift + rng.gen_range(-1.5..1.5))
            .collect();
        let t = paired_t_test(&x, &y).unwrap();
        let oracle = t_tail_simpson(t.t, (n - 1) as u32);
        worst_p = worst_p.max((t.p_value - oracle).abs());
    }

    let tau = |a: &[f64], b: &[f64]| kendall_tau(a, b);
    let base: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
    let other: Vec<f64> = base.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect();
    let config = BootstrapConfig::new(0.90, 17).with_resamples(1000);
    let first = bootstrap_ci(&base, &other, tau, &config, 1).unwrap();
    let second = bootstrap_ci(&base, &other, tau, &config, 4).unwrap();
    let reproducible = first == second;

    let mut covered = 0;
    for trial in 0..1000u64 {
        let n = 25;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-0.6..0.6)).collect();
        let config = BootstrapConfig::new(0.90, trial).with_resamples(1000);
        let ci = bootstrap_ci(&x, &y, tau, &config, 4).unwrap();
        covered += usize::from(ci.contains(ci.estimate));
    }

    verdict(
        "statistics",
        kendall_mismatch == 0 && worst_p < 1e-6 && reproducible && covered >= 890,
        &format!(
            "Kendall {kendall_mismatch}/100 mismatches; max |p - oracle| = {worst_p:.2e}; bootstrap reproducible = {reproducible}; coverage {covered}/1000 at level 0.90"
        ),
        start.elapsed(),
        None,
    );
}

// ----------------------------------------------------------------- 7

fn count_splits(n: usize) -> (usize, usize, usize) {
    let examples: Vec<ReviewExample> = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 {
                Label::Truthful
            } else {
                Label::Deceptive
            };
            ReviewExample::new(format!("x{i:05}"), format!("review number {i}"), label)
        })
        .collect();
    let out = split(examples, &SplitSpec::standard(9)).unwrap();
    (
        of_split(&out, Split::Train).len(),
        of_split(&out, Split::Validation).len(),
        of_split(&out, Split::Test).len(),
    )
}

#[test]
fn split_counts_are_exact() {
    let start = Instant::now();
    let a = count_splits(1600);
    let b = count_splits(2000);
    verdict(
        "split-counts",
        a == (960, 320, 320) && b == (1200, 400, 400),
        &format!("1600 -> {a:?}, 2000 -> {b:?}"),
        start.elapsed(),
        None,
    );
}

// ----------------------------------------------------------------- 8

#[test]
fn prompts_match_transcribed_fixtures() {
    let start = Instant::now();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/prompts");
    let inputs = fs::read_to_string(dir.join("inputs.txt")).unwrap();
    let mut lines = inputs.lines();
    let (review, explanation) = (lines.next().unwrap(), lines.next().unwrap());
    let task = TaskSpec::hotel().zero_shot();
    let rendered: BTreeMap<&str, String> = [
        ("question", render_question(review)),
        (
            "explain_truthful",
            render_explain_prompt(&task, review, Label::Truthful),
        ),
        (
            "explain_deceptive",
            render_explain_prompt(&task, review, Label::Deceptive),
        ),
        (
            "adjusted_analysis",
            render_adjusted_prompt(PromptVariant::Analysis, review, explanation).unwrap(),
        ),
        (
            "adjusted_v1",
            render_adjusted_prompt(PromptVariant::V1, review, explanation).unwrap(),
        ),
        (
            "adjusted_v2",
            render_adjusted_prompt(PromptVariant::V2, review, explanation).unwrap(),
        ),
        (
            "adjusted_v3",
            render_adjusted_prompt(PromptVariant::V3, review, explanation).unwrap(),
        ),
        (
            "student_response",
            render_student_response(Label::Deceptive, explanation),
        ),
    ]
    .into_iter()
    .collect();
    let mismatched: Vec<&str> = rendered
        .iter()
        .filter(|(name, text)| {
            fs::read(dir.join(format!("{name}.txt"))).unwrap() != text.as_bytes()
        })
        .map(|(name, _)| *name)
        .collect();
    verdict(
        "template-bytes",
        mismatched.is_empty(),
        &format!(
            "{} prompts compared, mismatched: {mismatched:?}",
            rendered.len()
        ),
        start.elapsed(),
        None,
    );
}

// ----------------------------------------------------------------- 9

fn pex(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_pex"))
        .arg("--run-dir")
        .arg(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "pex {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn report_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir.join("report"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn toy_pipeline_is_deterministic() {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, jobs) in [(a.path(), "1"), (b.path(), "4")] {
        pex(dir, &["toy-init", "--seed", "7"]);
        pex(dir, &["--jobs", jobs, "all"]);
    }
    let (ra, rb) = (report_files(a.path()), report_files(b.path()));
    let same = !ra.is_empty() && ra == rb;
    let bytes: usize = ra.values().map(Vec::len).sum();
    verdict(
        "end-to-end-determinism",
        same,
        &format!(
            "{} report files ({bytes} bytes) {} across two runs (jobs 1 and 4)",
            ra.len(),
            if same { "identical" } else { "DIFFER" }
        ),
        start.elapsed(),
        Some(Duration::from_secs(300)),
    );
}
