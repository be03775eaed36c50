//! DPO on the toy model: sample, score and rank explanations from a
//! pretrained base, build preference pairs, then fit a policy against the
//! frozen base and watch the reward margin grow.

use std::collections::HashMap;

use pex::backend::{answer_distribution, sample};
use pex::consistency::{pex_adjusted, ScoreVariant};
use pex::optim::{train_or_err, Objective, TrainConfig};
use pex::prefs::{build_dataset, RankedExample, SelectionPolicy};
use pex::prompting::{render_explain_prompt, render_prior_prompt, PromptVariant, TaskSpec};
use pex::sampler::{
    rank, sample_batch_par, score_explanations, SampleTarget, SamplingSchedule, ScoringSpec,
};
use pex::stats::mean;
use pex::toy::{generate_corpus, pretrain_base, CorpusSpec, PretrainSpec};

fn main() -> pex::Result<()> {
    let task = TaskSpec::hotel().zero_shot();
    let corpus = generate_corpus(&CorpusSpec::new(30, 11));
    let base = pretrain_base(&corpus, &task, &PretrainSpec::new(11))?;
    let texts: HashMap<String, String> = corpus
        .iter()
        .map(|e| (e.id.clone(), e.text.clone()))
        .collect();
    let answer_of =
        |text: &str| answer_distribution(&base, &render_prior_prompt(text)).map(|d| d.argmax());

    let mut schedule = SamplingSchedule::standard(5);
    schedule.max_tokens = 16;
    let spec = ScoringSpec {
        variant: ScoreVariant::Adjusted,
        prompt_variant: PromptVariant::Analysis,
        timestamp: 0,
    };
    let mut examples = Vec::new();
    for e in &corpus[..10] {
        let answer = answer_of(&e.text)?;
        let target = SampleTarget {
            review_id: e.id.clone(),
            review: e.text.clone(),
            answer,
        };
        let mut xs = sample_batch_par(&base, &task, &target, &schedule, 2)?;
        score_explanations(&base, &task, &texts, &mut xs, spec, 2)?;
        examples.push(RankedExample {
            prompt: render_explain_prompt(&task, &e.text, answer),
            ranked: rank(xs)?,
        });
    }
    let (pairs, _) = build_dataset(&examples, &SelectionPolicy::tripadvisor(3))?;
    println!("{} preference pairs", pairs.len());

    let trained = train_or_err(
        base.clone(),
        Objective::Dpo {
            reference: &base,
            pairs: &pairs,
            beta: 0.1,
        },
        &TrainConfig {
            lr: 2.0,
            epochs: 200,
            batch_size: None,
        },
    )?;
    for stat in trained.trace.iter().filter(|s| s.epoch % 40 == 0) {
        println!(
            "epoch {:>3}  loss {:.4}  margin {:+.4}",
            stat.epoch,
            stat.loss,
            stat.mean_margin.unwrap_or(f64::NAN)
        );
    }

    let (mut policy, mut reference) = (Vec::new(), Vec::new());
    for (i, e) in corpus[10..].iter().enumerate() {
        let answer = answer_of(&e.text)?;
        let prompt = render_explain_prompt(&task, &e.text, answer);
        for j in 0..4 {
            let seed = (i * 10 + j) as u64;
            for (model, out) in [(&trained.model, &mut policy), (&base, &mut reference)] {
                let text = sample(model, &prompt, 1.0, seed, 16)?.text;
                out.push(
                    pex_adjusted(&base, &e.text, answer, &text, PromptVariant::Analysis)?.value,
                );
            }
        }
    }
    println!(
        "held-out consistency: policy {:+.3}, reference {:+.3} over {} samples",
        mean(&policy),
        mean(&reference),
        policy.len()
    );
    Ok(())
}
