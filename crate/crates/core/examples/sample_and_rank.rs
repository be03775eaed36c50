//! Pretrain the toy base model, draw two temperature stages of explanations
//! for one review, score them and print both ends of the ranking.

use std::collections::HashMap;

use pex::backend::{answer_distribution, LmBackend};
use pex::consistency::ScoreVariant;
use pex::prompting::{render_prior_prompt, PromptVariant, TaskSpec};
use pex::sampler::{
    rank, sample_batch_par, score_explanations, SampleTarget, SamplingSchedule, ScoringSpec,
};
use pex::toy::{generate_corpus, pretrain_base, CorpusSpec, PretrainSpec};

fn main() -> pex::Result<()> {
    let task = TaskSpec::hotel().zero_shot();
    let corpus = generate_corpus(&CorpusSpec::new(30, 2));
    let base = pretrain_base(&corpus, &task, &PretrainSpec::new(2))?;
    println!("pretrained {}", base.id());

    let review = &corpus[0];
    let answer = answer_distribution(&base, &render_prior_prompt(&review.text))?.argmax();
    println!("review: {}\nmodel answer: {answer}", review.text);

    let mut schedule = SamplingSchedule::standard(9);
    schedule.max_tokens = 16;
    let target = SampleTarget {
        review_id: review.id.clone(),
        review: review.text.clone(),
        answer,
    };
    let mut drawn = sample_batch_par(&base, &task, &target, &schedule, 2)?;

    let texts: HashMap<String, String> = corpus
        .iter()
        .map(|e| (e.id.clone(), e.text.clone()))
        .collect();
    let spec = ScoringSpec {
        variant: ScoreVariant::Adjusted,
        prompt_variant: PromptVariant::Analysis,
        timestamp: 0,
    };
    score_explanations(&base, &task, &texts, &mut drawn, spec, 2)?;
    let ranked = rank(drawn)?;

    let show = |label: &str, items: &[pex::sampler::Explanation]| {
        println!("{label}");
        for e in items {
            println!(
                "  {:+7.3}  T={:.1}  {}",
                e.score_value().unwrap_or(f64::NAN),
                e.temperature,
                e.explanation
            );
        }
    };
    show("highest:", &ranked[..5]);
    show("lowest:", &ranked[ranked.len() - 5..]);
    Ok(())
}
