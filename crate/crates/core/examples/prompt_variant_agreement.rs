//! How much does the consistency ranking depend on the wording of the
//! posterior prompt? Explanations are scored under every prompt variant and
//! each alternative ranking is compared with the default one by Kendall's
//! tau, with a paired bootstrap interval.

use pex::backend::sample;
use pex::consistency::pex_adjusted;
use pex::prompting::render_explain_prompt;
use pex::prompting::{Label, PromptVariant, TaskSpec};
use pex::stats::{bootstrap_ci, kendall_tau, BootstrapConfig};
use pex::toy::{generate_corpus, pretrain_base, CorpusSpec, PretrainSpec};

fn main() -> pex::Result<()> {
    let task = TaskSpec::hotel().zero_shot();
    let corpus = generate_corpus(&CorpusSpec::new(24, 4));
    let base = pretrain_base(&corpus, &task, &PretrainSpec::new(4))?;

    let mut items = Vec::new();
    for (i, r) in corpus.iter().enumerate() {
        let answer = if i % 2 == 0 {
            Label::Truthful
        } else {
            Label::Deceptive
        };
        let prompt = render_explain_prompt(&task, &r.text, answer);
        for j in 0..4 {
            let e = sample(&base, &prompt, 1.0, (i * 4 + j) as u64, 16)?.text;
            items.push((r.text.clone(), answer, e));
        }
    }
    let score = |variant: PromptVariant| -> pex::Result<Vec<f64>> {
        items
            .iter()
            .map(|(review, answer, e)| Ok(pex_adjusted(&base, review, *answer, e, variant)?.value))
            .collect()
    };
    let reference = score(PromptVariant::Analysis)?;
    let cfg = BootstrapConfig::new(0.95, 7).with_resamples(2000);
    println!("{} explanations", items.len());
    for variant in [PromptVariant::V1, PromptVariant::V2, PromptVariant::V3] {
        let other = score(variant)?;
        let ci = bootstrap_ci(&reference, &other, kendall_tau, &cfg, 2)?;
        println!(
            "{:<3} tau {:+.3}  95% CI [{:+.3}, {:+.3}]",
            variant.id(),
            kendall_tau(&reference, &other)?,
            ci.lo,
            ci.hi
        );
    }
    Ok(())
}
