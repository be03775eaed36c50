//! Turn scored rankings into DPO preference pairs and write the JSONL file
//! together with its sidecar manifest.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pex::consistency::adjusted_from_parts;
use pex::prefs::{build_dataset, emit_dataset, manifest_path, RankedExample, SelectionPolicy};
use pex::prompting::{Label, PromptVariant};
use pex::sampler::{rank, Explanation, ScoreRecord};

fn ranked(rng: &mut ChaCha8Rng, review: usize) -> pex::Result<Vec<Explanation>> {
    let xs = (0..80)
        .map(|i| Explanation {
            review_id: format!("review-{review}"),
            answer: Label::Truthful,
            explanation: format!("candidate {i} for review {review}"),
            temperature: if i < 40 { 1.0 } else { 1.2 },
            seed: i as u64,
            stage: i / 40,
            sample_index: i,
            truncated: false,
            score: Some(ScoreRecord::new(
                &adjusted_from_parts(rng.gen_range(-3.0..5.0), 0.0, PromptVariant::Analysis),
                "demo".into(),
                0,
            )),
        })
        .collect();
    rank(xs)
}

fn main() -> pex::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let examples = (0..6)
        .map(|r| {
            Ok(RankedExample {
                prompt: format!("prompt for review {r}"),
                ranked: ranked(&mut rng, r)?,
            })
        })
        .collect::<pex::Result<Vec<_>>>()?;

    let dir = std::env::temp_dir().join("pex-preference-example");
    for (name, policy) in [
        ("hotel", SelectionPolicy::tripadvisor(1)),
        ("product", SelectionPolicy::amazon(1)),
    ] {
        let (pairs, summary) = build_dataset(&examples, &policy)?;
        let path = dir.join(format!("prefs-{name}.jsonl"));
        let manifest = emit_dataset(
            &path,
            &pairs,
            &policy,
            summary.examples,
            vec!["demo".into()],
        )?;
        println!(
            "fraction {:.2}, up to {} pairs each: {} pairs from {} examples -> {}",
            policy.fraction,
            policy.pairs_per_example,
            manifest.count,
            summary.examples,
            path.display()
        );
        if let Some(p) = pairs.first() {
            println!(
                "  first pair: {:+.2} over {:+.2}",
                p.chosen_score, p.rejected_score
            );
        }
        println!("  manifest at {}", manifest_path(&path).display());
    }
    Ok(())
}
