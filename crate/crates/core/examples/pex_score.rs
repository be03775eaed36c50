//! Score hand-written explanations against a small tabular model.
//!
//! ```bash
//! cargo run --example pex_score
//! ```

use pex::backend::TabularLm;
use pex::consistency::{pex_adjusted, pex_sequence, prior_logodds};
use pex::prompting::{Label, PromptVariant, TaskSpec};

fn main() -> pex::Result<()> {
    let review = "the concierge found us a table and the pool towels were fresh every morning";
    let lm = TabularLm::builder()
        .question(
            review,
            0.75,
            vec![
                ("it names the concierge and the towels", 0.6),
                ("it reads like an advert", 0.1),
                ("the stay sounds pleasant", 0.3),
            ],
            vec![
                ("it names the concierge and the towels", 0.05),
                ("it reads like an advert", 0.65),
                ("the stay sounds pleasant", 0.3),
            ],
        )
        .build()?;

    let task = TaskSpec::hotel().zero_shot();
    println!(
        "prior log-odds for Truthful: {:+.3}",
        prior_logodds(&lm, review, Label::Truthful)?
    );
    println!(
        "{:<40} {:>9} {:>9}  verdict",
        "explanation", "sequence", "adjusted"
    );
    for q in lm.questions() {
        for e in q.support() {
            let seq = pex_sequence(&lm, &task, review, Label::Truthful, &e)?;
            let adj = pex_adjusted(&lm, review, Label::Truthful, &e, PromptVariant::Analysis)?;
            println!(
                "{e:<40} {:>+9.3} {:>+9.3}  {:?}",
                seq.value,
                adj.value,
                adj.verdict()?
            );
        }
    }
    Ok(())
}
