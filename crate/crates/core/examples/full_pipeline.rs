//! Lay out a toy run directory and execute every pipeline stage, exactly as
//! `pex toy-init` followed by `pex all` would.
//!
//! Pass a directory to keep the run; by default a fresh temporary one is used.
//! Stages whose inputs and parameters are unchanged are skipped on a rerun.

use pex::pipeline::{init_toy, Outcome, ToyInit};

fn main() -> pex::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("pex-run-{}", std::process::id())));
    let mut init = ToyInit::new(7);
    init.size = 120;
    let run = init_toy(&dir, &init, true)?;
    for (step, outcome) in run.execute_all(false)? {
        match outcome {
            Outcome::Ran(summary) => println!("{}: {summary}", step.name()),
            Outcome::Skipped => println!("{}: up to date", step.name()),
        }
    }
    for table in ["report/prompt_variants.csv", "report/simulation.csv"] {
        let text = std::fs::read_to_string(run.path(table)).unwrap_or_default();
        println!("\n{table}\n{text}");
    }
    println!("run directory: {}", dir.display());
    Ok(())
}
