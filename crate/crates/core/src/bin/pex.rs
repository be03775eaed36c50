use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pex::consistency::ScoreVariant;
use pex::datasets::Format;
use pex::pipeline::{init_toy, Outcome, Run, Step, ToyInit};
use pex::prompting::PromptVariant;
use pex::sampler::Stage;
use pex::{Error, Result};

/// Prediction-explanation consistency pipeline over a run directory.
#[derive(Parser)]
#[command(name = "pex", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run directory holding config.json, manifest.json and stage outputs.
    #[arg(long, global = true, default_value = ".")]
    run_dir: PathBuf,
    /// Configuration file; defaults to <run-dir>/config.json.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for stage-internal parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Re-run stages even when the manifest says they are up to date.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Read the raw corpus into data/corpus.jsonl.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_parser = parse_format)]
        format: Option<Format>,
        #[arg(long)]
        id_col: Option<String>,
        #[arg(long)]
        text_col: Option<String>,
        #[arg(long)]
        label_col: Option<String>,
    },
    /// Assign train/validation/test splits.
    Split {
        /// Three comma-separated fractions, e.g. 0.6,0.2,0.2.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        min_words: Option<usize>,
        #[arg(long)]
        per_class_cap: Option<usize>,
    },
    /// Sample explanations of the teacher's answers on training reviews.
    Sample {
        /// Samples drawn at each temperature stage, e.g. 40,40.
        #[arg(long, value_delimiter = ',')]
        samples_per_stage: Option<Vec<usize>>,
        /// Temperature of each stage, e.g. 1.0,1.2.
        #[arg(long, value_delimiter = ',')]
        temperatures: Option<Vec<f64>>,
        #[arg(long)]
        max_tokens: Option<usize>,
        #[arg(long)]
        max_reviews: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score sampled explanations.
    Score {
        /// sequence or adjusted.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<ScoreVariant>,
        /// analysis, V1, V2 or V3.
        #[arg(long, value_parser = parse_prompt_variant)]
        prompt_variant: Option<PromptVariant>,
    },
    /// Rank scored explanations per (review, answer).
    Rank,
    /// Build the DPO preference dataset.
    BuildPrefs {
        /// Fraction of each ranking in the top and bottom pools.
        #[arg(long = "p")]
        p: Option<f64>,
        /// Maximum pairs per example.
        #[arg(long)]
        pairs: Option<usize>,
        /// Keep only pairs with chosen > 0 > rejected.
        #[arg(long, conflicts_with = "no_zero_straddle")]
        zero_straddle: bool,
        #[arg(long)]
        no_zero_straddle: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// DPO-train the toy teacher on the preference pairs.
    TrainToy {
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Simulatability evaluation of PredOnly, SFT and DPO teachers.
    EvalSim {
        /// Comma-separated student training-set sizes.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        passes: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Distribution summaries, prompt-variant correlations and significance tests.
    Stats {
        #[arg(long)]
        level: Option<f64>,
        #[arg(long)]
        resamples: Option<usize>,
    },
    /// Render report/report.html and CSV tables.
    Report,
    /// Run every stage in order.
    All,
    /// Create a toy run directory with a synthetic corpus and checkpoints.
    ToyInit {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        size: usize,
    },
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    match s {
        "csv" => Ok(Format::Csv),
        "jsonl" => Ok(Format::Jsonl),
        other => Err(format!("unknown format {other:?}")),
    }
}

fn parse_variant(s: &str) -> std::result::Result<ScoreVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_prompt_variant(s: &str) -> std::result::Result<PromptVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn open_run(g: &Global) -> Result<Run> {
    let mut run = match &g.config {
        Some(path) => {
            let config = pex::io::read_json(path)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            Run::new(&g.run_dir, config)?
        }
        None => Run::open(&g.run_dir)?,
    };
    if let Some(j) = g.jobs {
        run.config.jobs = j;
    }
    Ok(run)
}

fn apply(run: &mut Run, command: &Command) -> Result<Option<Step>> {
    let c = &mut run.config;
    let step = match command {
        Command::Ingest {
            input,
            format,
            id_col,
            text_col,
            label_col,
        } => {
            if let Some(p) = input {
                c.corpus.path = p.clone();
            }
            if format.is_some() {
                c.corpus.format = *format;
            }
            if let Some(v) = id_col {
                c.corpus.schema.id = v.clone();
            }
            if let Some(v) = text_col {
                c.corpus.schema.text = v.clone();
            }
            if let Some(v) = label_col {
                c.corpus.schema.label = v.clone();
            }
            Step::Ingest
        }
        Command::Split {
            fractions,
            seed,
            min_words,
            per_class_cap,
        } => {
            if let Some(f) = fractions {
                if f.len() != 3 {
                    return Err(Error::Config(format!(
                        "--fractions takes 3 values, got {}",
                        f.len()
                    )));
                }
                c.split.train = f[0];
                c.split.validation = f[1];
                c.split.test = f[2];
            }
            if let Some(s) = seed {
                c.split.seed = *s;
            }
            if let Some(m) = min_words {
                c.split.min_words = *m;
            }
            if per_class_cap.is_some() {
                c.split.per_class_cap = *per_class_cap;
            }
            Step::Split
        }
        Command::Sample {
            samples_per_stage,
            temperatures,
            max_tokens,
            max_reviews,
            seed,
        } => {
            let schedule = &mut c.sampling.schedule;
            match (samples_per_stage, temperatures) {
                (Some(counts), Some(temps)) => {
                    if counts.len() != temps.len() {
                        return Err(Error::Config(format!(
                            "{} stage counts but {} temperatures",
                            counts.len(),
                            temps.len()
                        )));
                    }
                    schedule.stages = counts
                        .iter()
                        .zip(temps)
                        .map(|(&count, &temperature)| Stage { count, temperature })
                        .collect();
                }
                (Some(counts), None) => {
                    if counts.len() != schedule.stages.len() {
                        return Err(Error::Config(
                            "--samples-per-stage changes the number of stages; pass --temperatures too"
                                .into(),
                        ));
                    }
                    for (s, &n) in schedule.stages.iter_mut().zip(counts) {
                        s.count = n;
                    }
                }
                (None, Some(temps)) => {
                    if temps.len() != schedule.stages.len() {
                        return Err(Error::Config(
                            "--temperatures changes the number of stages; pass --samples-per-stage too"
                                .into(),
                        ));
                    }
                    for (s, &t) in schedule.stages.iter_mut().zip(temps) {
                        s.temperature = t;
                    }
                }
                (None, None) => {}
            }
            if let Some(m) = max_tokens {
                schedule.max_tokens = *m;
            }
            if let Some(s) = seed {
                schedule.base_seed = *s;
            }
            if max_reviews.is_some() {
                c.sampling.max_reviews = *max_reviews;
            }
            Step::Sample
        }
        Command::Score {
            variant,
            prompt_variant,
        } => {
            if let Some(v) = variant {
                c.scoring.variant = *v;
            }
            if let Some(v) = prompt_variant {
                c.scoring.prompt_variant = *v;
            }
            Step::Score
        }
        Command::Rank => Step::Rank,
        Command::BuildPrefs {
            p,
            pairs,
            zero_straddle,
            no_zero_straddle,
            seed,
        } => {
            if let Some(p) = p {
                c.selection.fraction = *p;
            }
            if let Some(n) = pairs {
                c.selection.pairs_per_example = *n;
            }
            if *zero_straddle {
                c.selection.zero_straddle = true;
            }
            if *no_zero_straddle {
                c.selection.zero_straddle = false;
            }
            if let Some(s) = seed {
                c.selection.seed = *s;
            }
            Step::BuildPrefs
        }
        Command::TrainToy { beta, lr, epochs } => {
            if let Some(b) = beta {
                c.dpo.beta = *b;
            }
            if let Some(l) = lr {
                c.dpo.lr = *l;
            }
            if let Some(e) = epochs {
                c.dpo.epochs = *e;
            }
            Step::TrainToy
        }
        Command::EvalSim { k, passes, epochs } => {
            if let Some(k) = k {
                c.sim.ks = k.clone();
            }
            if let Some(p) = passes {
                c.sim.passes = *p;
            }
            if epochs.is_some() {
                c.sim.epochs = *epochs;
            }
            Step::EvalSim
        }
        Command::Stats { level, resamples } => {
            if let Some(l) = level {
                c.stats.level = *l;
            }
            if let Some(r) = resamples {
                c.stats.resamples = *r;
            }
            Step::Stats
        }
        Command::Report => Step::Report,
        Command::All | Command::ToyInit { .. } => return Ok(None),
    };
    c.validate()?;
    Ok(Some(step))
}

fn report(step: Step, outcome: &Outcome) {
    match outcome {
        Outcome::Ran(summary) => println!("{step}: {summary}"),
        Outcome::Skipped => println!("{step}: up to date"),
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Command::ToyInit { seed, size } = cli.command {
        let mut init = ToyInit::new(seed);
        init.size = size;
        let run = init_toy(&cli.global.run_dir, &init, cli.global.force)?;
        println!("toy-init: wrote {}", run.dir.join("config.json").display());
        return Ok(());
    }
    let mut run = open_run(&cli.global)?;
    match apply(&mut run, &cli.command)? {
        Some(step) => report(step, &run.execute(step, cli.global.force)?),
        None => {
            for step in Step::ALL {
                report(step, &run.execute(step, cli.global.force)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let diagnostic = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{diagnostic}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
