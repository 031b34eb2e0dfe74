use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use llmreward::commands;
use llmreward::config::{BackendKind, ExperimentConfig, Overrides};
use llmreward::runner::{self, RunError};

#[derive(Parser)]
#[command(name = "llmreward", version, about = "Train and evaluate agents rewarded by a prompted language model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Completion backend; implies an LLM judge.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Completion endpoint URL for the remote backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Leave the task description out of the prompt.
    #[arg(long)]
    no_rho1: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every seed.
    Run(Common),
    /// Judge-only labeling accuracy on the evaluation set.
    LabelEval(Common),
    /// Train the supervised baseline judge.
    TrainSl(Common),
    /// Supervised-judge accuracy as labeled examples are added.
    SweepData(Common),
    /// Labeling accuracy under one-factor prompt variations.
    VaryPrompt(Common),
    /// Precompute and cache every judgment on the evaluation set.
    WarmCache(Common),
    /// Advantage/diversity/agreement table over the four negotiation styles.
    EmitTable(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig, RunError> {
    let overrides = Overrides {
        seed: c.seed,
        out: c.out.clone(),
        backend: c.backend,
        endpoint: c.endpoint.clone(),
        no_rho1: c.no_rho1,
    };
    Ok(ExperimentConfig::load(&c.config, &overrides)?)
}

fn execute(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::Run(c) => {
            let config = load(&c)?;
            let out = runner::run(&config)?;
            for r in &out.rows {
                let acc = r.agent_accuracy.map_or("NA".into(), |a| format!("{a:.3}"));
                let lab = r.labeling_accuracy.map_or("NA".into(), |a| format!("{a:.3}"));
                println!("seed {}: agent accuracy {acc}, labeling accuracy {lab}", r.seed);
            }
            println!("results written to {}", config.output_dir.display());
        }
        Command::LabelEval(c) => {
            let config = load(&c)?;
            for (seed, r) in commands::label_eval(&config)? {
                println!("seed {seed}: accuracy {:.3} ({} of {}, {} unparseable)", r.accuracy, r.correct, r.n, r.unparseable);
            }
        }
        Command::TrainSl(c) => {
            let config = load(&c)?;
            for r in commands::train_sl_judges(&config)? {
                println!("seed {}: {} examples, labeling accuracy {:.3}", r.seed, r.examples, r.labeling_accuracy);
            }
        }
        Command::SweepData(c) => {
            let config = load(&c)?;
            let s = commands::sweep_data(&config)?;
            println!("{} rows, reference accuracy {:.3}", s.rows.len(), s.reference);
            if !s.skipped.is_empty() {
                println!("skipped sizes: {:?}", s.skipped);
            }
        }
        Command::VaryPrompt(c) => {
            let config = load(&c)?;
            for r in commands::vary_prompt(&config)? {
                println!("{} seed {}: accuracy {:.3}", r.variant, r.seed, r.report.accuracy);
            }
        }
        Command::WarmCache(c) => {
            let config = load(&c)?;
            let w = commands::warm_cache(&config)?;
            println!(
                "{} prompts, {} failed; {} backend calls, {} cache hits",
                w.prompts, w.failed, w.stats.backend_calls, w.stats.cache_hits
            );
            if w.failed > 0 {
                return Err(RunError::Eval(format!("{} prompts could not be completed", w.failed)));
            }
        }
        Command::EmitTable(c) => {
            let config = load(&c)?;
            print!("{}", commands::emit_table(&config)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                RunError::JudgeUnavailable { .. } => ExitCode::from(3),
                RunError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
