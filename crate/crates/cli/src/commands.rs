//! The analysis subcommands. Each writes its CSV (and any artifacts) under
//! the configured output directory.

use std::fmt::Write as _;
use std::fs;

use llmreward_core::eval::{
    data_efficiency_sweep, labeling_accuracy, prompt_variants, prompt_variation_suite,
    qualitative_csv, qualitative_table, EvalSet, LabelingReport,
};
use llmreward_core::judge::{EnvTag, LlmJudge, MockOracle, Objective, SlConfig};
use llmreward_core::negotiation::{NegotiationStyle, QualitativeMetrics};

use crate::client::{ClientStats, LlmClient};
use crate::config::{BackendKind, ExperimentConfig, JudgeKind};
use crate::results::{csv_text, float};
use crate::runner::{self, build_client, build_judge, eval_episodes, io_err, sl_examples, train_sl, RunError};

fn write(config: &ExperimentConfig, name: &str, text: &str) -> Result<(), RunError> {
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join(name);
    fs::write(&path, text).map_err(io_err(&path))
}

fn report_fields(r: &LabelingReport) -> [String; 6] {
    [
        r.n.to_string(),
        r.correct.to_string(),
        r.unparseable.to_string(),
        r.unavailable.to_string(),
        float(Some(r.accuracy)),
        float(r.parseable_accuracy),
    ]
}

fn client_if_llm(config: &ExperimentConfig, objective: Objective) -> Result<Option<LlmClient>, RunError> {
    match config.judge.kind {
        JudgeKind::Llm => Some(build_client(config, objective)).transpose(),
        _ => Ok(None),
    }
}

/// Judge-only labeling accuracy on the evaluation set, per seed.
pub fn label_eval(config: &ExperimentConfig) -> Result<Vec<(u64, LabelingReport)>, RunError> {
    let client = client_if_llm(config, config.objective)?;
    let set = eval_episodes(config, config.objective)?.set;
    let mut rows = Vec::new();
    let mut csv_rows = Vec::new();
    for &seed in &config.seeds {
        let built = build_judge(config, config.objective, client.as_ref(), seed)?;
        let r = labeling_accuracy(&built.judge, &set).map_err(|e| RunError::Eval(format!("seed {seed}: {e}")))?;
        let mut f = vec![seed.to_string(), config.objective.to_string(), built.label];
        f.extend(report_fields(&r));
        csv_rows.push(f);
        rows.push((seed, r));
    }
    write(config, "labeling.csv", &csv_text("seed,objective,judge,n,correct,unparseable,unavailable,accuracy,parseable_accuracy", csv_rows))?;
    if let Some(c) = &client {
        runner::write_manifest(&config.output_dir, c)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlRow {
    pub seed: u64,
    pub examples: usize,
    pub labeling_accuracy: f64,
}

/// Trains the supervised judge per seed, saves it and reports its labeling
/// accuracy on the evaluation set.
pub fn train_sl_judges(config: &ExperimentConfig) -> Result<Vec<SlRow>, RunError> {
    if config.env() == EnvTag::Matrix {
        return Err(RunError::Eval("matrix objectives have no supervised judge".into()));
    }
    let set = eval_episodes(config, config.objective)?.set;
    let examples = config.sl.examples.unwrap_or(10);
    let dir = config.output_dir.join("checkpoints");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let judge = train_sl(config, &config.objective, seed)?;
        let path = dir.join(format!("sl-seed-{seed}.bin"));
        fs::write(&path, judge.encode()).map_err(io_err(&path))?;
        let acc = labeling_accuracy(&judge, &set).map_err(|e| RunError::Eval(e.to_string()))?.accuracy;
        rows.push(SlRow { seed, examples, labeling_accuracy: acc });
    }
    let csv = csv_text(
        "seed,objective,examples,labeling_accuracy",
        rows.iter().map(|r| vec![r.seed.to_string(), config.objective.to_string(), r.examples.to_string(), float(Some(r.labeling_accuracy))]),
    );
    write(config, "sl.csv", &csv)?;
    Ok(rows)
}

/// Labeling accuracy of a mock LLM judge at the reference noise, the
/// comparison line of the data-efficiency sweep.
fn reference_accuracy(config: &ExperimentConfig, set: &EvalSet) -> Result<f64, RunError> {
    let oracle = MockOracle::new(config.objective, config.sweep.reference_noise, config.judge.mock_seed)
        .map_err(|e| RunError::Eval(e.message))?;
    let template = runner::template_for(config, &config.objective)?;
    let judge = LlmJudge::new(config.objective, template, &oracle).map_err(|e| RunError::Eval(e.to_string()))?;
    Ok(labeling_accuracy(&judge, set).map_err(|e| RunError::Eval(e.to_string()))?.accuracy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// `(extra examples, seed, accuracy)`, one per size and seed.
    pub rows: Vec<(usize, u64, f64)>,
    pub skipped: Vec<usize>,
    pub reference: f64,
}

/// Supervised-judge accuracy as oracle-labeled examples are added.
pub fn sweep_data(config: &ExperimentConfig) -> Result<SweepOutput, RunError> {
    if config.env() == EnvTag::Matrix {
        return Err(RunError::Eval("matrix objectives have no supervised judge".into()));
    }
    let set = eval_episodes(config, config.objective)?.set;
    let base = sl_examples(&config.objective, config.sweep.base_examples, config.template.example_seed)?;
    let sl = SlConfig { epochs: config.sl.epochs, lr: config.sl.lr, seed: 0, recurrent: config.sl.recurrent, heldout: Vec::new() };
    let report = data_efficiency_sweep(&base, &config.sweep.sizes, &set, &config.seeds, &sl)
        .map_err(|e| RunError::Eval(e.to_string()))?;
    let reference = reference_accuracy(config, &set)?;
    let mut rows = Vec::new();
    for r in &report.rows {
        for (&seed, &acc) in config.seeds.iter().zip(&r.accuracies) {
            rows.push((r.extra, seed, acc));
        }
    }
    write(
        config,
        "sweep.csv",
        &csv_text("extra_examples,seed,labeling_accuracy", rows.iter().map(|(k, s, a)| vec![k.to_string(), s.to_string(), float(Some(*a))])),
    )?;
    let mut summary = String::new();
    let _ = writeln!(summary, "objective: {}", config.objective);
    let _ = writeln!(summary, "base examples: {}", config.sweep.base_examples);
    let _ = writeln!(summary, "reference (mock LLM judge, noise {}): {reference:.6}", config.sweep.reference_noise);
    for r in &report.rows {
        let _ = writeln!(summary, "extra {}: {:.6} +- {:.6}", r.extra, r.mean, r.std);
    }
    let crossing = report.rows.iter().find(|r| r.mean >= reference).map(|r| r.extra);
    let _ = writeln!(summary, "smallest size reaching the reference: {}", crossing.map_or("none".into(), |k| k.to_string()));
    if !report.skipped.is_empty() {
        let _ = writeln!(summary, "skipped sizes (no balanced batch): {:?}", report.skipped);
    }
    write(config, "sweep-summary.txt", &summary)?;
    Ok(SweepOutput { rows, skipped: report.skipped, reference })
}

/// Builds a client for the variation suite; a remote backend without a
/// token falls back to answering from the cache alone.
fn suite_client(config: &ExperimentConfig) -> Result<LlmClient, RunError> {
    match build_client(config, config.objective) {
        Err(RunError::Client(crate::client::ClientError::Config(msg))) if config.judge.backend == BackendKind::Remote => {
            eprintln!("warning: {msg}; answering from the cache only");
            runner::cache_only_client(config)
        }
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutput {
    pub variant: String,
    pub seed: u64,
    pub report: LabelingReport,
}

/// Labeling accuracy of every one-factor prompt variant for the configured
/// negotiation style.
pub fn vary_prompt(config: &ExperimentConfig) -> Result<Vec<VariantOutput>, RunError> {
    let Objective::Negotiation(style) = config.objective else {
        return Err(RunError::Eval("vary-prompt needs a negotiation objective".into()));
    };
    let client = suite_client(config)?;
    let set = eval_episodes(config, config.objective)?.set;
    let rows = prompt_variation_suite(style, &prompt_variants(), &set, &config.seeds, || &client)
        .map_err(|e| RunError::Eval(e.to_string()))?;
    let out: Vec<VariantOutput> =
        rows.into_iter().map(|r| VariantOutput { variant: r.variant, seed: r.seed, report: r.report }).collect();
    let csv = csv_text(
        "variant,seed,n,correct,unparseable,unavailable,accuracy,parseable_accuracy",
        out.iter().map(|r| {
            let mut f = vec![r.variant.clone(), r.seed.to_string()];
            f.extend(report_fields(&r.report));
            f
        }),
    );
    write(config, "prompt-variants.csv", &csv)?;
    runner::write_manifest(&config.output_dir, &client)?;
    let missing: usize = out.iter().map(|r| r.report.unavailable).sum();
    if missing > 0 {
        eprintln!("warning: {missing} judgments were unavailable and are left out of the accuracies");
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarmReport {
    pub prompts: usize,
    pub failed: usize,
    pub stats: ClientStats,
}

/// Asks the backend, in batches, for every judgment on the evaluation set.
pub fn warm_cache(config: &ExperimentConfig) -> Result<WarmReport, RunError> {
    let client = build_client(config, config.objective)?;
    let set = eval_episodes(config, config.objective)?.set;
    let judge = LlmJudge::new(config.objective, runner::template_for(config, &config.objective)?, &client)
        .map_err(|e| RunError::Eval(e.to_string()))?;
    let mut prompts: Vec<String> =
        set.items.iter().map(|i| judge.prompt(&i.record)).collect::<Result<_, _>>().map_err(|e| RunError::Eval(e.to_string()))?;
    prompts.sort();
    prompts.dedup();
    let report = client.complete_prompts(&prompts)?;
    let failed = report.results.len() - report.succeeded();
    for (i, e) in report.errors().take(5) {
        eprintln!("warning: prompt {i}: {e}");
    }
    runner::write_manifest(&config.output_dir, &client)?;
    Ok(WarmReport { prompts: prompts.len(), failed, stats: client.stats() })
}

/// Trains and evaluates every negotiation style and writes the
/// advantage/diversity/agreement table.
pub fn emit_table(config: &ExperimentConfig) -> Result<String, RunError> {
    if config.env() != EnvTag::Negotiation {
        return Err(RunError::Eval("emit-table needs a negotiation objective".into()));
    }
    let mut per_style: Vec<(NegotiationStyle, Vec<QualitativeMetrics>)> = Vec::new();
    for style in NegotiationStyle::ALL {
        let mut c = config.clone();
        c.objective = Objective::Negotiation(style);
        // Settings tied to the configured style's prompt do not carry over.
        c.template.file = None;
        c.template.keyword = None;
        let digest = c.digest()?;
        let client = client_if_llm(&c, c.objective)?;
        let episodes = eval_episodes(&c, c.objective)?;
        let dir = config.output_dir.join("checkpoints").join(style.to_string());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut metrics = Vec::new();
        for &seed in &c.seeds {
            let row = runner::run_seed(&c, &digest, &episodes, client.as_ref(), seed, Some(&dir))?;
            metrics.push(QualitativeMetrics {
                advantage: row.advantage.unwrap_or(f64::NAN),
                diversity: row.diversity.unwrap_or(f64::NAN),
                agreement_rate: row.agreement_rate.unwrap_or(f64::NAN),
            });
        }
        per_style.push((style, metrics));
    }
    let csv = qualitative_csv(&qualitative_table(&per_style));
    write(config, "table.csv", &csv)?;
    Ok(csv)
}
