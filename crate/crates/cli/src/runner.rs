//! Train-and-evaluate runs driven by an [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use llmreward_core::eval::{labeling_accuracy, negotiation_metrics, style_accuracy, EvalSet, ULTIMATUM_EVAL_SIZE};
use llmreward_core::judge::{
    default_template, example_pool, select_examples, train_sl_judge, ExampleBalance, GroundTruthJudge, Judge,
    LabeledExample, LlmJudge, MockOracle, MockScript, Objective, PromptTemplate, SlConfig, SlJudge,
};
use llmreward_core::matrix::{scramble, MatrixGame};
use llmreward_core::negotiation::{sample_context, NegotiationContext, RuleBasedPartner, DEFAULT_MAX_REJECTIONS};
use llmreward_core::rl::{
    dqn_train, evaluate_matrix, evaluate_negotiation, evaluate_ultimatum, reinforce_train, MatrixTask, PolicySnapshot,
    TrainError, TrainReport, UltimatumTask,
};
use llmreward_core::seed::{derive, rng};
use sha2::{Digest, Sha256};

use crate::client::{Backend, ClientError, ClientStats, LlmClient, RemoteEndpoint, RequestDefaults, ResponseCache, RetryPolicy};
use crate::config::{BackendKind, ConfigError, ExperimentConfig, JudgeKind, LabelingSource};
use crate::results::{ResultRow, RESULTS_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("seed {seed}: judge unavailable at step {step}: {message}; state saved to {checkpoint}, rerun to resume")]
    JudgeUnavailable { seed: u64, step: u64, message: String, checkpoint: PathBuf },
    #[error("seed {seed}: {source}")]
    Train { seed: u64, source: TrainError },
    #[error("{0}")]
    Eval(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

fn eval_err(e: impl std::fmt::Display) -> RunError {
    RunError::Eval(e.to_string())
}

/// Builds the completion client the config asks for, judging `objective`.
pub fn build_client(config: &ExperimentConfig, objective: Objective) -> Result<LlmClient, RunError> {
    let llm = &config.llm;
    let mut defaults = request_defaults(config);
    // Mocks answer under their own model name, so their responses never
    // mix with a real model's (or another mock's) in a shared cache.
    let backend = match config.judge.backend {
        BackendKind::Remote => {
            let url = config.judge.endpoint.clone().ok_or_else(|| ClientError::Config("no endpoint configured".into()))?;
            let mut r = RemoteEndpoint::from_env(url)?;
            r.retry = RetryPolicy { attempts: llm.retry_attempts.max(1), base_delay: Duration::from_millis(llm.retry_base_ms), ..RetryPolicy::default() };
            r.timeout = Duration::from_secs(llm.timeout_secs.max(1));
            Backend::Remote(r)
        }
        BackendKind::MockOracle => {
            let j = &config.judge;
            defaults.model = format!("mock-oracle/{objective}/noise={}/seed={}", j.noise, j.mock_seed);
            Backend::MockOracle(MockOracle::new(objective, j.noise, j.mock_seed).map_err(|e| ClientError::Config(e.message))?)
        }
        BackendKind::MockScript => {
            let path = config.judge.script.as_ref().ok_or_else(|| ClientError::Config("no script configured".into()))?;
            let bytes = fs::read(path).map_err(io_err(path))?;
            let table: BTreeMap<String, String> = serde_json::from_slice(&bytes)
                .map_err(|e| ClientError::Config(format!("{}: not a JSON object of strings: {e}", path.display())))?;
            defaults.model = format!("mock-script/{}", &hex::encode(Sha256::digest(&bytes))[..16]);
            let mut s = MockScript::new(table);
            if let Some(f) = &config.judge.script_fallback {
                s = s.with_fallback(f.clone());
            }
            Backend::MockScript(s)
        }
    };
    Ok(LlmClient::new(backend, open_cache(config)?, defaults))
}

fn request_defaults(config: &ExperimentConfig) -> RequestDefaults {
    let llm = &config.llm;
    RequestDefaults {
        model: llm.model.clone(),
        temperature: llm.temperature,
        max_tokens: llm.max_tokens,
        stop: llm.stop.clone(),
        batch_size: llm.batch_size,
    }
}

fn open_cache(config: &ExperimentConfig) -> Result<ResponseCache, RunError> {
    Ok(match &config.llm.cache {
        Some(p) => ResponseCache::open(p).map_err(ClientError::from)?,
        None => ResponseCache::in_memory(),
    })
}

/// A remote client that answers from the cache alone, for when no token is
/// available.
pub fn cache_only_client(config: &ExperimentConfig) -> Result<LlmClient, RunError> {
    let url = config.judge.endpoint.clone().unwrap_or_default();
    let token = std::env::var(crate::client::API_KEY_VAR).unwrap_or_default();
    Ok(LlmClient::new(Backend::Remote(RemoteEndpoint::with_token(url, token)), open_cache(config)?, request_defaults(config))
        .offline(true))
}

/// The prompt template for `objective`: the configured file when it applies,
/// else the built-in one.
pub fn template_for(config: &ExperimentConfig, objective: &Objective) -> Result<PromptTemplate, RunError> {
    match &config.template.file {
        Some(path) if *objective == config.objective => {
            let bytes = fs::read(path).map_err(io_err(path))?;
            let t: PromptTemplate = serde_json::from_slice(&bytes).map_err(|e| {
                RunError::Config(ConfigError::Invalid { field: "template.file", message: format!("{}: {e}", path.display()) })
            })?;
            t.validate().map_err(|e| RunError::Config(ConfigError::Invalid { field: "template.file", message: e.to_string() }))?;
            Ok(t)
        }
        _ => default_template(objective, &config.template_settings(objective)).map_err(eval_err),
    }
}

/// Oracle-labeled training examples for the supervised judge.
pub fn sl_examples(objective: &Objective, n: usize, seed: u64) -> Result<Vec<LabeledExample>, RunError> {
    let pool = example_pool(objective, 200.max(4 * n), seed).map_err(eval_err)?;
    Ok(select_examples(&pool, n, ExampleBalance::Counterbalanced)
        .map_err(eval_err)?
        .into_iter()
        .map(|(record, label)| LabeledExample { record, label })
        .collect())
}

pub fn train_sl(config: &ExperimentConfig, objective: &Objective, seed: u64) -> Result<SlJudge, RunError> {
    let n = config.sl.examples.unwrap_or(10);
    let examples = sl_examples(objective, n, seed)?;
    let sl = SlConfig { epochs: config.sl.epochs, lr: config.sl.lr, seed, recurrent: config.sl.recurrent, heldout: Vec::new() };
    let (judge, _) = train_sl_judge(objective.env(), &format!("{objective}:n={n}:seed={seed}"), &examples, &sl).map_err(eval_err)?;
    Ok(judge)
}

/// A judge as configured, plus the label used for it in results.
pub struct BuiltJudge<'c> {
    pub judge: Box<dyn Judge + Send + Sync + 'c>,
    pub label: String,
}

pub fn build_judge<'c>(
    config: &ExperimentConfig,
    objective: Objective,
    client: Option<&'c LlmClient>,
    seed: u64,
) -> Result<BuiltJudge<'c>, RunError> {
    Ok(match config.judge.kind {
        JudgeKind::GroundTruth => {
            let j = GroundTruthJudge::new(objective);
            BuiltJudge { label: j.describe(), judge: Box::new(j) }
        }
        JudgeKind::Sl => {
            let j = train_sl(config, &objective, seed)?;
            BuiltJudge { label: j.describe(), judge: Box::new(j) }
        }
        JudgeKind::Llm => {
            let client = client.ok_or_else(|| ClientError::Config("the LLM judge needs a client".into()))?;
            let j = LlmJudge::new(objective, template_for(config, &objective)?, client).map_err(eval_err)?;
            let label = format!("llm:{}:{}:{}", client.backend().name(), client.defaults().model, &j.template_digest()[..12]);
            BuiltJudge { label, judge: Box::new(j) }
        }
    })
}

/// Episodes the agent is evaluated on, shared by every seed.
pub struct EvalEpisodes {
    pub set: EvalSet,
    pub proposals: Vec<llmreward_core::ultimatum::Proposal>,
    pub games: Vec<MatrixGame>,
    pub contexts: Vec<NegotiationContext>,
}

pub fn eval_episodes(config: &ExperimentConfig, objective: Objective) -> Result<EvalEpisodes, RunError> {
    let seed = config.eval.seed;
    Ok(match objective {
        Objective::Ultimatum(o) => {
            let (proposals, used) = llmreward_core::eval::ultimatum_eval_proposals(seed).map_err(eval_err)?;
            debug_assert_eq!(proposals.len(), ULTIMATUM_EVAL_SIZE);
            let set = EvalSet::ultimatum(o, &proposals, used);
            EvalEpisodes { set, proposals, games: Vec::new(), contexts: Vec::new() }
        }
        Objective::Matrix(c) => {
            let mut games = config.matrix_games()?;
            if config.template.scramble {
                let mut r = rng(derive(seed, "scramble"));
                games = games.iter().map(|g| scramble(g, &mut r)).collect();
            }
            EvalEpisodes { set: EvalSet::matrix(c, &games, seed), proposals: Vec::new(), games, contexts: Vec::new() }
        }
        Objective::Negotiation(style) => {
            let set = EvalSet::negotiation_sample(style, config.eval.dialogues, seed).map_err(eval_err)?;
            let mut r = rng(derive(seed, "eval-contexts"));
            let contexts = (0..config.eval.contexts)
                .map(|_| sample_context(&mut r, DEFAULT_MAX_REJECTIONS))
                .collect::<Result<_, _>>()
                .map_err(eval_err)?;
            EvalEpisodes { set, proposals: Vec::new(), games: Vec::new(), contexts }
        }
    })
}

fn checkpoint_path(dir: &Path, seed: u64, part: Option<usize>, partial: bool) -> PathBuf {
    let mut name = format!("seed-{seed}");
    if let Some(p) = part {
        let _ = write!(name, "-game{p}");
    }
    if partial {
        name.push_str(".partial");
    }
    dir.join(format!("{name}.lrps"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Turns a training failure into a run error, saving resumable state first.
fn train_failure(e: TrainError, seed: u64, partial: &Path) -> RunError {
    match e {
        TrainError::JudgeUnavailable { step, message, checkpoint } => match write_atomic(partial, &checkpoint.encode()) {
            Ok(()) => RunError::JudgeUnavailable { seed, step, message, checkpoint: partial.to_path_buf() },
            Err(io) => io,
        },
        source => RunError::Train { seed, source },
    }
}

struct Labeling {
    accuracy: Option<f64>,
    parseable: Option<f64>,
    unparseable: u64,
}

fn stream_labeling(reports: &[TrainReport]) -> Labeling {
    let (judged, correct, skipped) =
        reports.iter().fold((0, 0, 0), |(j, c, s), r| (j + r.judged, c + r.judged_correct, s + r.skipped));
    Labeling {
        accuracy: (judged + skipped > 0).then(|| correct as f64 / (judged + skipped) as f64),
        parseable: (judged > 0).then(|| correct as f64 / judged as f64),
        unparseable: skipped,
    }
}

/// Trains and evaluates one seed. Checkpoints go to `checkpoints` when given.
pub fn run_seed(
    config: &ExperimentConfig,
    digest: &str,
    episodes: &EvalEpisodes,
    client: Option<&LlmClient>,
    seed: u64,
    checkpoints: Option<&Path>,
) -> Result<ResultRow, RunError> {
    let objective = config.objective;
    let built = build_judge(config, objective, client, seed)?;
    let judge = &*built.judge;
    let scratch;
    let dir = match checkpoints {
        Some(d) => d,
        None => {
            scratch = std::env::temp_dir();
            scratch.as_path()
        }
    };
    let mut row = ResultRow::new(seed, objective, built.label.clone(), digest.to_string());
    let mut reports = Vec::new();
    match objective {
        Objective::Ultimatum(o) => {
            let partial = checkpoint_path(dir, seed, None, true);
            let mut task = UltimatumTask::new(episodes.proposals.clone(), judge, Some(objective))
                .map_err(|source| RunError::Train { seed, source })?;
            let (snapshot, report) = dqn_train(&mut task, &config.dqn_config()?, seed).map_err(|e| train_failure(e, seed, &partial))?;
            row.agent_accuracy = Some(evaluate_ultimatum(&snapshot, o, &episodes.proposals).map_err(|source| RunError::Train { seed, source })?);
            save(checkpoints, &checkpoint_path(dir, seed, None, false), &partial, &snapshot)?;
            reports.push(report);
        }
        Objective::Matrix(c) => {
            let mut total = 0.0;
            for (i, game) in episodes.games.iter().enumerate() {
                let partial = checkpoint_path(dir, seed, Some(i), true);
                let mut task =
                    MatrixTask::new(game.clone(), judge, Some(objective)).map_err(|source| RunError::Train { seed, source })?;
                let (snapshot, report) =
                    dqn_train(&mut task, &config.dqn_config()?, seed).map_err(|e| train_failure(e, seed, &partial))?;
                total += evaluate_matrix(&snapshot, c, game).map_err(|source| RunError::Train { seed, source })?;
                save(checkpoints, &checkpoint_path(dir, seed, Some(i), false), &partial, &snapshot)?;
                reports.push(report);
            }
            row.agent_accuracy = Some(total / episodes.games.len().max(1) as f64);
        }
        Objective::Negotiation(style) => {
            let partial = checkpoint_path(dir, seed, None, true);
            let resume = match checkpoints.map(|_| &partial).filter(|p| p.is_file()) {
                Some(p) => Some(PolicySnapshot::decode(&fs::read(p).map_err(io_err(p))?).map_err(|source| RunError::Train { seed, source })?),
                None => None,
            };
            let bob = RuleBasedPartner::default();
            let (snapshot, report) = reinforce_train(judge, &bob, &config.reinforce, seed, Some(style), resume.as_ref())
                .map_err(|e| train_failure(e, seed, &partial))?;
            let records = evaluate_negotiation(&snapshot, &episodes.contexts, &bob, config.eval.selection, seed)
                .map_err(|source| RunError::Train { seed, source })?;
            let m = negotiation_metrics(&records).map_err(eval_err)?;
            row.agent_accuracy = Some(style_accuracy(style, &records).map_err(eval_err)?);
            (row.advantage, row.diversity, row.agreement_rate) = (Some(m.advantage), Some(m.diversity), Some(m.agreement_rate));
            save(checkpoints, &checkpoint_path(dir, seed, None, false), &partial, &snapshot)?;
            reports.push(report);
        }
    }
    row.skipped_episodes = reports.iter().map(|r| r.skipped).sum();
    let labeling = match config.eval.labeling.unwrap_or(LabelingSource::FixedSet) {
        LabelingSource::Stream => stream_labeling(&reports),
        LabelingSource::FixedSet => {
            let r = labeling_accuracy(&built.judge, &episodes.set).map_err(eval_err)?;
            Labeling { accuracy: Some(r.accuracy), parseable: r.parseable_accuracy, unparseable: r.unparseable as u64 }
        }
    };
    row.labeling_accuracy = labeling.accuracy;
    row.parseable_labeling_accuracy = labeling.parseable;
    row.unparseable = labeling.unparseable;
    Ok(row)
}

fn save(checkpoints: Option<&Path>, path: &Path, partial: &Path, snapshot: &PolicySnapshot) -> Result<(), RunError> {
    if checkpoints.is_some() {
        write_atomic(path, &snapshot.encode())?;
        if partial.is_file() {
            fs::remove_file(partial).map_err(io_err(partial))?;
        }
    }
    Ok(())
}

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub digest: String,
    /// Completion traffic, for LLM judges.
    pub stats: Option<ClientStats>,
}

/// Runs every seed and writes the output tree:
/// `resolved-config.toml`, `results.csv`, `summary.txt`, `checkpoints/`,
/// `seeds/seed-N.csv` and `cache-manifest.txt`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let digest = config.digest()?;
    write_atomic(&out.join("resolved-config.toml"), config.to_toml().as_bytes())?;
    let client = match config.judge.kind {
        JudgeKind::Llm => Some(build_client(config, config.objective)?),
        _ => None,
    };
    let episodes = eval_episodes(config, config.objective)?;
    let checkpoints = out.join("checkpoints");
    let seeds_dir = out.join("seeds");
    fs::create_dir_all(&checkpoints).map_err(io_err(&checkpoints))?;
    fs::create_dir_all(&seeds_dir).map_err(io_err(&seeds_dir))?;

    // Seeds run concurrently; each writes only its own files.
    let width = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut results: Vec<Result<ResultRow, RunError>> = Vec::with_capacity(config.seeds.len());
    for chunk in config.seeds.chunks(width) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let (episodes, client, checkpoints, seeds_dir, digest) = (&episodes, client.as_ref(), &checkpoints, &seeds_dir, &digest);
                    s.spawn(move || {
                        let row = run_seed(config, digest, episodes, client, seed, Some(checkpoints))?;
                        let path = seeds_dir.join(format!("seed-{seed}.csv"));
                        write_atomic(&path, crate::results::to_csv(std::slice::from_ref(&row)).as_bytes())?;
                        Ok(row)
                    })
                })
                .collect();
            results.extend(handles.into_iter().map(|h| h.join().expect("seed thread panicked")));
        });
    }
    if let Some(c) = &client {
        write_manifest(out, c)?;
    }
    let mut rows = Vec::new();
    let mut first_error = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    write_atomic(&out.join("results.csv"), crate::results::to_csv(&rows).as_bytes())?;
    write_atomic(&out.join("summary.txt"), summary(config, &digest, &rows).as_bytes())?;
    Ok(RunOutput { rows, digest, stats: client.as_ref().map(LlmClient::stats) })
}

/// Cache location, size and the keys this run used.
pub fn write_manifest(out: &Path, client: &LlmClient) -> Result<(), RunError> {
    let mut text = String::new();
    let cache = client.cache();
    let _ = writeln!(text, "cache: {}", cache.path().map_or("(memory)".into(), |p| p.display().to_string()));
    let _ = writeln!(text, "model: {}", client.defaults().model);
    let _ = writeln!(text, "entries: {}", cache.len());
    let keys = client.touched_keys();
    let _ = writeln!(text, "keys used: {}", keys.len());
    for k in keys {
        let _ = writeln!(text, "{}", hex::encode(k));
    }
    write_atomic(&out.join("cache-manifest.txt"), text.as_bytes())
}

type Column = (&'static str, fn(&ResultRow) -> Option<f64>);

fn summary(config: &ExperimentConfig, digest: &str, rows: &[ResultRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "objective: {}", config.objective);
    let _ = writeln!(s, "judge: {}", rows.first().map_or("", |r| r.judge.as_str()));
    let _ = writeln!(s, "config digest: {digest}");
    let _ = writeln!(s, "seeds: {}", config.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "));
    let columns: [Column; 6] = [
        ("agent_accuracy", |r| r.agent_accuracy),
        ("labeling_accuracy", |r| r.labeling_accuracy),
        ("parseable_labeling_accuracy", |r| r.parseable_labeling_accuracy),
        ("advantage", |r| r.advantage),
        ("diversity", |r| r.diversity),
        ("agreement_rate", |r| r.agreement_rate),
    ];
    for (name, f) in columns {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        if !v.is_empty() {
            let (mean, std) = llmreward_core::math::mean_std(&v);
            let _ = writeln!(s, "{name}: {mean:.6} +- {std:.6} (n={})", v.len());
        }
    }
    let _ = writeln!(s, "unparseable: {}", rows.iter().map(|r| r.unparseable).sum::<u64>());
    let _ = writeln!(s, "skipped_episodes: {}", rows.iter().map(|r| r.skipped_episodes).sum::<u64>());
    let _ = writeln!(s, "results header: {RESULTS_HEADER}");
    s
}
