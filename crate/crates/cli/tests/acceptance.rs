//! Acceptance suite. Every criterion prints one `AC.. PASS|FAIL` line to
//! stderr (outside the test harness's capture) and then asserts.
//!
//! Criteria run one at a time so the wall-clock limits measure a single
//! training run rather than whatever else the harness has scheduled.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::io::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use llmreward::commands;
use llmreward::config::{BackendKind, ExperimentConfig, JudgeKind};
use llmreward::runner::{self, build_client, eval_episodes, run_seed};
use llmreward_core::eval::{labeling_accuracy, EvalSet};
use llmreward_core::judge::{
    default_template, parse_response, Completer, CompletionError, EnvTag, EpisodeRecord, Judge, JudgeError, Judgment,
    LlmJudge, Objective, OutcomeJudgment, TemplateSettings,
};
use llmreward_core::matrix::{canonical_games, random_game, satisfying_outcomes, MatrixGame, OutcomeSet, SolutionConcept};
use llmreward_core::negotiation::{NegotiationStyle, RuleBasedPartner};
use llmreward_core::nn::{softmax_cross_entropy, Activation, Dense, GruCell};
use llmreward_core::rl::{
    dqn_train, reinforce_train, DqnConfig, ReinforceConfig, SingleStepTask, UltimatumTask,
};
use llmreward_core::seed;
use llmreward_core::ultimatum::UltimatumObjective;
use rand::Rng;

const SEEDS: [u64; 3] = [0, 1, 2];

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u8, pass: bool, detail: &str) {
    let line = format!("\nAC{id:02} {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} failed: {detail}");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(" "))
}

/// A config for `objective` with the given judge, an in-memory cache and
/// every other setting at its default.
fn config(objective: Objective, kind: JudgeKind, noise: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_objective(objective);
    c.judge.kind = kind;
    c.judge.backend = BackendKind::MockOracle;
    c.judge.noise = noise;
    c.llm.cache = None;
    c.seeds = SEEDS.to_vec();
    c
}

/// Agent accuracy per seed for `config`, plus the slowest seed's seconds.
fn agent_accuracies(config: &ExperimentConfig) -> (Vec<f64>, f64) {
    let episodes = eval_episodes(config, config.objective).unwrap();
    let client = (config.judge.kind == JudgeKind::Llm).then(|| build_client(config, config.objective).unwrap());
    let mut accs = Vec::new();
    let mut slowest: f64 = 0.0;
    for &s in &config.seeds {
        let t = Instant::now();
        let row = run_seed(config, "acceptance", &episodes, client.as_ref(), s, None).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        accs.push(row.agent_accuracy.unwrap());
    }
    (accs, slowest)
}

struct Runs {
    /// Per objective: accuracies over [`SEEDS`] and the slowest seed.
    by_objective: Vec<(UltimatumObjective, Vec<f64>, f64)>,
}

fn ultimatum_runs(kind: JudgeKind, noise: f64) -> Runs {
    let by_objective = UltimatumObjective::STANDARD
        .into_iter()
        .map(|o| {
            let (accs, slowest) = agent_accuracies(&config(Objective::Ultimatum(o), kind, noise));
            (o, accs, slowest)
        })
        .collect();
    Runs { by_objective }
}

fn ultimatum_truth() -> &'static Runs {
    static R: OnceLock<Runs> = OnceLock::new();
    R.get_or_init(|| ultimatum_runs(JudgeKind::GroundTruth, 0.0))
}

fn ultimatum_mock(noise: f64) -> &'static Runs {
    static CLEAN: OnceLock<Runs> = OnceLock::new();
    static NOISY: OnceLock<Runs> = OnceLock::new();
    let cell = if noise == 0.0 { &CLEAN } else { &NOISY };
    cell.get_or_init(|| ultimatum_runs(JudgeKind::Llm, noise))
}

// ---------------------------------------------------------------- AC01

/// Exhaustive scan written from the definitions, independent of the crate.
fn scan(game: &MatrixGame, concept: SolutionConcept) -> OutcomeSet {
    let r: Vec<(f64, f64)> = (0..4).map(|i| game.rewards(i)).collect();
    let keep = |i: usize| match concept {
        SolutionConcept::TotalWelfare => r.iter().all(|o| r[i].0 + r[i].1 >= o.0 + o.1),
        SolutionConcept::Equality => r[i].0 == r[i].1,
        SolutionConcept::RawlsianFairness => r.iter().all(|o| r[i].0.min(r[i].1) >= o.0.min(o.1)),
        SolutionConcept::ParetoOptimal => !r.iter().any(|o| o.0 >= r[i].0 && o.1 >= r[i].1 && *o != r[i]),
    };
    OutcomeSet::from_indices((0..4).filter(|&i| keep(i)))
}

#[test]
fn ac01_matrix_oracle_matches_exhaustive_scan() {
    let _g = serial();
    let t = Instant::now();
    let mut games = canonical_games();
    let mut rng = seed::rng(seed::derive(0, "acceptance-random-games"));
    games.extend((0..100).map(|_| random_game(&mut rng, 6)));
    let mut mismatches = 0;
    for g in &games {
        for c in SolutionConcept::ALL {
            if satisfying_outcomes(g, c) != scan(g, c) {
                mismatches += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 1.0;
    verdict(1, pass, &format!("{} games x 4 concepts, {mismatches} mismatches, {secs:.3}s", games.len()));
}

// ---------------------------------------------------------------- AC02

fn labeling(config: &ExperimentConfig) -> f64 {
    let client = build_client(config, config.objective).unwrap();
    let set = eval_episodes(config, config.objective).unwrap().set;
    let judge = runner::build_judge(config, config.objective, Some(&client), 0).unwrap();
    labeling_accuracy(&judge.judge, &set).unwrap().accuracy
}

#[test]
fn ac02_noiseless_mock_judge_reproduces_the_oracle() {
    let _g = serial();
    let mut failures = Vec::new();
    let mut checked = 0;

    for o in UltimatumObjective::STANDARD {
        let c = config(Objective::Ultimatum(o), JudgeKind::Llm, 0.0);
        assert_eq!(eval_episodes(&c, c.objective).unwrap().proposals.len(), 50);
        let acc = labeling(&c);
        checked += 1;
        if acc != 1.0 {
            failures.push(format!("label ultimatum:{o} {acc}"));
        }
    }
    for concept in SolutionConcept::ALL {
        for scrambled in [false, true] {
            let mut c = config(Objective::Matrix(concept), JudgeKind::Llm, 0.0);
            c.template.scramble = scrambled;
            let acc = labeling(&c);
            checked += 1;
            if acc != 1.0 {
                failures.push(format!("label matrix:{concept} scrambled={scrambled} {acc}"));
            }
        }
    }
    for style in NegotiationStyle::ALL {
        let mut c = config(Objective::Negotiation(style), JudgeKind::Llm, 0.0);
        c.eval.dialogues = 200;
        let acc = labeling(&c);
        checked += 1;
        if acc != 1.0 {
            failures.push(format!("label negotiation:{style} {acc}"));
        }
    }

    // Agents trained with the mock judge against agents trained on truth.
    let mut worst: f64 = 0.0;
    let mut compare = |name: String, truth: &[f64], mock: &[f64]| {
        let gap = (mean(truth) - mean(mock)).abs();
        worst = worst.max(gap);
        if gap > 0.02 {
            failures.push(format!("agents {name}: truth {} mock {}", fmt(truth), fmt(mock)));
        }
    };
    let (truth, mock) = (ultimatum_truth(), ultimatum_mock(0.0));
    for ((o, t, _), (_, m, _)) in truth.by_objective.iter().zip(&mock.by_objective) {
        compare(format!("ultimatum:{o}"), t, m);
    }
    for concept in SolutionConcept::ALL {
        let o = Objective::Matrix(concept);
        let (t, _) = agent_accuracies(&config(o, JudgeKind::GroundTruth, 0.0));
        let (m, _) = agent_accuracies(&config(o, JudgeKind::Llm, 0.0));
        compare(o.to_string(), &t, &m);
    }
    for style in NegotiationStyle::ALL {
        let o = Objective::Negotiation(style);
        let t: Vec<f64> = negotiation_truth(style).iter().map(|r| r.accuracy).collect();
        let (m, _) = agent_accuracies(&config(o, JudgeKind::Llm, 0.0));
        compare(o.to_string(), &t, &m);
    }

    let detail = format!(
        "{checked} labeling sets at 1.0 expected, 13 agent comparisons, largest agent gap {worst:.3}{}",
        if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
    );
    verdict(2, failures.is_empty(), &detail);
}

// ---------------------------------------------------------------- AC03

#[test]
fn ac03_ultimatum_dqn_learns_every_objective() {
    let _g = serial();
    let d = DqnConfig::ultimatum();
    assert_eq!((d.lr, d.steps), (1e-4, 10_000));
    let runs = ultimatum_truth();
    let mut pass = true;
    let mut parts = Vec::new();
    for (o, accs, slowest) in &runs.by_objective {
        pass &= accs.iter().all(|&a| a >= 0.97) && *slowest <= 120.0;
        parts.push(format!("{o} {} {slowest:.1}s", fmt(accs)));
    }
    verdict(3, pass, &format!("min 0.97, max 120s per seed: {}", parts.join(", ")));
}

// ---------------------------------------------------------------- AC04

#[test]
fn ac04_matrix_dqn_finds_the_objective_outcomes() {
    let _g = serial();
    assert_eq!(DqnConfig::matrix().steps, 500);
    let mut pass = true;
    let mut parts = Vec::new();
    for concept in SolutionConcept::ALL {
        let floor = match concept {
            SolutionConcept::TotalWelfare | SolutionConcept::Equality => 1.0,
            _ => 0.75,
        };
        let c = config(Objective::Matrix(concept), JudgeKind::GroundTruth, 0.0);
        let games = c.eval.games.len();
        let (accs, slowest) = agent_accuracies(&c);
        // Every seed trains one agent per game.
        let per_run = slowest / games as f64;
        pass &= accs.iter().all(|&a| a >= floor) && per_run < 10.0;
        parts.push(format!("{concept} >= {floor}: {} ({per_run:.2}s per run)", fmt(&accs)));
    }
    verdict(4, pass, &parts.join(", "));
}

// ---------------------------------------------------------------- AC05

struct NegotiationRun {
    accuracy: f64,
    advantage: f64,
    diversity: f64,
    agreement: f64,
}

fn negotiation_truth(style: NegotiationStyle) -> &'static [NegotiationRun] {
    static R: OnceLock<BTreeMap<String, Vec<NegotiationRun>>> = OnceLock::new();
    let all = R.get_or_init(|| {
        NegotiationStyle::ALL
            .into_iter()
            .map(|s| {
                let c = config(Objective::Negotiation(s), JudgeKind::GroundTruth, 0.0);
                let episodes = eval_episodes(&c, c.objective).unwrap();
                let runs = SEEDS
                    .iter()
                    .map(|&seed| {
                        let r = run_seed(&c, "acceptance", &episodes, None, seed, None).unwrap();
                        NegotiationRun {
                            accuracy: r.agent_accuracy.unwrap(),
                            advantage: r.advantage.unwrap(),
                            diversity: r.diversity.unwrap(),
                            agreement: r.agreement_rate.unwrap(),
                        }
                    })
                    .collect();
                (s.to_string(), runs)
            })
            .collect()
    });
    &all[&style.to_string()]
}

#[test]
fn ac05_negotiation_styles_show_their_signatures() {
    let _g = serial();
    let r = ReinforceConfig::default();
    assert_eq!((r.contexts, r.lr, r.epochs), (250, 0.1, 1));
    let c = config(Objective::Negotiation(NegotiationStyle::Versatile), JudgeKind::GroundTruth, 0.0);
    assert_eq!(c.eval.contexts, 100);
    let m = |s: NegotiationStyle, f: fn(&NegotiationRun) -> f64| mean(&negotiation_truth(s).iter().map(f).collect::<Vec<_>>());
    use NegotiationStyle::*;
    let comp_adv = m(Competitive, |r| r.advantage);
    let push_adv = m(PushOver, |r| r.advantage);
    let vers_div = m(Versatile, |r| r.diversity);
    let stub_div = m(Stubborn, |r| r.diversity);
    let vers_agr = m(Versatile, |r| r.agreement);
    let push_agr = m(PushOver, |r| r.agreement);
    let checks = [
        comp_adv > 0.0,
        push_adv < 0.0,
        vers_div >= 0.9,
        stub_div < vers_div,
        vers_agr >= 0.8,
        push_agr >= 0.8,
    ];
    let detail = format!(
        "competitive advantage {comp_adv:.3} > 0, push-over advantage {push_adv:.3} < 0, versatile diversity {vers_div:.3} >= 0.9, \
         stubborn diversity {stub_div:.3} < versatile, agreement versatile {vers_agr:.3} push-over {push_agr:.3} >= 0.8"
    );
    verdict(5, checks.iter().all(|&b| b), &detail);
}

// ---------------------------------------------------------------- AC06

#[test]
fn ac06_supervised_judge_needs_more_than_one_example() {
    let _g = serial();
    let mut pass10 = true;
    let mut gap_ok = false;
    let mut parts = Vec::new();
    for threshold in [30, 60] {
        let o = Objective::Ultimatum(UltimatumObjective::PercentThreshold(threshold));
        let set = EvalSet::ultimatum_standard(UltimatumObjective::PercentThreshold(threshold), 0).unwrap();
        let accs = |n: usize| -> Vec<f64> {
            let mut c = config(o, JudgeKind::Sl, 0.0);
            c.sl.examples = Some(n);
            SEEDS
                .iter()
                .map(|&s| labeling_accuracy(&runner::train_sl(&c, &o, s).unwrap(), &set).unwrap().accuracy)
                .collect()
        };
        let (ten, one) = (accs(10), accs(1));
        pass10 &= mean(&ten) >= 0.9;
        gap_ok |= mean(&ten) - mean(&one) >= 0.10;
        parts.push(format!("percent-{threshold}: 10 examples {} mean {:.3}, 1 example {} mean {:.3}", fmt(&ten), mean(&ten), fmt(&one), mean(&one)));
    }
    verdict(6, pass10 && gap_ok, &format!("seed means; {}", parts.join("; ")));
}

// ---------------------------------------------------------------- AC07

#[test]
fn ac07_judge_noise_costs_agent_accuracy() {
    let _g = serial();
    let all = |r: &Runs| -> Vec<f64> { r.by_objective.iter().flat_map(|(_, a, _)| a.iter().copied()).collect() };
    let clean = mean(&all(ultimatum_mock(0.0)));
    let noisy = mean(&all(ultimatum_mock(0.3)));
    let per: Vec<String> =
        ultimatum_mock(0.3).by_objective.iter().map(|(o, a, _)| format!("{o} {}", fmt(a))).collect();
    verdict(
        7,
        clean - noisy >= 0.05,
        &format!("mean agent accuracy noise 0: {clean:.3}, noise 0.3: {noisy:.3}, gap >= 0.05 ({})", per.join(", ")),
    );
}

// ---------------------------------------------------------------- AC08

const H: f64 = 1e-5;

/// Relative error with the denominator floored at 1e-6, below which central
/// differences at this step size are roundoff.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn worst_error(x: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    let mut x = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let up = loss(&x);
        x[i] = orig - H;
        let down = loss(&x);
        x[i] = orig;
        worst = worst.max(rel_err((up - down) / (2.0 * H), analytic[i]));
    }
    worst
}

fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dense_worst(rng: &mut impl Rng, act: Activation) -> f64 {
    let (i, o) = (rng.random_range(1..6), rng.random_range(1..6));
    let layer = Dense::new(i, o, act);
    let p = uniform(rng, layer.param_count());
    let x = uniform(rng, i);
    let w = uniform(rng, o);
    let loss = |p: &[f64], x: &[f64]| -> f64 { layer.forward(p, x).output.iter().zip(&w).map(|(a, b)| a * b).sum() };
    let cache = layer.forward(&p, &x);
    let mut g = vec![0.0; p.len()];
    let dx = layer.backward(&p, &cache, &w, &mut g);
    worst_error(&p, &g, |p| loss(p, &x)).max(worst_error(&x, &dx, |x| loss(&p, x)))
}

fn gru_worst(rng: &mut impl Rng) -> f64 {
    let (i, hs) = (rng.random_range(1..5), rng.random_range(1..5));
    let cell = GruCell::new(i, hs);
    let p = uniform(rng, cell.param_count());
    let x = uniform(rng, i);
    let h0 = uniform(rng, hs);
    let w = uniform(rng, hs);
    let loss = |p: &[f64], x: &[f64], h: &[f64]| -> f64 { cell.step(p, x, h).h.iter().zip(&w).map(|(a, b)| a * b).sum() };
    let cache = cell.step(&p, &x, &h0);
    let mut g = vec![0.0; p.len()];
    let (dx, dh) = cell.backward_step(&p, &cache, &w, &mut g);
    worst_error(&p, &g, |p| loss(p, &x, &h0))
        .max(worst_error(&x, &dx, |x| loss(&p, x, &h0)))
        .max(worst_error(&h0, &dh, |h| loss(&p, &x, h)))
}

fn softmax_worst(rng: &mut impl Rng) -> f64 {
    let n = rng.random_range(2..7);
    let target = rng.random_range(0..n);
    let logits = uniform(rng, n);
    let (_, g) = softmax_cross_entropy(&logits, target).unwrap();
    worst_error(&logits, &g, |l| softmax_cross_entropy(l, target).unwrap().0)
}

#[test]
fn ac08_backward_passes_match_finite_differences() {
    let _g = serial();
    let mut rng = seed::rng(seed::derive(0, "acceptance-gradients"));
    let cases = 20;
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["dense", "relu", "tanh", "gru", "softmax-ce"] {
        let worst = (0..cases)
            .map(|_| match name {
                "dense" => dense_worst(&mut rng, Activation::Identity),
                "relu" => dense_worst(&mut rng, Activation::Relu),
                "tanh" => dense_worst(&mut rng, Activation::Tanh),
                "gru" => gru_worst(&mut rng),
                _ => softmax_worst(&mut rng),
            })
            .fold(0.0, f64::max);
        pass &= worst < 1e-4;
        parts.push(format!("{name} {worst:.1e}"));
    }
    verdict(8, pass, &format!("{cases} instances each, worst relative error < 1e-4: {}", parts.join(", ")));
}

// ---------------------------------------------------------------- AC09

fn rerun_is_identical(dir: &std::path::Path, name: &str, mut c: ExperimentConfig) -> Result<String, String> {
    c.llm.cache = Some(dir.join(format!("{name}-cache.bin")));
    let warm = commands::warm_cache(&{
        let mut w = c.clone();
        w.output_dir = dir.join(format!("{name}-warm"));
        w
    })
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    let mut calls = Vec::new();
    for run in ["a", "b"] {
        let mut r = c.clone();
        r.output_dir = dir.join(format!("{name}-{run}"));
        let out = runner::run(&r).map_err(|e| e.to_string())?;
        calls.push(out.stats.map_or(0, |s| s.backend_calls));
        outputs.push(std::fs::read(r.output_dir.join("results.csv")).map_err(|e| e.to_string())?);
    }
    let same = outputs[0] == outputs[1];
    let detail = format!("{name}: warm-up {} calls, runs {calls:?} calls, identical {same}", warm.stats.backend_calls);
    // Training prompts outside the evaluation set reach the backend on the
    // first run only; the second run is served entirely from the cache.
    if same && calls[1] == 0 { Ok(detail) } else { Err(detail) }
}

#[test]
fn ac09_warm_reruns_are_byte_identical() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    results.push(rerun_is_identical(
        dir.path(),
        "matrix",
        config(Objective::Matrix(SolutionConcept::ParetoOptimal), JudgeKind::Llm, 0.1),
    ));
    let mut u = config(Objective::Ultimatum(UltimatumObjective::PayoffThreshold(10)), JudgeKind::Llm, 0.1);
    u.seeds = vec![0];
    results.push(rerun_is_identical(dir.path(), "ultimatum", u));
    let mut n = config(Objective::Negotiation(NegotiationStyle::PushOver), JudgeKind::Llm, 0.1);
    n.seeds = vec![0, 1];
    results.push(rerun_is_identical(dir.path(), "negotiation", n));
    let pass = results.iter().all(Result::is_ok);
    let parts: Vec<String> = results.into_iter().map(|r| r.unwrap_or_else(|e| e)).collect();
    verdict(9, pass, &parts.join("; "));
}

// ---------------------------------------------------------------- AC10

/// Responses and the reward each must parse to (`None` = unparseable).
const CORPUS: [(&str, Option<bool>); 30] = [
    ("Yes", Some(true)),
    ("No", Some(false)),
    ("yes", Some(true)),
    ("NO.", Some(false)),
    ("Yes, Alice repeated her proposal.", Some(true)),
    ("No. Alice accepted the first offer.", Some(false)),
    ("  Yes\n", Some(true)),
    ("YES!", Some(true)),
    ("No, Bob walked away.", Some(false)),
    ("No, no, no.", Some(false)),
    ("yes\nThe proposal gives the responder 40%.", Some(true)),
    ("I would say yes.", Some(true)),
    ("The offer was rejected, so no.", Some(false)),
    ("", None),
    ("   ", None),
    ("It depends.", None),
    ("Maybe.", None),
    ("Yesterday Alice offered a fair split.", None),
    ("Nobody would accept this.", None),
    ("Yes and no.", None),
    ("Some would say yes, others no.", None),
    ("Alice was firm. Yes is plausible. I am not sure; maybe no.", None),
    ("Let's think step by step. Alice offered 30 of 100, which is 30%. That meets the threshold. So the answer is Yes.", Some(true)),
    ("Let's think step by step. The split is 90/10, far below what the responder wants. Therefore the answer is No.", Some(false)),
    ("Step by step: Alice made three offers and never changed them. Answer: Yes", Some(true)),
    ("First, no agreement was reached early on. Later Bob agreed. The answer is Yes.", Some(true)),
    ("Is this fair? The answer is no.", Some(false)),
    ("Yes. Alice never changed her offer, so the answer is Yes.", Some(true)),
    ("Answer: No", Some(false)),
    ("Alice proposed, Bob countered, Alice insisted twice. Overall she kept pressing, so the answer is yes", Some(true)),
];

/// Answers every prompt with a corpus response chosen by the prompt's hash.
struct CorpusBackend;

impl Completer for CorpusBackend {
    fn complete(&self, prompt: &str) -> Result<String, CompletionError> {
        let h = prompt.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
        Ok(CORPUS[(h % CORPUS.len() as u64) as usize].0.to_string())
    }
}

/// Counts the unparseable judgments it passes through.
struct Counting<J> {
    inner: J,
    unparseable: AtomicU64,
}

impl<J: Judge> Judge for Counting<J> {
    fn env(&self) -> EnvTag {
        self.inner.env()
    }
    fn judge(&self, record: &EpisodeRecord) -> Result<Judgment, JudgeError> {
        let j = self.inner.judge(record)?;
        if matches!(j, Judgment::Unparseable(_)) {
            self.unparseable.fetch_add(1, Ordering::SeqCst);
        }
        Ok(j)
    }
    fn judge_outcomes(&self, game: &MatrixGame) -> Result<OutcomeJudgment, JudgeError> {
        self.inner.judge_outcomes(game)
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// Counts the training steps that drew a pair without a usable reward.
struct CountingTask<T> {
    inner: T,
    discarded: Cell<u64>,
}

impl<T: SingleStepTask> SingleStepTask for CountingTask<T> {
    fn env(&self) -> EnvTag {
        self.inner.env()
    }
    fn observation_dim(&self) -> usize {
        self.inner.observation_dim()
    }
    fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }
    fn n_contexts(&self) -> usize {
        self.inner.n_contexts()
    }
    fn observation(&self, context: usize) -> Vec<f64> {
        self.inner.observation(context)
    }
    fn precompute(&mut self) -> Result<(), JudgeError> {
        self.inner.precompute()
    }
    fn reward(&self, context: usize, action: usize) -> Option<bool> {
        let r = self.inner.reward(context, action);
        if r.is_none() {
            self.discarded.set(self.discarded.get() + 1);
        }
        r
    }
    fn true_reward(&self, context: usize, action: usize) -> Option<bool> {
        self.inner.true_reward(context, action)
    }
    fn judge_description(&self) -> String {
        self.inner.judge_description()
    }
}

fn corpus_judge(objective: Objective) -> Counting<LlmJudge<CorpusBackend>> {
    let template = default_template(&objective, &TemplateSettings::standard(&objective)).unwrap();
    Counting { inner: LlmJudge::new(objective, template, CorpusBackend).unwrap(), unparseable: AtomicU64::new(0) }
}

#[test]
fn ac10_unparseable_answers_are_skipped_and_counted() {
    let _g = serial();
    let wrong: Vec<String> = CORPUS
        .iter()
        .filter(|(text, want)| parse_response(text).reward() != *want)
        .map(|(text, want)| format!("{text:?} -> {:?}, want {want:?}", parse_response(text)))
        .collect();

    // Negotiation: one judgment per dialogue, each discarded one skipped.
    let style = NegotiationStyle::Stubborn;
    let judge = corpus_judge(Objective::Negotiation(style));
    let rc = ReinforceConfig { contexts: 120, ..ReinforceConfig::default() };
    let (_, rep) = reinforce_train(&judge, &RuleBasedPartner::default(), &rc, 0, Some(style), None).unwrap();
    let discarded = judge.unparseable.load(Ordering::SeqCst);
    let reinforce_ok = rep.skipped == discarded && discarded > 0 && rep.updates + rep.skipped == rep.steps;

    // Ultimatum: judgments are made once per pair; every step that lands on
    // an unparseable pair is discarded.
    let o = UltimatumObjective::PercentThreshold(30);
    let judge = corpus_judge(Objective::Ultimatum(o));
    let c = config(Objective::Ultimatum(o), JudgeKind::GroundTruth, 0.0);
    let proposals = eval_episodes(&c, c.objective).unwrap().proposals;
    let task = UltimatumTask::new(proposals, &judge, Some(Objective::Ultimatum(o))).unwrap();
    let mut task = CountingTask { inner: task, discarded: Cell::new(0) };
    let dc = DqnConfig { steps: 2000, ..DqnConfig::ultimatum() };
    let (_, drep) = dqn_train(&mut task, &dc, 0).unwrap();
    let dqn_ok = drep.skipped == task.discarded.get() && drep.skipped > 0 && judge.unparseable.load(Ordering::SeqCst) > 0;

    let detail = format!(
        "{}/30 corpus cases parse as expected{}; reinforce skipped {} of {} steps, {} unparseable judgments, {} updates; \
         dqn skipped {} steps, {} discarded draws",
        30 - wrong.len(),
        if wrong.is_empty() { String::new() } else { format!(" ({})", wrong.join("; ")) },
        rep.skipped,
        rep.steps,
        discarded,
        rep.updates,
        drep.skipped,
        task.discarded.get(),
    );
    verdict(10, wrong.is_empty() && reinforce_ok && dqn_ok, &detail);
}
