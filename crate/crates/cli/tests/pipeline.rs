mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use common::{choices, hashed_answer, serve, write_config};
use llmreward::commands;
use llmreward::config::{ExperimentConfig, Overrides};
use llmreward::runner::{self, RunError};

const BIN: &str = env!("CARGO_BIN_EXE_llmreward");

fn load(path: &Path) -> ExperimentConfig {
    ExperimentConfig::load(path, &Overrides::default()).unwrap()
}

fn ultimatum_llm(dir: &Path, out: &str) -> std::path::PathBuf {
    write_config(
        dir,
        &format!("{out}.toml"),
        &format!(
            "objective = \"ultimatum:percent-30\"\nseeds = [0, 1]\noutput_dir = \"{out}\"\n\
             [judge]\nkind = \"llm\"\nbackend = \"mock-oracle\"\n\
             [llm]\ncache = \"shared-cache.bin\"\n[dqn]\nsteps = 400\n"
        ),
    )
}

#[test]
fn repeat_run_is_byte_identical_and_served_from_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let first = runner::run(&load(&ultimatum_llm(dir.path(), "a"))).unwrap();
    assert!(first.stats.unwrap().backend_calls > 0);
    let second = runner::run(&load(&ultimatum_llm(dir.path(), "b"))).unwrap();
    assert_eq!(second.stats.unwrap().backend_calls, 0);
    assert_eq!(first.digest, second.digest);
    for file in ["results.csv", "summary.txt", "seeds/seed-1.csv", "checkpoints/seed-0.lrps"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let csv = fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,ultimatum,percent-30,llm:mock-oracle:"));
}

#[test]
fn cli_run_writes_the_output_tree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "m.toml", "objective = \"matrix:total-welfare\"\nseeds = [3, 4]\n");
    let out = dir.path().join("run");
    let status = Command::new(BIN)
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--seed", "7", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["resolved-config.toml", "results.csv", "summary.txt", "seeds/seed-7.csv", "checkpoints/seed-7-game0.lrps"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("7,matrix,total-welfare,ground-truth"), "{}", rows[0]);
    // The resolved copy loads back to the config that ran.
    let resolved = fs::read_to_string(out.join("resolved-config.toml")).unwrap();
    let again = ExperimentConfig::parse(&resolved).unwrap();
    assert_eq!(again.seeds, vec![7]);
    assert_eq!(again.dqn_config().unwrap().steps, 500);
}

#[test]
fn config_errors_exit_with_the_field_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write_config(dir.path(), "t.toml", "objective = \"ultimatum:payoff-10\"\n[template]\nfile = \"gone.json\"\n");
    let out = Command::new(BIN).args(["label-eval", "--config"]).arg(&missing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("template.file") && err.contains("gone.json"), "{err}");

    let typo = write_config(dir.path(), "u.toml", "objective = \"ultimatum:payoff-10\"\n[llm]\nmax_token = 3\n");
    let out = Command::new(BIN).args(["run", "--config"]).arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("max_token"));
}

#[test]
fn warm_cache_batches_the_evaluation_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&ultimatum_llm(dir.path(), "w"));
    let cold = commands::warm_cache(&cfg).unwrap();
    assert_eq!((cold.prompts, cold.failed), (100, 0));
    assert!(cold.stats.backend_calls <= 50, "{:?}", cold.stats);
    assert_eq!(cold.stats.backend_prompts, 100);
    let warm = commands::warm_cache(&cfg).unwrap();
    assert_eq!(warm.stats.backend_calls, 0);
    assert_eq!(warm.stats.cache_hits, 100);
    // A run after warming never reaches the backend.
    let run = runner::run(&cfg).unwrap();
    assert_eq!(run.stats.unwrap().backend_calls, 0);
    let manifest = fs::read_to_string(dir.path().join("w/cache-manifest.txt")).unwrap();
    assert!(manifest.contains("entries: 100"), "{manifest}");
}

#[test]
fn label_eval_reports_noise_at_its_binomial_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_config(
        dir.path(),
        "n.toml",
        "objective = \"negotiation:competitive\"\nseeds = [0]\noutput_dir = \"o\"\n\
         [judge]\nkind = \"llm\"\nnoise = 0.1\n[llm]\ncache = \"c.bin\"\n[eval]\ndialogues = 1000\n",
    ));
    let rows = commands::label_eval(&cfg).unwrap();
    let r = &rows[0].1;
    assert_eq!(r.n, 1000);
    // Four standard deviations of a binomial(1000, 0.1) flip count.
    let sd = (0.1f64 * 0.9 / 1000.0).sqrt();
    assert!((r.accuracy - 0.9).abs() < 4.0 * sd, "{}", r.accuracy);
    assert!(dir.path().join("o/labeling.csv").is_file());
}

#[test]
fn sweep_has_one_row_per_size_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_config(
        dir.path(),
        "s.toml",
        "objective = \"negotiation:stubborn\"\nseeds = [0, 1]\n[eval]\ndialogues = 60\n\
         [sl]\nepochs = 20\n[sweep]\nsizes = [0, 10, 40]\n",
    ));
    let s = commands::sweep_data(&cfg).unwrap();
    assert!(s.skipped.is_empty(), "{:?}", s.skipped);
    assert_eq!(s.rows.len(), 6);
    assert!(s.rows.iter().all(|(_, _, a)| (0.0..=1.0).contains(a)));
    assert!((0.0..=1.0).contains(&s.reference));
    let csv = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    let summary = fs::read_to_string(dir.path().join("out/sweep-summary.txt")).unwrap();
    assert!(summary.contains("smallest size reaching the reference"));
}

#[test]
fn vary_prompt_covers_every_variant_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_config(
        dir.path(),
        "v.toml",
        "objective = \"negotiation:versatile\"\nseeds = [0, 1]\n[judge]\nkind = \"llm\"\n[eval]\ndialogues = 20\n",
    ));
    let rows = commands::vary_prompt(&cfg).unwrap();
    assert_eq!(rows.len(), 18);
    let mut variants: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    variants.sort_unstable();
    variants.dedup();
    assert_eq!(variants.len(), 9);
    let csv = fs::read_to_string(dir.path().join("out/prompt-variants.csv")).unwrap();
    assert_eq!(csv.lines().count(), 19);
}

#[test]
fn vary_prompt_without_a_token_answers_from_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_config(
        dir.path(),
        "v.toml",
        "objective = \"negotiation:versatile\"\nseeds = [0]\n[judge]\nkind = \"llm\"\nbackend = \"remote\"\n\
         endpoint = \"http://127.0.0.1:9/none\"\n[eval]\ndialogues = 5\n",
    ));
    if std::env::var(llmreward::client::API_KEY_VAR).is_ok() {
        return;
    }
    let rows = commands::vary_prompt(&cfg).unwrap();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.report.unavailable == 5), "{:?}", rows[0].report);
}

#[test]
fn unavailable_judge_stops_with_a_checkpoint_and_the_rerun_resumes() {
    let down = Arc::new(AtomicBool::new(true));
    let flag = down.clone();
    // Requests 6 and on fail while the flag is set.
    let server = serve(move |n, body| {
        if flag.load(Ordering::SeqCst) && n >= 6 {
            (503, "{\"error\":\"down\"}".into())
        } else {
            choices(body, hashed_answer)
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let text = |out: &str, cache: &str| {
        format!(
            "objective = \"negotiation:competitive\"\nseeds = [0]\noutput_dir = \"{out}\"\n\
             [judge]\nkind = \"llm\"\nbackend = \"remote\"\nendpoint = \"{}\"\n\
             [llm]\ncache = \"{cache}\"\nretry_attempts = 1\nretry_base_ms = 1\n\
             [reinforce]\ncontexts = 15\n[eval]\ncontexts = 10\ndialogues = 8\nlabeling = \"fixed-set\"\n",
            server.url
        )
    };
    let cfg = write_config(dir.path(), "r.toml", &text("resumed", "c1.bin"));
    let run = || Command::new(BIN).args(["run", "--config"]).arg(&cfg).env("LLM_API_KEY", "sk-test").output().unwrap();

    let failed = run();
    assert_eq!(failed.status.code(), Some(3), "{}", String::from_utf8_lossy(&failed.stderr));
    let partial = dir.path().join("resumed/checkpoints/seed-0.partial.lrps");
    assert!(partial.is_file());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("judge unavailable"));
    assert!(!dir.path().join("resumed/results.csv").exists());

    down.store(false, Ordering::SeqCst);
    let resumed = run();
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    assert!(!partial.exists());

    // An uninterrupted run with a fresh cache ends in the same place.
    let straight = write_config(dir.path(), "s.toml", &text("straight", "c2.bin"));
    let out = Command::new(BIN).args(["run", "--config"]).arg(&straight).env("LLM_API_KEY", "sk-test").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = fs::read(dir.path().join("resumed/results.csv")).unwrap();
    let b = fs::read(dir.path().join("straight/results.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn remote_backend_without_a_token_is_refused() {
    if std::env::var(llmreward::client::API_KEY_VAR).is_ok() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_config(
        dir.path(),
        "r.toml",
        "objective = \"ultimatum:payoff-10\"\n[judge]\nkind = \"llm\"\nbackend = \"remote\"\nendpoint = \"http://127.0.0.1:9/x\"\n",
    ));
    let err = runner::run(&cfg).unwrap_err();
    assert!(matches!(err, RunError::Client(_)), "{err}");
    assert!(err.to_string().contains("LLM_API_KEY"));
}

#[test]
fn emit_table_has_every_style() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = load(&write_config(
        dir.path(),
        "t.toml",
        "objective = \"negotiation:versatile\"\nseeds = [0]\n[reinforce]\ncontexts = 20\n[eval]\ncontexts = 10\ndialogues = 5\n",
    ));
    let csv = commands::emit_table(&cfg).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(dir.path().join("out/table.csv").is_file());
}
