//! Experiment configuration: TOML with strict schema and defaults.
//!
//! Relative paths are taken from the config file's directory. Loading fills
//! every environment-dependent default, so the resolved copy written next to
//! the results states every setting that was used.

use std::path::{Path, PathBuf};

use llmreward_core::judge::{EnvTag, ExampleBalance, ExplanationSet, Objective, TemplateSettings};
use llmreward_core::matrix::{canonical_games, MatrixGame};
use llmreward_core::rl::{DqnConfig, ReinforceConfig, Selection};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("`{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("`{field}`: file {path} does not exist")]
    MissingFile { field: &'static str, path: PathBuf },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

mod objective_str {
    use llmreward_core::judge::Objective;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(o: &Objective, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(o)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Objective, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeKind {
    #[default]
    GroundTruth,
    Llm,
    Sl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Remote,
    #[default]
    MockOracle,
    MockScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub kind: JudgeKind,
    pub backend: BackendKind,
    /// Completion URL for the remote backend.
    pub endpoint: Option<String>,
    /// Mock oracle: probability of flipping each answer.
    pub noise: f64,
    pub mock_seed: u64,
    /// Mock script: JSON object mapping prompts to responses.
    pub script: Option<PathBuf>,
    /// Mock script: response for prompts missing from the table.
    pub script_fallback: Option<String>,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            kind: JudgeKind::GroundTruth,
            backend: BackendKind::MockOracle,
            endpoint: None,
            noise: 0.0,
            mock_seed: 0,
            script: None,
            script_fallback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
    pub batch_size: usize,
    /// Response cache file; the cache is kept in memory when absent.
    pub cache: Option<PathBuf>,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            model: "text-davinci-002".into(),
            temperature: 0.0,
            max_tokens: 256,
            stop: Vec::new(),
            batch_size: 50,
            cache: Some(PathBuf::from("llm-cache.bin")),
            retry_attempts: 5,
            retry_base_ms: 1000,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// JSON prompt template replacing the built-in one.
    pub file: Option<PathBuf>,
    pub include_rho1: bool,
    pub zero_shot: Option<bool>,
    pub scramble: bool,
    pub n_examples: Option<usize>,
    pub explanations: Option<ExplanationSet>,
    pub balance: ExampleBalance,
    pub keyword: Option<String>,
    pub example_seed: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            file: None,
            include_rho1: true,
            zero_shot: None,
            scramble: false,
            n_examples: None,
            explanations: None,
            balance: ExampleBalance::Counterbalanced,
            keyword: None,
            example_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlSettings {
    pub examples: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: f64,
    pub recurrent: bool,
}

impl Default for SlSettings {
    fn default() -> Self {
        Self { examples: None, epochs: None, lr: 0.05, recurrent: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelingSource {
    /// The fixed evaluation set.
    FixedSet,
    /// The judgments made during training.
    Stream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Seed of the evaluation episodes (proposals, games, dialogues, contexts).
    pub seed: u64,
    /// Negotiation rollouts per trained policy.
    pub contexts: usize,
    /// Negotiation dialogues in the labeling set.
    pub dialogues: usize,
    pub selection: Selection,
    pub labeling: Option<LabelingSource>,
    /// Matrix games to train on, by name.
    pub games: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seed: 0, contexts: 100, dialogues: 200, selection: Selection::Greedy, labeling: None, games: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub base_examples: usize,
    pub sizes: Vec<usize>,
    /// Noise of the mock LLM judge whose accuracy is the reference line.
    pub reference_noise: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { base_examples: 3, sizes: vec![0, 25, 50, 100, 200], reference_noise: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(with = "objective_str")]
    pub objective: Objective,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub judge: JudgeConfig,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub template: TemplateConfig,
    #[serde(default)]
    pub sl: SlSettings,
    /// Keys not given here take the environment's defaults.
    #[serde(default)]
    pub dqn: Option<toml::Table>,
    #[serde(default)]
    pub reinforce: ReinforceConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub endpoint: Option<String>,
    pub no_rho1: bool,
}

fn absolutize(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn file_digest(field: &'static str, path: &Path) -> Result<String, ConfigError> {
    let bytes = std::fs::read(path).map_err(|_| ConfigError::MissingFile { field, path: path.to_path_buf() })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl ExperimentConfig {
    /// A config with every default for `objective`.
    pub fn for_objective(objective: Objective) -> Self {
        let mut c: Self = toml::from_str(&format!("objective = \"{objective}\"")).expect("minimal config parses");
        c.resolve(Path::new(".")).expect("defaults are valid");
        c
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut c = Self::parse(&text).map_err(|message| ConfigError::Parse { path: path.to_path_buf(), message })?;
        c.apply(overrides);
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        c.resolve(base)?;
        if let Some(out) = &overrides.out {
            c.output_dir = out.clone();
        }
        Ok(c)
    }

    /// Parses without resolving defaults or checking files.
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(b) = o.backend {
            self.judge.kind = JudgeKind::Llm;
            self.judge.backend = b;
        }
        if let Some(e) = &o.endpoint {
            self.judge.endpoint = Some(e.clone());
        }
        if o.no_rho1 {
            self.template.include_rho1 = false;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    pub fn env(&self) -> EnvTag {
        self.objective.env()
    }

    /// Fills environment defaults, makes paths absolute against `base` and
    /// checks every field.
    pub fn resolve(&mut self, base: &Path) -> Result<(), ConfigError> {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        absolutize(base, &mut self.llm.cache);
        absolutize(base, &mut self.judge.script);
        absolutize(base, &mut self.template.file);

        let standard = TemplateSettings::standard(&self.objective);
        let t = &mut self.template;
        t.zero_shot.get_or_insert(standard.options.zero_shot);
        t.n_examples.get_or_insert(standard.n_examples);
        t.explanations.get_or_insert(standard.explanations);
        self.sl.examples.get_or_insert(match self.env() {
            EnvTag::Negotiation => 3,
            _ => 10,
        });
        self.eval.labeling.get_or_insert(match self.env() {
            EnvTag::Negotiation => LabelingSource::Stream,
            _ => LabelingSource::FixedSet,
        });
        if self.env() == EnvTag::Matrix && self.eval.games.is_empty() {
            self.eval.games = canonical_games().into_iter().map(|g| g.name).collect();
        }
        let dqn = self.dqn_config()?;
        self.dqn = Some(toml::Table::try_from(&dqn).map_err(|e| invalid("dqn", e.to_string()))?);
        self.validate()
    }

    /// DQN settings: the environment's defaults overlaid with the `[dqn]` table.
    pub fn dqn_config(&self) -> Result<DqnConfig, ConfigError> {
        let default = match self.env() {
            EnvTag::Matrix => DqnConfig::matrix(),
            _ => DqnConfig::ultimatum(),
        };
        let Some(user) = &self.dqn else { return Ok(default) };
        let mut table = toml::Table::try_from(&default).map_err(|e| invalid("dqn", e.to_string()))?;
        table.extend(user.clone());
        let c: DqnConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| invalid("dqn", e.to_string()))?;
        c.validate().map_err(|e| invalid("dqn", e.to_string()))?;
        Ok(c)
    }

    pub fn matrix_games(&self) -> Result<Vec<MatrixGame>, ConfigError> {
        self.eval
            .games
            .iter()
            .map(|n| n.parse().map_err(|e: llmreward_core::matrix::MatrixError| invalid("eval.games", e.to_string())))
            .collect()
    }

    pub fn template_settings(&self, objective: &Objective) -> TemplateSettings {
        let mut s = TemplateSettings::standard(objective);
        let t = &self.template;
        if *objective == self.objective {
            s.n_examples = t.n_examples.unwrap_or(s.n_examples);
            s.explanations = t.explanations.unwrap_or(s.explanations);
            s.options.zero_shot = t.zero_shot.unwrap_or(s.options.zero_shot);
        }
        s.balance = t.balance;
        s.keyword = t.keyword.clone();
        s.options.include_rho1 = t.include_rho1;
        s.options.scramble_outcomes = t.scramble;
        s.example_seed = t.example_seed;
        s
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(invalid("seeds", "seeds must be distinct"));
        }
        if !(0.0..=1.0).contains(&self.judge.noise) {
            return Err(invalid("judge.noise", format!("{} is not a probability", self.judge.noise)));
        }
        if self.judge.kind == JudgeKind::Llm {
            match self.judge.backend {
                BackendKind::Remote if self.judge.endpoint.as_deref().is_none_or(str::is_empty) => {
                    return Err(invalid("judge.endpoint", "the remote backend needs an endpoint URL"));
                }
                BackendKind::MockScript if self.judge.script.is_none() => {
                    return Err(invalid("judge.script", "the mock-script backend needs a script file"));
                }
                _ => {}
            }
        }
        if let Some(p) = &self.judge.script {
            if !p.is_file() {
                return Err(ConfigError::MissingFile { field: "judge.script", path: p.clone() });
            }
        }
        if let Some(p) = &self.template.file {
            if !p.is_file() {
                return Err(ConfigError::MissingFile { field: "template.file", path: p.clone() });
            }
        }
        if self.judge.kind == JudgeKind::Sl && self.env() == EnvTag::Matrix {
            return Err(invalid("judge.kind", "matrix objectives have no supervised judge"));
        }
        if !(self.llm.temperature >= 0.0 && self.llm.temperature.is_finite()) {
            return Err(invalid("llm.temperature", "must be finite and >= 0"));
        }
        if self.llm.max_tokens == 0 {
            return Err(invalid("llm.max_tokens", "must be at least 1"));
        }
        if self.llm.batch_size == 0 {
            return Err(invalid("llm.batch_size", "must be at least 1"));
        }
        if self.sl.examples == Some(0) {
            return Err(invalid("sl.examples", "must be at least 1"));
        }
        if !(self.sl.lr > 0.0 && self.sl.lr.is_finite()) {
            return Err(invalid("sl.lr", "must be positive"));
        }
        if self.eval.contexts == 0 || self.eval.dialogues == 0 {
            return Err(invalid("eval", "contexts and dialogues must be positive"));
        }
        if !(0.0..=1.0).contains(&self.sweep.reference_noise) {
            return Err(invalid("sweep.reference_noise", "must be a probability"));
        }
        if self.sweep.sizes.is_empty() {
            return Err(invalid("sweep.sizes", "at least one size is required"));
        }
        self.reinforce.validate().map_err(|e| invalid("reinforce", e.to_string()))?;
        self.matrix_games()?;
        Ok(())
    }

    /// The config as TOML, every default included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 (hex) over every setting that can change results. The output
    /// directory and cache location are left out; referenced files enter by
    /// content rather than by path.
    pub fn digest(&self) -> Result<String, ConfigError> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.llm.cache = None;
        if let Some(p) = &self.judge.script {
            c.judge.script = Some(PathBuf::from(format!("sha256:{}", file_digest("judge.script", p)?)));
        }
        if let Some(p) = &self.template.file {
            c.template.file = Some(PathBuf::from(format!("sha256:{}", file_digest("template.file", p)?)));
        }
        Ok(hex::encode(Sha256::digest(c.to_toml().as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut c = ExperimentConfig::parse(text).map_err(|message| ConfigError::Parse { path: "t".into(), message })?;
        c.resolve(Path::new("/tmp"))?;
        Ok(c)
    }

    #[test]
    fn defaults_follow_the_environment() {
        let u = parse("objective = \"ultimatum:percent-30\"").unwrap();
        assert_eq!(u.seeds, vec![0, 1, 2]);
        assert_eq!(u.dqn_config().unwrap(), DqnConfig::ultimatum());
        assert_eq!(u.eval.labeling, Some(LabelingSource::FixedSet));
        assert_eq!(u.template.n_examples, Some(10));
        let m = parse("objective = \"matrix:equality\"\n[dqn]\nlr = 0.001").unwrap();
        let d = m.dqn_config().unwrap();
        assert_eq!((d.steps, d.lr), (500, 0.001));
        assert_eq!(m.eval.games.len(), 4);
        assert_eq!(m.template.zero_shot, Some(true));
        let n = parse("objective = \"negotiation:stubborn\"").unwrap();
        assert_eq!(n.eval.labeling, Some(LabelingSource::Stream));
        assert_eq!(n.sl.examples, Some(3));
    }

    #[test]
    fn resolved_copy_reloads_to_the_same_config() {
        let c = parse("objective = \"matrix:rawlsian-fairness\"\nseeds = [4, 5]\n[template]\nscramble = true").unwrap();
        let again = parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn errors_name_the_field() {
        let e = parse("objective = \"ultimatum:percent-30\"\nseeds = []").unwrap_err().to_string();
        assert!(e.contains("seeds"), "{e}");
        let e = parse("objective = \"ultimatum:percent-30\"\n[judge]\nnoies = 0.1").unwrap_err().to_string();
        assert!(e.contains("noies") && e.contains("line 3"), "{e}");
        let e = parse("objective = \"ultimatum:percent-30\"\n[dqn]\nstepz = 3").unwrap_err().to_string();
        assert!(e.contains("dqn") && e.contains("stepz"), "{e}");
        let e = parse("objective = \"ultimatum:percent-30\"\n[template]\nfile = \"nowhere.json\"").unwrap_err().to_string();
        assert!(e.contains("template.file") && e.contains("nowhere.json"), "{e}");
        let e = parse("objective = \"poker:bluff\"").unwrap_err().to_string();
        assert!(e.contains("poker"), "{e}");
        let e = parse("objective = \"matrix:equality\"\n[judge]\nkind = \"llm\"\nbackend = \"remote\"").unwrap_err().to_string();
        assert!(e.contains("judge.endpoint"), "{e}");
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c = ExperimentConfig::parse("objective = \"ultimatum:payoff-10\"").unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            backend: Some(BackendKind::MockOracle),
            no_rho1: true,
            ..Overrides::default()
        });
        assert_eq!(c.seeds, vec![9]);
        assert_eq!(c.judge.kind, JudgeKind::Llm);
        assert!(!c.template.include_rho1);
    }

    #[test]
    fn digest_ignores_locations_but_not_settings() {
        let a = parse("objective = \"ultimatum:payoff-10\"").unwrap();
        let mut b = a.clone();
        b.output_dir = "/elsewhere".into();
        b.llm.cache = Some("/elsewhere/c.bin".into());
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.judge.noise = 0.1;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }
}
