//! Results CSV: one row per seed, floats with six decimals, `NA` where a
//! metric does not apply.

use llmreward_core::eval::GAP;
use llmreward_core::judge::Objective;

pub const RESULTS_HEADER: &str = "seed,env,objective,judge,labeling_accuracy,parseable_labeling_accuracy,unparseable,\
agent_accuracy,skipped_episodes,advantage,diversity,agreement_rate,config_digest";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    pub objective: Objective,
    pub judge: String,
    pub labeling_accuracy: Option<f64>,
    pub parseable_labeling_accuracy: Option<f64>,
    pub unparseable: u64,
    pub agent_accuracy: Option<f64>,
    pub skipped_episodes: u64,
    pub advantage: Option<f64>,
    pub diversity: Option<f64>,
    pub agreement_rate: Option<f64>,
    pub config_digest: String,
}

impl ResultRow {
    pub fn new(seed: u64, objective: Objective, judge: String, config_digest: String) -> Self {
        Self {
            seed,
            objective,
            judge,
            labeling_accuracy: None,
            parseable_labeling_accuracy: None,
            unparseable: 0,
            agent_accuracy: None,
            skipped_episodes: 0,
            advantage: None,
            diversity: None,
            agreement_rate: None,
            config_digest,
        }
    }

    fn fields(&self) -> Vec<String> {
        let objective = self.objective.to_string();
        let (_, name) = objective.split_once(':').unwrap_or(("", &objective));
        vec![
            self.seed.to_string(),
            self.objective.env().to_string(),
            name.to_string(),
            self.judge.clone(),
            float(self.labeling_accuracy),
            float(self.parseable_labeling_accuracy),
            self.unparseable.to_string(),
            float(self.agent_accuracy),
            self.skipped_episodes.to_string(),
            float(self.advantage),
            float(self.diversity),
            float(self.agreement_rate),
            self.config_digest.clone(),
        ]
    }
}

pub fn float(v: Option<f64>) -> String {
    v.map_or_else(|| GAP.to_string(), |v| format!("{v:.6}"))
}

/// Writes `header` and `rows` as CSV text.
pub fn csv_text(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header.split(',')).expect("write to memory");
    for r in rows {
        w.write_record(&r).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("CSV of UTF-8 fields")
}

/// Rows sorted by seed.
pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.seed);
    csv_text(RESULTS_HEADER, sorted.into_iter().map(ResultRow::fields))
}
