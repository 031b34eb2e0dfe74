//! Metrics and analyses: labeling accuracy, seed aggregation, the
//! data-efficiency sweep, the prompt-variation suite and the qualitative
//! negotiation table.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{
    default_template, example_pool, scripted_dialogues, select_examples, train_sl_judge, Completer, EnvTag, EpisodeRecord,
    ExampleBalance, ExplanationSet, Judge, JudgeError, Judgment, LabeledExample, LlmJudge, Objective, OutcomeJudgment,
    SlConfig, TemplateSettings,
};
use crate::math::mean_std;
use crate::matrix::{canonical_games, satisfying_outcomes, scramble, score_label_set, MatrixGame, OutcomeSet, SolutionConcept};
use crate::negotiation::{qualitative_metrics, style_label, NegotiationStyle, QualitativeMetrics, TrajectoryRecord};
use crate::rl::TrainError;
use crate::ultimatum::{label, sample_covering_proposals, Proposal, ResponderAction, UltimatumObjective};

/// Proposals in the Ultimatum evaluation set.
pub const ULTIMATUM_EVAL_SIZE: usize = 50;
/// Attempts at drawing a set that straddles every threshold.
pub const COVERAGE_TRIES: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Contract(String),
}

/// Ground truth for one evaluation item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Truth {
    Label(bool),
    Outcomes(OutcomeSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub record: EpisodeRecord,
    pub truth: Truth,
}

/// Oracle-labeled episodes for one objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub objective: Objective,
    pub items: Vec<EvalItem>,
    /// Seed the episodes were drawn from.
    pub seed: u64,
}

impl EvalSet {
    pub fn env(&self) -> EnvTag {
        self.objective.env()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Both Responder actions for every proposal.
    pub fn ultimatum(objective: UltimatumObjective, proposals: &[Proposal], seed: u64) -> Self {
        let items = proposals
            .iter()
            .flat_map(|&proposal| {
                ResponderAction::ALL.into_iter().map(move |action| EvalItem {
                    record: EpisodeRecord::Ultimatum { proposal, action },
                    truth: Truth::Label(label(objective, proposal, action)),
                })
            })
            .collect();
        Self { objective: Objective::Ultimatum(objective), items, seed }
    }

    /// The standard Ultimatum set: [`ULTIMATUM_EVAL_SIZE`] proposals that
    /// straddle every threshold, with both actions each.
    pub fn ultimatum_standard(objective: UltimatumObjective, seed: u64) -> Result<Self, EvalError> {
        let (proposals, used) = ultimatum_eval_proposals(seed)?;
        Ok(Self::ultimatum(objective, &proposals, used))
    }

    pub fn matrix(concept: SolutionConcept, games: &[MatrixGame], seed: u64) -> Self {
        let items = games
            .iter()
            .map(|g| EvalItem {
                record: EpisodeRecord::Matrix { game: g.clone() },
                truth: Truth::Outcomes(satisfying_outcomes(g, concept)),
            })
            .collect();
        Self { objective: Objective::Matrix(concept), items, seed }
    }

    /// The four canonical games, or their payoff-shuffled versions.
    pub fn matrix_standard(concept: SolutionConcept, scrambled: bool, seed: u64) -> Self {
        let mut games = canonical_games();
        if scrambled {
            let mut rng = crate::seed::rng(crate::seed::derive(seed, "scramble"));
            games = games.iter().map(|g| scramble(g, &mut rng)).collect();
        }
        Self::matrix(concept, &games, seed)
    }

    pub fn negotiation(style: NegotiationStyle, records: Vec<TrajectoryRecord>, seed: u64) -> Self {
        let items = records
            .into_iter()
            .map(|r| {
                let truth = Truth::Label(style_label(style, &r));
                EvalItem { record: EpisodeRecord::Negotiation(r), truth }
            })
            .collect();
        Self { objective: Objective::Negotiation(style), items, seed }
    }

    /// `n` dialogues between the partner and a randomized scripted Alice.
    pub fn negotiation_sample(style: NegotiationStyle, n: usize, seed: u64) -> Result<Self, EvalError> {
        let mut rng = crate::seed::rng(crate::seed::derive(seed, "eval-dialogues"));
        Ok(Self::negotiation(style, scripted_dialogues(n, &mut rng)?, seed))
    }

    /// Items with binary labels, as supervised training examples.
    pub fn labeled_examples(&self) -> Vec<LabeledExample> {
        self.items
            .iter()
            .filter_map(|i| match i.truth {
                Truth::Label(label) => Some(LabeledExample { record: i.record.clone(), label }),
                Truth::Outcomes(_) => None,
            })
            .collect()
    }
}

/// Proposals of the standard Ultimatum set and the seed that produced them.
pub fn ultimatum_eval_proposals(seed: u64) -> Result<(Vec<Proposal>, u64), EvalError> {
    sample_covering_proposals(ULTIMATUM_EVAL_SIZE, seed, COVERAGE_TRIES).map_err(|e| EvalError::Contract(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingReport {
    pub n: usize,
    pub correct: usize,
    pub unparseable: usize,
    /// Items the judge could not be asked about (only when tolerated).
    pub unavailable: usize,
    /// `correct / (n - unavailable)`; unparseable answers count as wrong.
    pub accuracy: f64,
    /// `correct / parseable`, the reading that drops unparseable answers.
    pub parseable_accuracy: Option<f64>,
}

fn labeling(judge: &impl Judge, set: &EvalSet, tolerate_unavailable: bool) -> Result<LabelingReport, EvalError> {
    if set.is_empty() {
        return Err(EvalError::Empty);
    }
    if judge.env() != set.env() {
        return Err(JudgeError::EnvMismatch { expected: set.env(), actual: judge.env() }.into());
    }
    let (mut correct, mut unparseable, mut unavailable) = (0, 0, 0);
    for item in &set.items {
        let verdict = match (&item.record, item.truth) {
            (EpisodeRecord::Matrix { game }, Truth::Outcomes(truth)) => judge.judge_outcomes(game).map(|j| match j {
                OutcomeJudgment::Outcomes(predicted) => Some(score_label_set(predicted, truth)),
                OutcomeJudgment::Unparseable(_) => None,
            }),
            (record, Truth::Label(truth)) if record.env() != EnvTag::Matrix => judge.judge(record).map(|j| match j {
                Judgment::Reward(r) => Some(r == truth),
                Judgment::Unparseable(_) => None,
            }),
            _ => return Err(EvalError::Contract("matrix items need outcome sets and other items need labels".into())),
        };
        match verdict {
            Ok(Some(ok)) => correct += usize::from(ok),
            Ok(None) => unparseable += 1,
            Err(JudgeError::Unavailable(_)) if tolerate_unavailable => unavailable += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let n = set.len();
    let asked = n - unavailable;
    let parseable = asked - unparseable;
    Ok(LabelingReport {
        n,
        correct,
        unparseable,
        unavailable,
        accuracy: if asked == 0 { 0.0 } else { correct as f64 / asked as f64 },
        parseable_accuracy: (parseable > 0).then(|| correct as f64 / parseable as f64),
    })
}

/// Agreement between the judge and the oracle labels of `set`. Matrix items
/// are scored with [`score_label_set`]; everything else by equality of the
/// binary reward.
pub fn labeling_accuracy(judge: &impl Judge, set: &EvalSet) -> Result<LabelingReport, EvalError> {
    labeling(judge, set, false)
}

/// Like [`labeling_accuracy`], but items the judge cannot answer (for
/// example a cache-only backend missing an entry) are counted in
/// `unavailable` and left out instead of aborting.
pub fn labeling_accuracy_partial(judge: &impl Judge, set: &EvalSet) -> Result<LabelingReport, EvalError> {
    labeling(judge, set, true)
}

/// Fraction of dialogues that satisfy the style.
pub fn style_accuracy(style: NegotiationStyle, records: &[TrajectoryRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(records.iter().filter(|r| style_label(style, r)).count() as f64 / records.len() as f64)
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate, EvalError> {
    if values.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mean, std) = mean_std(values);
    Ok(Aggregate { mean, std, n: values.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Extra oracle-labeled examples added to the base set.
    pub extra: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Sizes for which no class-balanced batch could be drawn.
    pub skipped: Vec<usize>,
}

/// Balanced extra examples for the sweep, drawn from a pool that never
/// overlaps the base examples' seed stream.
fn extra_examples(objective: &Objective, k: usize, seed: u64) -> Result<Vec<LabeledExample>, JudgeError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let pool = example_pool(objective, (4 * k).max(200), crate::seed::derive(seed, "sweep-extra"))?;
    Ok(select_examples(&pool, k, ExampleBalance::Counterbalanced)?
        .into_iter()
        .map(|(record, label)| LabeledExample { record, label })
        .collect())
}

/// Trains a supervised judge on `base` plus `k` extra oracle-labeled
/// examples for every `k` in `sizes` and every seed, and reports labeling
/// accuracy on `eval`.
pub fn data_efficiency_sweep(
    base: &[LabeledExample],
    sizes: &[usize],
    eval: &EvalSet,
    seeds: &[u64],
    config: &SlConfig,
) -> Result<SweepReport, EvalError> {
    if seeds.is_empty() || sizes.is_empty() {
        return Err(EvalError::Empty);
    }
    let objective = eval.objective;
    let mut report = SweepReport { rows: Vec::new(), skipped: Vec::new() };
    'sizes: for &k in sizes {
        let mut accuracies = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let extra = match extra_examples(&objective, k, seed) {
                Ok(e) => e,
                Err(JudgeError::Contract(_)) => {
                    report.skipped.push(k);
                    continue 'sizes;
                }
                Err(e) => return Err(e.into()),
            };
            let mut examples = base.to_vec();
            examples.extend(extra);
            let (judge, _) =
                train_sl_judge(eval.env(), &format!("sweep-{k}"), &examples, &SlConfig { seed, ..config.clone() })?;
            accuracies.push(labeling_accuracy(&judge, eval)?.accuracy);
        }
        let (mean, std) = mean_std(&accuracies);
        report.rows.push(SweepRow { extra: k, accuracies, mean, std });
    }
    Ok(report)
}

/// Synonyms tried in place of the Stubborn keyword.
pub const STUBBORN_SYNONYMS: [&str; 4] = ["stubborn", "headstrong", "obstinate", "froward"];

/// One prompt configuration of the variation suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptVariant {
    pub name: String,
    pub keyword: String,
    pub balance: ExampleBalance,
    pub explanations: ExplanationSet,
    pub include_rho1: bool,
}

/// The standard prompt, then one factor changed at a time: each synonym,
/// each other example balance, each other explanation set, and the prompt
/// without the task description.
pub fn prompt_variants() -> Vec<PromptVariant> {
    let base = PromptVariant {
        name: "base".into(),
        keyword: STUBBORN_SYNONYMS[0].into(),
        balance: ExampleBalance::Counterbalanced,
        explanations: ExplanationSet::Set1,
        include_rho1: true,
    };
    let mut out = alloc::vec![base.clone()];
    for k in &STUBBORN_SYNONYMS[1..] {
        out.push(PromptVariant { name: format!("keyword={k}"), keyword: (*k).into(), ..base.clone() });
    }
    for (b, n) in [(ExampleBalance::AllPositive, "all-positive"), (ExampleBalance::AllNegative, "all-negative")] {
        out.push(PromptVariant { name: format!("examples={n}"), balance: b, ..base.clone() });
    }
    for (e, n) in [(ExplanationSet::Set2, "set-2"), (ExplanationSet::None, "none")] {
        out.push(PromptVariant { name: format!("explanations={n}"), explanations: e, ..base.clone() });
    }
    out.push(PromptVariant { name: "no-task-description".into(), include_rho1: false, ..base });
    out
}

impl PromptVariant {
    pub fn settings(&self, objective: &Objective, example_seed: u64) -> TemplateSettings {
        let mut s = TemplateSettings::standard(objective);
        s.keyword = Some(self.keyword.clone());
        s.balance = self.balance;
        s.explanations = self.explanations;
        s.options.include_rho1 = self.include_rho1;
        s.example_seed = example_seed;
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub seed: u64,
    pub report: LabelingReport,
}

/// Labeling accuracy of the prompted judge for every variant and seed.
/// The seed picks the few-shot examples. `completer` is called once per
/// variant and seed; items a cache-only backend cannot answer are reported
/// in `unavailable` rather than failing the suite.
pub fn prompt_variation_suite<C: Completer>(
    style: NegotiationStyle,
    variants: &[PromptVariant],
    eval: &EvalSet,
    seeds: &[u64],
    mut completer: impl FnMut() -> C,
) -> Result<Vec<VariantRow>, EvalError> {
    let objective = Objective::Negotiation(style);
    if eval.objective != objective {
        return Err(EvalError::Contract(format!("evaluation set is for {}, not {objective}", eval.objective)));
    }
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for v in variants {
        for &seed in seeds {
            let template = default_template(&objective, &v.settings(&objective, seed))?;
            let judge = LlmJudge::new(objective, template, completer())?;
            rows.push(VariantRow { variant: v.name.clone(), seed, report: labeling_accuracy_partial(&judge, eval)? });
        }
    }
    Ok(rows)
}

/// One line of the qualitative table; `None` marks a missing style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitativeRow {
    pub style: NegotiationStyle,
    pub seeds: usize,
    pub advantage: Option<Aggregate>,
    pub diversity: Option<Aggregate>,
    pub agreement_rate: Option<Aggregate>,
}

/// Aggregates per-seed metrics for every style, in the canonical style
/// order. Styles absent from `per_style` get an empty row.
pub fn qualitative_table(per_style: &[(NegotiationStyle, Vec<QualitativeMetrics>)]) -> Vec<QualitativeRow> {
    NegotiationStyle::ALL
        .into_iter()
        .map(|style| {
            let metrics = per_style.iter().find(|(s, m)| *s == style && !m.is_empty()).map(|(_, m)| m.as_slice());
            let agg = |f: fn(&QualitativeMetrics) -> f64| {
                metrics.map(|m| aggregate(&m.iter().map(f).collect::<Vec<_>>()).expect("nonempty"))
            };
            QualitativeRow {
                style,
                seeds: metrics.map_or(0, <[_]>::len),
                advantage: agg(|m| m.advantage),
                diversity: agg(|m| m.diversity),
                agreement_rate: agg(|m| m.agreement_rate),
            }
        })
        .collect()
}

/// Marker written for a missing table cell.
pub const GAP: &str = "NA";

/// The qualitative table as CSV, one row per style.
pub fn qualitative_csv(rows: &[QualitativeRow]) -> String {
    let mut out = String::from("style,seeds,advantage_mean,advantage_std,diversity_mean,diversity_std,agreement_rate_mean,agreement_rate_std\n");
    for r in rows {
        let _ = write!(out, "{},{}", r.style, r.seeds);
        for a in [r.advantage, r.diversity, r.agreement_rate] {
            match a {
                Some(a) => {
                    let _ = write!(out, ",{:.6},{:.6}", a.mean, a.std);
                }
                None => {
                    let _ = write!(out, ",{GAP},{GAP}");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Metrics of one set of evaluation dialogues.
pub fn negotiation_metrics(records: &[TrajectoryRecord]) -> Result<QualitativeMetrics, EvalError> {
    qualitative_metrics(records).map_err(|_| EvalError::Empty)
}
