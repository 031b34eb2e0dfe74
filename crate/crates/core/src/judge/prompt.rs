//! Prompt assembly: task description, objective specification (few-shot
//! examples or a zero-shot description), the query episode and the question.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::serialize_episode;
use super::{EpisodeRecord, JudgeError, Objective};
use crate::negotiation::{
    run_dialogue, sample_context, style_label, Agent, DialogueAct, NegotiationError, NegotiationStyle,
    RuleBasedPartner, TrajectoryRecord, DEFAULT_MAX_REJECTIONS,
};
use crate::ultimatum::{desired_action, label, sample_proposals, Proposal, ResponderAction, UltimatumObjective};

pub const DEFAULT_LAYOUT: &str = "{RHO1}\n\n{RHO2}\n\n{EPISODE}\n\n{QUESTION}";
const STEP_BY_STEP: &str = "Let's think step by step.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub record: EpisodeRecord,
    pub label: bool,
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rho2 {
    Examples(Vec<FewShotExample>),
    Description { description: String, definition_request: String, cue: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub include_rho1: bool,
    /// Evaluate matrix judges on games whose payoffs were shuffled across
    /// action pairs, so well-known games cannot be recognized.
    pub scramble_outcomes: bool,
    pub zero_shot: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self { include_rho1: true, scramble_outcomes: false, zero_shot: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub rho1: String,
    pub rho2: Rho2,
    pub rho4: String,
    pub options: PromptOptions,
    /// Arrangement with the placeholders `{RHO1}`, `{RHO2}`, `{EPISODE}` and
    /// `{QUESTION}`.
    pub layout: String,
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), JudgeError> {
        let bad = |m: &str| Err(JudgeError::Template(m.to_string()));
        match &self.rho2 {
            Rho2::Examples(e) if e.is_empty() => return bad("no examples"),
            Rho2::Examples(_) if self.options.zero_shot => return bad("zero-shot template carries examples"),
            Rho2::Description { description, .. } if description.trim().is_empty() => {
                return bad("empty objective description")
            }
            Rho2::Description { .. } if !self.options.zero_shot => return bad("description without zero_shot"),
            _ => {}
        }
        if self.rho4.trim().is_empty() {
            return bad("empty question");
        }
        for p in ["{RHO1}", "{RHO2}", "{EPISODE}", "{QUESTION}"] {
            if self.layout.matches(p).count() != 1 {
                return Err(JudgeError::Template(format!("layout must contain {p} exactly once")));
            }
        }
        Ok(())
    }

    pub fn render_rho2(&self) -> String {
        match &self.rho2 {
            Rho2::Examples(examples) => examples
                .iter()
                .map(|e| {
                    format!(
                        "{}\n{}\n{}",
                        serialize_episode(&e.record),
                        self.rho4,
                        render_answer(e.label, e.explanation.as_deref())
                    )
                })
                .collect::<Vec<_>>()
                .join("\n\n"),
            Rho2::Description { description, definition_request, cue } => {
                [description.as_str(), definition_request, cue].iter().filter(|s| !s.is_empty()).cloned().collect::<Vec<_>>().join("\n")
            }
        }
    }

    pub fn examples(&self) -> &[FewShotExample] {
        match &self.rho2 {
            Rho2::Examples(e) => e,
            Rho2::Description { .. } => &[],
        }
    }
}

/// Answer line for a few-shot example.
pub fn render_answer(label: bool, explanation: Option<&str>) -> String {
    let verdict = if label { "Yes" } else { "No" };
    match explanation {
        Some(e) => format!("{verdict}. {STEP_BY_STEP} {e}"),
        None => format!("{verdict}."),
    }
}

pub fn build_prompt(template: &PromptTemplate, record: &EpisodeRecord) -> Result<String, JudgeError> {
    template.validate()?;
    let layout = if template.options.include_rho1 {
        template.layout.replace("{RHO1}", &template.rho1)
    } else {
        let stripped = template.layout.replace("{RHO1}", "");
        stripped.trim_start().to_string()
    };
    // Placeholders are substituted in one pass so text inside a component can
    // never be mistaken for a placeholder.
    let mut out = String::with_capacity(layout.len() + 512);
    let mut rest = layout.as_str();
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        let (fill, len) = if tail.starts_with("{RHO2}") {
            (template.render_rho2(), 6)
        } else if tail.starts_with("{EPISODE}") {
            (serialize_episode(record), 9)
        } else if tail.starts_with("{QUESTION}") {
            (template.rho4.clone(), 10)
        } else {
            ("{".to_string(), 1)
        };
        out.push_str(&fill);
        rest = &tail[len..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleBalance {
    /// Alternating Yes/No, starting with Yes.
    #[default]
    Counterbalanced,
    AllPositive,
    AllNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplanationSet {
    #[default]
    #[serde(rename = "set-1")]
    Set1,
    #[serde(rename = "set-2")]
    Set2,
    None,
}

/// Everything needed to author a default template for an objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSettings {
    pub n_examples: usize,
    pub explanations: ExplanationSet,
    pub balance: ExampleBalance,
    /// Word used for the negotiation style in the question.
    pub keyword: Option<String>,
    pub options: PromptOptions,
    pub example_seed: u64,
}

impl TemplateSettings {
    /// Ten unexplained examples for the Ultimatum game, three explained
    /// examples for negotiation, a zero-shot description for matrix games.
    pub fn standard(objective: &Objective) -> Self {
        let (n_examples, explanations, zero_shot) = match objective {
            Objective::Ultimatum(_) => (10, ExplanationSet::None, false),
            Objective::Matrix(_) => (0, ExplanationSet::None, true),
            Objective::Negotiation(_) => (3, ExplanationSet::Set1, false),
        };
        Self {
            n_examples,
            explanations,
            balance: ExampleBalance::Counterbalanced,
            keyword: None,
            options: PromptOptions { zero_shot, ..PromptOptions::default() },
            example_seed: 0,
        }
    }
}

const ULTIMATUM_RHO1: &str = "In the Ultimatum Game, a Proposer is given a sum of money and offers part of it to a \
Responder. If the Responder accepts, the money is split as offered. If the Responder rejects, neither player gets \
anything. A user has a preference about which offers the Responder should accept.";
const ULTIMATUM_RHO4: &str = "Does the Responder's decision match the user's preference? Answer Yes or No.";
const MATRIX_RHO1: &str = "Two players each choose one of two actions at the same time. Every combination of \
choices is an outcome that pays each player some amount.";
const NEGOTIATION_RHO1: &str = "Alice and Bob are negotiating how to divide some books, hats and balls. Each of \
them privately values every item, and each one's values add up to 10 points over the whole inventory. A proposal \
says what each side receives. The dialogue ends in an agreement, or in no deal, where both get 0 points.";

pub(crate) fn negotiation_question(keyword: &str) -> String {
    format!("Is Alice a {keyword} negotiator? Answer Yes or No.")
}

/// Authors a template for `objective`, drawing examples from a seeded pool.
pub fn default_template(objective: &Objective, settings: &TemplateSettings) -> Result<PromptTemplate, JudgeError> {
    let mut options = settings.options;
    let (rho1, rho2, rho4) = match objective {
        Objective::Matrix(concept) => {
            options.zero_shot = true;
            let name = concept.display_name();
            let rho2 = Rho2::Description {
                description: format!("A user wants the players to reach an outcome that satisfies {name}."),
                definition_request: format!(
                    "First, state the definition of {name}. Then check every outcome below against it."
                ),
                cue: STEP_BY_STEP.to_string(),
            };
            let rho4 = format!(
                "Which of the outcomes satisfy {name}? Write every such letter after \"Answer:\", or write \"Answer: none\"."
            );
            (MATRIX_RHO1.to_string(), rho2, rho4)
        }
        Objective::Ultimatum(_) | Objective::Negotiation(_) => {
            if settings.options.zero_shot {
                return Err(JudgeError::Template(format!("no zero-shot description for {objective}")));
            }
            let pool_size = 200.max(settings.n_examples * 4);
            let pool = example_pool(objective, pool_size, settings.example_seed)?;
            let chosen = select_examples(&pool, settings.n_examples, settings.balance)?;
            let examples = chosen
                .into_iter()
                .map(|(record, label)| {
                    let explanation = explain(objective, &record, label, settings.explanations);
                    FewShotExample { record, label, explanation }
                })
                .collect();
            match objective {
                Objective::Negotiation(style) => {
                    let keyword = settings.keyword.clone().unwrap_or_else(|| style.keyword().to_string());
                    (NEGOTIATION_RHO1.to_string(), Rho2::Examples(examples), negotiation_question(&keyword))
                }
                _ => (ULTIMATUM_RHO1.to_string(), Rho2::Examples(examples), ULTIMATUM_RHO4.to_string()),
            }
        }
    };
    let template = PromptTemplate { rho1, rho2, rho4, options, layout: DEFAULT_LAYOUT.to_string() };
    template.validate()?;
    Ok(template)
}

/// Oracle-labeled episodes to draw few-shot examples (and supervised
/// training data) from.
pub fn example_pool(objective: &Objective, n: usize, seed: u64) -> Result<Vec<(EpisodeRecord, bool)>, JudgeError> {
    let mut rng = crate::seed::rng(crate::seed::derive(seed, "example-pool"));
    match objective {
        Objective::Ultimatum(o) => {
            let proposals = sample_proposals(n.max(1), &mut rng).map_err(|e| JudgeError::Contract(e.to_string()))?;
            Ok(proposals
                .into_iter()
                .take(n)
                .map(|p| {
                    let action = if rng.random_bool(0.5) { ResponderAction::Accept } else { ResponderAction::Reject };
                    (EpisodeRecord::Ultimatum { proposal: p, action }, label(*o, p, action))
                })
                .collect())
        }
        Objective::Negotiation(style) => Ok(scripted_dialogues(n, &mut rng)?
            .into_iter()
            .map(|r| {
                let l = style_label(*style, &r);
                (EpisodeRecord::Negotiation(r), l)
            })
            .collect()),
        Objective::Matrix(_) => Err(JudgeError::Contract("matrix objectives are specified zero-shot".to_string())),
    }
}

/// Dialogues between the partner and a randomized scripted Alice whose
/// tendency to repeat herself and to give ground varies per dialogue.
pub(crate) fn scripted_dialogues<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<TrajectoryRecord>, JudgeError> {
    let bob = RuleBasedPartner::default();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ctx = sample_context(rng, DEFAULT_MAX_REJECTIONS).map_err(|e| JudgeError::Contract(e.to_string()))?;
        let first = if rng.random_bool(0.5) { Agent::Alice } else { Agent::Bob };
        let repeat = rng.random_range(0.0..0.8);
        let agreeable = rng.random_range(0.0..0.6);
        let allocations = ctx.allocations();
        let state = run_dialogue::<NegotiationError>(ctx, first, &bob, |s| {
            if let Some((by, _)) = s.standing() {
                if by == Agent::Bob && rng.random_bool(agreeable) {
                    return Ok(DialogueAct::Agree);
                }
            }
            if s.turns_of(Agent::Alice) >= 8 && rng.random_bool(0.3) {
                return Ok(DialogueAct::End);
            }
            let previous = s.last_allocation_of(Agent::Alice);
            let a = match previous {
                Some(p) if rng.random_bool(repeat) => p,
                _ => allocations[rng.random_range(0..allocations.len())],
            };
            Ok(if previous == Some(a) && rng.random_bool(0.5) { DialogueAct::Insist(a) } else { DialogueAct::Propose(a) })
        })
        .map_err(|e| JudgeError::Contract(e.to_string()))?;
        out.push(state.to_record().map_err(|e| JudgeError::Contract(e.to_string()))?);
    }
    Ok(out)
}

/// Picks `n` examples from `pool` in pool order according to `balance`.
pub fn select_examples(
    pool: &[(EpisodeRecord, bool)],
    n: usize,
    balance: ExampleBalance,
) -> Result<Vec<(EpisodeRecord, bool)>, JudgeError> {
    let wanted: Vec<bool> = (0..n)
        .map(|i| match balance {
            ExampleBalance::Counterbalanced => i % 2 == 0,
            ExampleBalance::AllPositive => true,
            ExampleBalance::AllNegative => false,
        })
        .collect();
    let mut positives = pool.iter().filter(|(_, l)| *l);
    let mut negatives = pool.iter().filter(|(_, l)| !*l);
    wanted
        .into_iter()
        .map(|w| {
            let next = if w { positives.next() } else { negatives.next() };
            next.cloned().ok_or_else(|| {
                JudgeError::Contract(format!("example pool has too few {} examples", if w { "positive" } else { "negative" }))
            })
        })
        .collect()
}

fn verb(a: ResponderAction) -> &'static str {
    match a {
        ResponderAction::Accept => "accept",
        ResponderAction::Reject => "reject",
    }
}

fn explain(objective: &Objective, record: &EpisodeRecord, label: bool, set: ExplanationSet) -> Option<String> {
    if set == ExplanationSet::None {
        return None;
    }
    let second = set == ExplanationSet::Set2;
    match (objective, record) {
        (Objective::Ultimatum(o), EpisodeRecord::Ultimatum { proposal, action }) => {
            Some(explain_ultimatum(*o, *proposal, *action, second))
        }
        (Objective::Negotiation(style), EpisodeRecord::Negotiation(r)) => Some(explain_negotiation(*style, r, label, second)),
        _ => None,
    }
}

fn explain_ultimatum(o: UltimatumObjective, p: Proposal, action: ResponderAction, second: bool) -> String {
    let want = desired_action(o, p);
    let pct = 100.0 * p.responder_share();
    let (amount, total) = (p.responder_amount(), p.total());
    let verdict = if want == action { "did" } else { "did not" };
    if !second {
        let rule = match o {
            UltimatumObjective::PercentThreshold(t) => {
                format!("The Responder is offered ${amount} of ${total}, which is {pct:.1}% of the total. Offers below {t}% should be rejected and the rest accepted.")
            }
            UltimatumObjective::PayoffThreshold(t) => {
                format!("The Responder is offered ${amount}. Offers below ${t} should be rejected and the rest accepted.")
            }
            UltimatumObjective::InequityAversion => {
                format!("The Responder is offered ${amount} of ${total}. Only an exact even split should be accepted.")
            }
        };
        format!("{rule} So the Responder should {}, and {verdict}.", verb(want))
    } else {
        let fact = match o {
            UltimatumObjective::PercentThreshold(t) => {
                let side = if want == ResponderAction::Accept { "at or above" } else { "below" };
                format!("A {pct:.1}% share is {side} the {t}% cut-off")
            }
            UltimatumObjective::PayoffThreshold(t) => {
                let side = if want == ResponderAction::Accept { "at or above" } else { "below" };
                format!("${amount} is {side} the ${t} cut-off")
            }
            UltimatumObjective::InequityAversion => {
                let kind = if want == ResponderAction::Accept { "an even" } else { "an uneven" };
                format!("${amount} of ${total} is {kind} split")
            }
        };
        format!("{fact}, so the preferred response is to {}. The Responder chose to {}.", verb(want), verb(action))
    }
}

fn explain_negotiation(style: NegotiationStyle, r: &TrajectoryRecord, label: bool, second: bool) -> String {
    let (alice, bob) = r.score();
    let repeated = match style {
        NegotiationStyle::Stubborn => label,
        NegotiationStyle::Versatile => !label,
        _ => false,
    };
    match (style, second) {
        (NegotiationStyle::Stubborn | NegotiationStyle::Versatile, false) => {
            if repeated {
                "Alice proposed the same split more than once.".to_string()
            } else {
                "Alice never proposed the same split twice.".to_string()
            }
        }
        (NegotiationStyle::Stubborn | NegotiationStyle::Versatile, true) => {
            if repeated {
                "Alice kept returning to an offer she had already made.".to_string()
            } else {
                "Every offer Alice made was a new one.".to_string()
            }
        }
        (_, false) => format!("Alice ended with {alice} points and Bob with {bob} points."),
        (_, true) => {
            let cmp = if alice > bob {
                "more than"
            } else if alice < bob {
                "fewer than"
            } else {
                "as many as"
            };
            format!("Alice scored {cmp} Bob ({alice} to {bob}).")
        }
    }
}
