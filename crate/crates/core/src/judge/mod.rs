//! Reward judges.
//!
//! A judge maps an [`EpisodeRecord`] to a binary [`Judgment`]. Matrix games
//! are judged as a whole: the judge names the set of joint outcomes it
//! considers acceptable ([`OutcomeJudgment`]) and the learner is rewarded when
//! its chosen outcome is in that set.
//!
//! Backends: [`GroundTruthJudge`] (exact objectives), [`LlmJudge`] (prompt a
//! text model through a [`Completer`]) and the supervised [`SlJudge`].

mod backends;
mod episode;
mod mock;
mod parse;
mod prompt;
mod sl;

pub use backends::{GroundTruthJudge, Judge, LlmJudge};
pub use episode::{find_last_episode, parse_episode, serialize_episode, EpisodeRecord};
pub use mock::{MockOracle, MockScript};
pub use parse::{parse_outcome_response, parse_response};
pub use prompt::{
    build_prompt, default_template, example_pool, render_answer, select_examples, ExampleBalance, ExplanationSet,
    FewShotExample, PromptOptions, PromptTemplate, Rho2, TemplateSettings, DEFAULT_LAYOUT,
};
pub(crate) use prompt::scripted_dialogues;
pub(crate) use sl::{context_features, turn_features, CONTEXT_DIM, TURN_DIM};
pub use sl::{
    negotiation_features, train_sl_judge, ultimatum_features, LabeledExample, NegotiationEncoder, SlConfig, SlJudge,
    SlModel, SlReport,
};

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{satisfying_outcomes, MatrixGame, OutcomeSet, SolutionConcept};
use crate::negotiation::{style_label, NegotiationStyle};
use crate::nn::NnError;
use crate::ultimatum::{label, UltimatumObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvTag {
    Ultimatum,
    Matrix,
    Negotiation,
}

impl EnvTag {
    pub const ALL: [EnvTag; 3] = [EnvTag::Ultimatum, EnvTag::Matrix, EnvTag::Negotiation];

    pub fn name(self) -> &'static str {
        match self {
            EnvTag::Ultimatum => "ultimatum",
            EnvTag::Matrix => "matrix",
            EnvTag::Negotiation => "negotiation",
        }
    }
}

impl fmt::Display for EnvTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvTag {
    type Err = JudgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| JudgeError::Contract(format!("unknown environment `{s}`")))
    }
}

/// What the user wants, in one of the three environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "env", content = "objective", rename_all = "lowercase")]
pub enum Objective {
    Ultimatum(UltimatumObjective),
    Matrix(SolutionConcept),
    Negotiation(NegotiationStyle),
}

impl Objective {
    pub fn env(&self) -> EnvTag {
        match self {
            Objective::Ultimatum(_) => EnvTag::Ultimatum,
            Objective::Matrix(_) => EnvTag::Matrix,
            Objective::Negotiation(_) => EnvTag::Negotiation,
        }
    }

    /// Ground-truth binary label. Matrix records have no single label.
    pub fn label(&self, record: &EpisodeRecord) -> Result<bool, JudgeError> {
        match (self, record) {
            (Objective::Ultimatum(o), EpisodeRecord::Ultimatum { proposal, action }) => {
                Ok(label(*o, *proposal, *action))
            }
            (Objective::Negotiation(s), EpisodeRecord::Negotiation(r)) => Ok(style_label(*s, r)),
            (Objective::Matrix(_), EpisodeRecord::Matrix { .. }) => Err(JudgeError::Contract(
                "matrix episodes are judged as outcome sets".to_string(),
            )),
            _ => Err(JudgeError::EnvMismatch { expected: self.env(), actual: record.env() }),
        }
    }

    pub fn outcomes(&self, game: &MatrixGame) -> Result<OutcomeSet, JudgeError> {
        match self {
            Objective::Matrix(c) => Ok(satisfying_outcomes(game, *c)),
            _ => Err(JudgeError::EnvMismatch { expected: EnvTag::Matrix, actual: self.env() }),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Ultimatum(o) => write!(f, "ultimatum:{o}"),
            Objective::Matrix(c) => write!(f, "matrix:{c}"),
            Objective::Negotiation(s) => write!(f, "negotiation:{s}"),
        }
    }
}

impl FromStr for Objective {
    type Err = JudgeError;

    /// Parses `env:objective`, e.g. `ultimatum:percent-30`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (env, rest) = s
            .split_once(':')
            .ok_or_else(|| JudgeError::Contract(format!("expected `env:objective`, got `{s}`")))?;
        let bad = |e: &dyn fmt::Display| JudgeError::Contract(format!("{e}"));
        match env.parse::<EnvTag>()? {
            EnvTag::Ultimatum => rest.parse().map(Objective::Ultimatum).map_err(|e| bad(&e)),
            EnvTag::Matrix => rest.parse().map(Objective::Matrix).map_err(|e| bad(&e)),
            EnvTag::Negotiation => rest.parse().map(Objective::Negotiation).map_err(|e| bad(&e)),
        }
    }
}

/// Parsed reward for a single episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Judgment {
    Reward(bool),
    Unparseable(String),
}

impl Judgment {
    pub fn reward(&self) -> Option<bool> {
        match self {
            Judgment::Reward(r) => Some(*r),
            Judgment::Unparseable(_) => None,
        }
    }
}

/// Parsed answer to "which outcomes satisfy the objective?".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeJudgment {
    Outcomes(OutcomeSet),
    Unparseable(String),
}

impl OutcomeJudgment {
    pub fn outcomes(&self) -> Option<OutcomeSet> {
        match self {
            OutcomeJudgment::Outcomes(s) => Some(*s),
            OutcomeJudgment::Unparseable(_) => None,
        }
    }
}

/// Failure of a text-completion backend.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct CompletionError {
    pub message: String,
}

impl CompletionError {
    pub fn new(message: impl Into<String>) -> Self {
        Self { message: message.into() }
    }
}

/// Anything that turns a prompt into a completion.
pub trait Completer {
    fn complete(&self, prompt: &str) -> Result<String, CompletionError>;
}

impl<C: Completer + ?Sized> Completer for &C {
    fn complete(&self, prompt: &str) -> Result<String, CompletionError> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JudgeError {
    /// The backend could not produce an answer (transport, quota, ...).
    #[error("judge unavailable: {0}")]
    Unavailable(String),
    #[error("judge expects {expected} episodes, got {actual}")]
    EnvMismatch { expected: EnvTag, actual: EnvTag },
    #[error("{0}")]
    Contract(String),
    #[error("malformed episode text: {0}")]
    Episode(String),
    #[error("invalid prompt template: {0}")]
    Template(String),
    #[error("supervised judge: {0}")]
    Model(#[from] NnError),
}
