use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use core::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::parse::{parse_outcome_response, parse_response};
use super::prompt::{build_prompt, PromptTemplate};
use super::{Completer, EnvTag, EpisodeRecord, JudgeError, Judgment, Objective, OutcomeJudgment};
use crate::matrix::MatrixGame;

/// A reward function over episodes.
pub trait Judge {
    fn env(&self) -> EnvTag;

    /// Binary reward for an Ultimatum or negotiation episode.
    fn judge(&self, record: &EpisodeRecord) -> Result<Judgment, JudgeError>;

    /// Acceptable joint outcomes of a matrix game.
    fn judge_outcomes(&self, game: &MatrixGame) -> Result<OutcomeJudgment, JudgeError>;

    /// Short identifier stored with trained policies and results.
    fn describe(&self) -> String;
}

impl<J: Judge + ?Sized> Judge for &J {
    fn env(&self) -> EnvTag {
        (**self).env()
    }
    fn judge(&self, record: &EpisodeRecord) -> Result<Judgment, JudgeError> {
        (**self).judge(record)
    }
    fn judge_outcomes(&self, game: &MatrixGame) -> Result<OutcomeJudgment, JudgeError> {
        (**self).judge_outcomes(game)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

impl<J: Judge + ?Sized> Judge for Box<J> {
    fn env(&self) -> EnvTag {
        (**self).env()
    }
    fn judge(&self, record: &EpisodeRecord) -> Result<Judgment, JudgeError> {
        (**self).judge(record)
    }
    fn judge_outcomes(&self, game: &MatrixGame) -> Result<OutcomeJudgment, JudgeError> {
        (**self).judge_outcomes(game)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

fn check_env(expected: EnvTag, record: &EpisodeRecord) -> Result<(), JudgeError> {
    match record.env() {
        EnvTag::Matrix => Err(JudgeError::Contract("matrix episodes are judged as outcome sets".into())),
        actual if actual != expected => Err(JudgeError::EnvMismatch { expected, actual }),
        _ => Ok(()),
    }
}

/// Exact objective; never unparseable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruthJudge {
    pub objective: Objective,
}

impl GroundTruthJudge {
    pub fn new(objective: Objective) -> Self {
        Self { objective }
    }
}

impl Judge for GroundTruthJudge {
    fn env(&self) -> EnvTag {
        self.objective.env()
    }

    fn judge(&self, record: &EpisodeRecord) -> Result<Judgment, JudgeError> {
        check_env(self.env(), record)?;
        Ok(Judgment::Reward(self.objective.label(record)?))
    }

    fn judge_outcomes(&self, game: &MatrixGame) -> Result<OutcomeJudgment, JudgeError> {
        Ok(OutcomeJudgment::Outcomes(self.objective.outcomes(game)?))
    }

    fn describe(&self) -> String {
        format!("ground-truth:{}", self.objective)
    }
}

/// Prompts a text model and parses its answer.
#[derive(Debug, Clone)]
pub struct LlmJudge<C> {
    objective: Objective,
    template: PromptTemplate,
    completer: C,
}

impl<C: Completer> LlmJudge<C> {
    pub fn new(objective: Objective, template: PromptTemplate, completer: C) -> Result<Self, JudgeError> {
        template.validate()?;
        Ok(Self { objective, template, completer })
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn completer(&self) -> &C {
        &self.completer
    }

    pub fn prompt(&self, record: &EpisodeRecord) -> Result<String, JudgeError> {
        build_prompt(&self.template, record)
    }

    fn ask(&self, record: &EpisodeRecord) -> Result<String, JudgeError> {
        let prompt = self.prompt(record)?;
        self.completer.complete(&prompt).map_err(|e| JudgeError::Unavailable(e.message))
    }

    /// Hex digest over every template component.
    pub fn template_digest(&self) -> String {
        let t = &self.template;
        let mut h = Sha256::new();
        for part in [t.rho1.as_str(), &t.render_rho2(), &t.rho4, &t.layout] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.update([t.options.include_rho1 as u8, t.options.scramble_outcomes as u8, t.options.zero_shot as u8]);
        let mut s = String::new();
        for b in &h.finalize()[..8] {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}

impl<C: Completer> Judge for LlmJudge<C> {
    fn env(&self) -> EnvTag {
        self.objective.env()
    }

    fn judge(&self, record: &EpisodeRecord) -> Result<Judgment, JudgeError> {
        check_env(self.env(), record)?;
        Ok(parse_response(&self.ask(record)?))
    }

    fn judge_outcomes(&self, game: &MatrixGame) -> Result<OutcomeJudgment, JudgeError> {
        if self.env() != EnvTag::Matrix {
            return Err(JudgeError::EnvMismatch { expected: self.env(), actual: EnvTag::Matrix });
        }
        Ok(parse_outcome_response(&self.ask(&EpisodeRecord::Matrix { game: game.clone() })?))
    }

    fn describe(&self) -> String {
        format!("llm:{}:{}", self.objective, self.template_digest())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{default_template, MockOracle, MockScript, TemplateSettings};
    use crate::matrix::{canonical_games, satisfying_outcomes, SolutionConcept};
    use crate::ultimatum::{Proposal, ResponderAction, UltimatumObjective};

    #[test]
    fn ground_truth_example() {
        let j = GroundTruthJudge::new(Objective::Ultimatum(UltimatumObjective::PercentThreshold(30)));
        let r = EpisodeRecord::Ultimatum { proposal: Proposal::new(100, 20).unwrap(), action: ResponderAction::Reject };
        assert_eq!(j.judge(&r).unwrap(), Judgment::Reward(true));
        assert!(j.judge(&EpisodeRecord::Matrix { game: MatrixGame::chicken() }).is_err());
        assert!(j.judge_outcomes(&MatrixGame::chicken()).is_err());
    }

    #[test]
    fn mock_wired_llm_matches_ground_truth_on_matrix() {
        for concept in SolutionConcept::ALL {
            let obj = Objective::Matrix(concept);
            let t = default_template(&obj, &TemplateSettings::standard(&obj)).unwrap();
            let j = LlmJudge::new(obj, t, MockOracle::new(obj, 0.0, 0).unwrap()).unwrap();
            for g in canonical_games() {
                assert_eq!(j.judge_outcomes(&g).unwrap(), OutcomeJudgment::Outcomes(satisfying_outcomes(&g, concept)));
            }
        }
    }

    #[test]
    fn transport_failure_is_not_unparseable() {
        let obj = Objective::Ultimatum(UltimatumObjective::PayoffThreshold(10));
        let t = default_template(&obj, &TemplateSettings::standard(&obj)).unwrap();
        let j = LlmJudge::new(obj, t, MockScript::default()).unwrap();
        let r = EpisodeRecord::Ultimatum { proposal: Proposal::new(100, 20).unwrap(), action: ResponderAction::Reject };
        assert!(matches!(j.judge(&r), Err(JudgeError::Unavailable(_))));
    }

    #[test]
    fn description_changes_with_template() {
        let obj = Objective::Ultimatum(UltimatumObjective::PayoffThreshold(10));
        let t = default_template(&obj, &TemplateSettings::standard(&obj)).unwrap();
        let mut t2 = t.clone();
        t2.options.include_rho1 = false;
        let a = LlmJudge::new(obj, t, MockScript::default()).unwrap();
        let b = LlmJudge::new(obj, t2, MockScript::default()).unwrap();
        assert_ne!(a.describe(), b.describe());
    }
}
