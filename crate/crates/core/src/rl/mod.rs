//! Learners trained against a judge.
//!
//! The Ultimatum and matrix games are single-step, so DQN runs as a
//! contextual bandit (the bootstrap term is always zero). Negotiation uses
//! REINFORCE with the dialogue's judgment broadcast to every act Alice chose.

mod dqn;
mod policy;
mod snapshot;

pub use dqn::{dqn_train, DqnConfig, MatrixTask, SingleStepTask, UltimatumTask};
pub use policy::{
    act_kind, evaluate_negotiation, reinforce_train, rollout, ActKind, NegotiationPolicy, PolicyInputs, ReinforceConfig,
    Selection,
};
pub use snapshot::{PolicyArch, PolicySnapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use alloc::boxed::Box;
use alloc::string::String;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::{EnvTag, JudgeError};
use crate::matrix::{satisfying_outcomes, MatrixGame, SolutionConcept};
use crate::math::argmax;
use crate::nn::{Network, NnError};
use crate::ultimatum::{desired_action, Proposal, UltimatumObjective};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    /// The judge stopped answering. `checkpoint` holds the learner as it was
    /// and can be passed back to resume.
    #[error("judge unavailable at step {step}: {message}")]
    JudgeUnavailable { step: u64, message: String, checkpoint: Box<PolicySnapshot> },
    #[error(transparent)]
    Judge(JudgeError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error("{0}")]
    Contract(String),
}

impl TrainError {
    pub(crate) fn from_judge(e: JudgeError, step: u64, checkpoint: impl FnOnce() -> PolicySnapshot) -> Self {
        match e {
            JudgeError::Unavailable(message) => {
                TrainError::JudgeUnavailable { step, message, checkpoint: Box::new(checkpoint()) }
            }
            other => TrainError::Judge(other),
        }
    }
}

/// Counters from one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Environment interactions, including discarded ones.
    pub steps: u64,
    pub updates: u64,
    /// Episodes discarded because the judgment was unparseable.
    pub skipped: u64,
    /// Episodes whose judgment was compared against a ground-truth label.
    pub judged: u64,
    /// Of those, how many judgments agreed with the label.
    pub judged_correct: u64,
}

impl TrainReport {
    /// Agreement with ground truth over the judged training stream, counting
    /// unparseable judgments as wrong.
    pub fn stream_labeling_accuracy(&self) -> Option<f64> {
        let n = self.judged + self.skipped;
        (n > 0).then(|| self.judged_correct as f64 / n as f64)
    }
}

fn greedy(net: &Network, params: &[f64], obs: &[f64]) -> Result<usize, NnError> {
    Ok(argmax(&net.predict(params, obs)?))
}

fn check_snapshot(snapshot: &PolicySnapshot, env: EnvTag) -> Result<Network, TrainError> {
    if snapshot.env != env {
        return Err(TrainError::Contract(alloc::format!(
            "policy was trained on {} but is evaluated on {env}",
            snapshot.env
        )));
    }
    match &snapshot.arch {
        PolicyArch::QNetwork(spec) => Ok(Network::new(spec.clone())?),
        PolicyArch::Negotiation { .. } => Err(TrainError::Contract("not a Q-network policy".into())),
    }
}

/// Fraction of proposals on which the greedy action is the one the
/// objective wants.
pub fn evaluate_ultimatum(
    snapshot: &PolicySnapshot,
    objective: UltimatumObjective,
    proposals: &[Proposal],
) -> Result<f64, TrainError> {
    if proposals.is_empty() {
        return Err(TrainError::Contract("no proposals to evaluate on".into()));
    }
    let net = check_snapshot(snapshot, EnvTag::Ultimatum)?;
    let mut correct = 0;
    for &p in proposals {
        let a = greedy(&net, &snapshot.params, &dqn::ultimatum_observation(p))?;
        correct += usize::from(a == desired_action(objective, p).index());
    }
    Ok(correct as f64 / proposals.len() as f64)
}

/// 1.0 when the greedy outcome satisfies the concept, else 0.0.
pub fn evaluate_matrix(snapshot: &PolicySnapshot, concept: SolutionConcept, game: &MatrixGame) -> Result<f64, TrainError> {
    let net = check_snapshot(snapshot, EnvTag::Matrix)?;
    let a = greedy(&net, &snapshot.params, &dqn::MATRIX_OBSERVATION)?;
    Ok(if satisfying_outcomes(game, concept).contains(a) { 1.0 } else { 0.0 })
}

/// Greedy action of a Q-network policy for one observation.
pub fn greedy_action(snapshot: &PolicySnapshot, obs: &[f64]) -> Result<usize, TrainError> {
    let net = match &snapshot.arch {
        PolicyArch::QNetwork(spec) => Network::new(spec.clone())?,
        PolicyArch::Negotiation { .. } => return Err(TrainError::Contract("not a Q-network policy".into())),
    };
    Ok(greedy(&net, &snapshot.params, obs)?)
}

/// Rewards seen by learners are exactly 0 or 1.
pub(crate) fn reward_value(r: bool) -> f64 {
    if r {
        1.0
    } else {
        0.0
    }
}
