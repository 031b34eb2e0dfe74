use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reward_value, PolicyArch, PolicySnapshot, TrainError, TrainReport};
use crate::judge::{EnvTag, EpisodeRecord, Judge, JudgeError, Objective, OutcomeJudgment};
use crate::math::ln;
use crate::matrix::{MatrixGame, OutcomeSet};
use crate::nn::{Activation, Network, NetworkSpec, Optimizer, OptimizerKind};
use crate::ultimatum::{Proposal, ResponderAction, MAX_TOTAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub steps: u64,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of `steps` over which epsilon decays linearly.
    pub exploration_fraction: f64,
    /// Target-network sync period. Kept for configuration compatibility;
    /// single-step targets never bootstrap, so it has no effect here.
    pub target_sync: u64,
    /// Transitions collected before the first update.
    pub learning_starts: u64,
    pub gamma: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            lr: 1e-4,
            hidden: vec![64, 64],
            replay_capacity: 10_000,
            batch_size: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            exploration_fraction: 0.5,
            target_sync: 250,
            learning_starts: 32,
            gamma: 0.99,
        }
    }
}

impl DqnConfig {
    pub fn ultimatum() -> Self {
        Self::default()
    }

    pub fn matrix() -> Self {
        Self { steps: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = self.steps > 0
            && self.lr > 0.0
            && self.lr.is_finite()
            && self.replay_capacity > 0
            && self.batch_size > 0
            && self.target_sync > 0
            && (0.0..=1.0).contains(&self.epsilon_start)
            && (0.0..=1.0).contains(&self.epsilon_end)
            && (0.0..=1.0).contains(&self.exploration_fraction)
            && (0.0..=1.0).contains(&self.gamma)
            && self.hidden.iter().all(|&h| h > 0);
        if ok {
            Ok(())
        } else {
            Err(TrainError::Contract(format!("invalid DQN configuration: {self:?}")))
        }
    }

    fn epsilon(&self, step: u64) -> f64 {
        let horizon = self.exploration_fraction * self.steps as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let t = step as f64 / horizon;
        if t >= 1.0 {
            return self.epsilon_end;
        }
        self.epsilon_start + t * (self.epsilon_end - self.epsilon_start)
    }
}

/// A single-step decision problem over a finite set of contexts.
pub trait SingleStepTask {
    fn env(&self) -> EnvTag;
    fn observation_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn n_contexts(&self) -> usize;
    fn observation(&self, context: usize) -> Vec<f64>;
    /// Judges every (context, action) pair once, before training.
    fn precompute(&mut self) -> Result<(), JudgeError>;
    /// `None` when the judgment could not be parsed.
    fn reward(&self, context: usize, action: usize) -> Option<bool>;
    /// Ground-truth reward, when known, for stream accuracy.
    fn true_reward(&self, context: usize, action: usize) -> Option<bool>;
    fn judge_description(&self) -> String;
}

/// Scaled `[share, log amount, log total]`, each centered on zero.
pub(crate) fn ultimatum_observation(p: Proposal) -> Vec<f64> {
    let scale = ln(1.0 + MAX_TOTAL as f64);
    vec![
        2.0 * (p.responder_share() - 0.5),
        2.0 * (ln(1.0 + p.responder_amount() as f64) / scale - 0.5),
        2.0 * (ln(1.0 + p.total() as f64) / scale - 0.5),
    ]
}

/// The Responder's decision on a fixed set of proposals.
pub struct UltimatumTask<'j, J: ?Sized> {
    proposals: Vec<Proposal>,
    judge: &'j J,
    truth: Option<Objective>,
    judgments: Vec<[Option<bool>; 2]>,
}

impl<'j, J: Judge + ?Sized> UltimatumTask<'j, J> {
    /// `truth` enables stream labeling accuracy.
    pub fn new(proposals: Vec<Proposal>, judge: &'j J, truth: Option<Objective>) -> Result<Self, TrainError> {
        if proposals.is_empty() {
            return Err(TrainError::Contract("no proposals".into()));
        }
        if judge.env() != EnvTag::Ultimatum {
            return Err(TrainError::Judge(JudgeError::EnvMismatch { expected: EnvTag::Ultimatum, actual: judge.env() }));
        }
        Ok(Self { proposals, judge, truth, judgments: Vec::new() })
    }

    pub fn proposals(&self) -> &[Proposal] {
        &self.proposals
    }
}

impl<J: Judge + ?Sized> SingleStepTask for UltimatumTask<'_, J> {
    fn env(&self) -> EnvTag {
        EnvTag::Ultimatum
    }
    fn observation_dim(&self) -> usize {
        3
    }
    fn n_actions(&self) -> usize {
        2
    }
    fn n_contexts(&self) -> usize {
        self.proposals.len()
    }
    fn observation(&self, context: usize) -> Vec<f64> {
        ultimatum_observation(self.proposals[context])
    }
    fn precompute(&mut self) -> Result<(), JudgeError> {
        if !self.judgments.is_empty() {
            return Ok(());
        }
        let mut out = Vec::with_capacity(self.proposals.len());
        for &proposal in &self.proposals {
            let mut pair = [None; 2];
            for action in ResponderAction::ALL {
                pair[action.index()] = self.judge.judge(&EpisodeRecord::Ultimatum { proposal, action })?.reward();
            }
            out.push(pair);
        }
        self.judgments = out;
        Ok(())
    }
    fn reward(&self, context: usize, action: usize) -> Option<bool> {
        self.judgments[context][action]
    }
    fn true_reward(&self, context: usize, action: usize) -> Option<bool> {
        let record = EpisodeRecord::Ultimatum {
            proposal: self.proposals[context],
            action: ResponderAction::from_index(action)?,
        };
        self.truth.and_then(|t| t.label(&record).ok())
    }
    fn judge_description(&self) -> String {
        self.judge.describe()
    }
}

pub(crate) const MATRIX_OBSERVATION: [f64; 1] = [1.0];

/// Choosing one of the four joint outcomes of a fixed game, with no
/// observation.
pub struct MatrixTask<'j, J: ?Sized> {
    game: MatrixGame,
    judge: &'j J,
    truth: Option<Objective>,
    judged: Option<Option<OutcomeSet>>,
}

impl<'j, J: Judge + ?Sized> MatrixTask<'j, J> {
    pub fn new(game: MatrixGame, judge: &'j J, truth: Option<Objective>) -> Result<Self, TrainError> {
        if judge.env() != EnvTag::Matrix {
            return Err(TrainError::Judge(JudgeError::EnvMismatch { expected: EnvTag::Matrix, actual: judge.env() }));
        }
        Ok(Self { game, judge, truth, judged: None })
    }

    pub fn game(&self) -> &MatrixGame {
        &self.game
    }
}

impl<J: Judge + ?Sized> SingleStepTask for MatrixTask<'_, J> {
    fn env(&self) -> EnvTag {
        EnvTag::Matrix
    }
    fn observation_dim(&self) -> usize {
        1
    }
    fn n_actions(&self) -> usize {
        4
    }
    fn n_contexts(&self) -> usize {
        1
    }
    fn observation(&self, _context: usize) -> Vec<f64> {
        MATRIX_OBSERVATION.to_vec()
    }
    fn precompute(&mut self) -> Result<(), JudgeError> {
        if self.judged.is_none() {
            self.judged = Some(match self.judge.judge_outcomes(&self.game)? {
                OutcomeJudgment::Outcomes(s) => Some(s),
                OutcomeJudgment::Unparseable(_) => None,
            });
        }
        Ok(())
    }
    fn reward(&self, _context: usize, action: usize) -> Option<bool> {
        self.judged.flatten().map(|s| s.contains(action))
    }
    fn true_reward(&self, _context: usize, action: usize) -> Option<bool> {
        self.truth.and_then(|t| t.outcomes(&self.game).ok()).map(|s| s.contains(action))
    }
    fn judge_description(&self) -> String {
        self.judge.describe()
    }
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    context: usize,
    action: usize,
    reward: f64,
}

/// Deep Q-learning on a single-step task. Each step draws a context
/// uniformly, acts epsilon-greedily and stores the judged reward; episodes
/// with unparseable judgments are dropped and counted.
pub fn dqn_train<T: SingleStepTask + ?Sized>(
    task: &mut T,
    config: &DqnConfig,
    seed: u64,
) -> Result<(PolicySnapshot, TrainReport), TrainError> {
    config.validate()?;
    let spec = NetworkSpec::mlp(task.observation_dim(), &config.hidden, Activation::Relu, task.n_actions());
    let net = Network::new(spec.clone())?;
    let mut rng = crate::seed::rng(crate::seed::derive(seed, "dqn"));
    let mut params = net.init_params(&mut rng);
    let (env, description) = (task.env(), task.judge_description());
    let snapshot = |params: &[f64], progress: u64| PolicySnapshot {
        env,
        arch: PolicyArch::QNetwork(spec.clone()),
        params: params.to_vec(),
        judge: description.clone(),
        seed,
        progress,
        learner_state: Vec::new(),
    };
    let initial = snapshot(&params, 0);
    if let Err(e) = task.precompute() {
        return Err(TrainError::from_judge(e, 0, || initial.clone()));
    }

    let observations: Vec<Vec<f64>> = (0..task.n_contexts()).map(|c| task.observation(c)).collect();
    let mut opt = Optimizer::new(OptimizerKind::adam(config.lr), params.len());
    let mut replay: VecDeque<Transition> = VecDeque::with_capacity(config.replay_capacity.min(1 << 16));
    let mut report = TrainReport::default();
    let n_actions = task.n_actions();

    for step in 0..config.steps {
        report.steps += 1;
        let context = rng.random_range(0..observations.len());
        let action = if rng.random_bool(config.epsilon(step)) {
            rng.random_range(0..n_actions)
        } else {
            super::greedy(&net, &params, &observations[context])?
        };
        let truth = task.true_reward(context, action);
        let Some(reward) = task.reward(context, action) else {
            report.skipped += 1;
            continue;
        };
        if let Some(t) = truth {
            report.judged += 1;
            report.judged_correct += u64::from(t == reward);
        }
        if replay.len() == config.replay_capacity {
            replay.pop_front();
        }
        replay.push_back(Transition { context, action, reward: reward_value(reward) });

        if (replay.len() as u64) >= config.learning_starts.max(1) {
            let mut grad = vec![0.0; params.len()];
            let n = config.batch_size;
            for _ in 0..n {
                let tr = replay[rng.random_range(0..replay.len())];
                // Every episode is terminal after one step, so the target
                // network's bootstrap term gamma * max Q'(s') is always zero
                // and the target is the reward itself.
                let y = tr.reward;
                let cache = net.forward_one(&params, &observations[tr.context])?;
                let q = cache.output()[tr.action];
                let mut d = vec![0.0; n_actions];
                d[tr.action] = 2.0 * (q - y) / n as f64;
                let g = net.backward(&params, &cache, &d)?;
                for (a, b) in grad.iter_mut().zip(&g.params) {
                    *a += b;
                }
            }
            if opt.step(&mut params, &grad).is_ok() {
                report.updates += 1;
            }
        }
    }
    Ok((snapshot(&params, report.steps), report))
}
