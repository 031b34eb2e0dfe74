//! Alice's dialogue-act policy and its REINFORCE trainer.
//!
//! Every legal act `a` in state `s` gets the score
//!
//! ```text
//! score(a) = psi(a) . (theta + W z(s) / sqrt(dim z)) - ln n_kind(a)
//! ```
//!
//! where `psi(a)` are hand-built act features, `z(s)` concatenates a dense
//! embedding of the context with a GRU digest of the act history, and
//! `n_kind(a)` counts legal acts of the same kind (propose-new, insist-repeat,
//! agree, ...). The last term makes the initial policy uniform over act kinds
//! rather than over the hundred-odd allocations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{reward_value, PolicyArch, PolicySnapshot, TrainError, TrainReport};
use crate::judge::{context_features, turn_features, EnvTag, EpisodeRecord, Judge, JudgeError, Judgment, CONTEXT_DIM, TURN_DIM};
use crate::math::{argmax, exp, ln, sqrt};
use crate::negotiation::{
    run_dialogue, sample_context, style_label, Agent, Allocation, DialogueAct, NegotiationContext, NegotiationError,
    NegotiationState, NegotiationStyle, RuleBasedPartner, TrajectoryRecord, DEFAULT_MAX_REJECTIONS, MAX_POINTS, N_ITEMS,
};
use crate::nn::{Activation, LayerSpec, Network, NetworkSpec};

/// Number of act features.
pub const PSI_DIM: usize = 14;
const SEQ_DIM: usize = TURN_DIM + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActKind {
    ProposeNew,
    ProposeRepeat,
    InsistNew,
    InsistRepeat,
    Agree,
    Disagree,
    End,
}

/// Prior weight of each act kind, split evenly among the legal acts of that
/// kind.
const KIND_WEIGHTS: [f64; 7] = [1.0, 1.0, 1.0, 1.0, 1.0, 0.2, 0.2];

impl ActKind {
    fn index(self) -> usize {
        self as usize
    }
}

/// Kind of `act` if Alice played it in `state`; "repeat" means she has
/// already put the same allocation forward earlier in the dialogue.
pub fn act_kind(state: &NegotiationState, act: &DialogueAct) -> ActKind {
    let repeat = |a: &Allocation| {
        state.history().iter().any(|t| t.speaker == Agent::Alice && t.act.allocation() == Some(a))
    };
    match act {
        DialogueAct::Propose(a) if repeat(a) => ActKind::ProposeRepeat,
        DialogueAct::Propose(_) => ActKind::ProposeNew,
        DialogueAct::Insist(a) if repeat(a) => ActKind::InsistRepeat,
        DialogueAct::Insist(_) => ActKind::InsistNew,
        DialogueAct::Agree => ActKind::Agree,
        DialogueAct::Disagree => ActKind::Disagree,
        DialogueAct::End => ActKind::End,
    }
}

/// How acts are picked from the policy's distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    Greedy,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinforceConfig {
    pub lr: f64,
    pub contexts: usize,
    pub epochs: usize,
    /// Subtract the running mean of earlier rewards.
    pub baseline: bool,
    pub context_width: usize,
    pub hidden: usize,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self { lr: 0.1, contexts: 250, epochs: 1, baseline: true, context_width: 64, hidden: 64 }
    }
}

impl ReinforceConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr > 0.0 && self.lr.is_finite() && self.contexts > 0 && self.epochs > 0 && self.context_width > 0 && self.hidden > 0
        {
            Ok(())
        } else {
            Err(TrainError::Contract(format!("invalid REINFORCE configuration: {self:?}")))
        }
    }
}

/// Network inputs for a dialogue state: context features and the act
/// history as a sequence that opens with a start token.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInputs {
    pub context: Vec<f64>,
    pub sequence: Vec<Vec<f64>>,
}

impl PolicyInputs {
    pub fn of(context: &NegotiationContext, turns: &[crate::negotiation::Turn]) -> Self {
        let mut start = vec![0.0; SEQ_DIM];
        start[TURN_DIM] = 1.0;
        let mut sequence = Vec::with_capacity(turns.len() + 1);
        sequence.push(start);
        for t in turns {
            let mut x = turn_features(t);
            x.push(0.0);
            sequence.push(x);
        }
        Self { context: context_features(context), sequence }
    }
}

/// One of Alice's choices, kept for the update after the dialogue.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Decision {
    /// Turns already played; the GRU state after that many turns is used.
    pub step: usize,
    pub psi: Vec<[f64; PSI_DIM]>,
    pub log_prior: Vec<f64>,
    pub kinds: Vec<ActKind>,
    pub chosen: usize,
}

fn fraction(points: u32) -> f64 {
    points as f64 / MAX_POINTS as f64
}

fn allocation_features(state: &NegotiationState, a: &Allocation, psi: &mut [f64; PSI_DIM]) {
    let ctx = state.context();
    let (alice, bob) = (a.value(ctx, Agent::Alice), a.value(ctx, Agent::Bob));
    psi[5] = fraction(alice);
    psi[6] = fraction(bob);
    psi[7] = f64::from(u8::from(alice > bob));
    psi[8] = f64::from(u8::from(alice < bob));
    for k in 0..N_ITEMS {
        if ctx.counts[k] > 0 {
            psi[11 + k] = a.alice[k] as f64 / ctx.counts[k] as f64;
        }
    }
}

/// Act type one-hot, Alice's and Bob's value fractions, flags for who comes
/// out ahead, a repeat flag, a flag for echoing Bob's last proposal, and
/// Alice's share of each item.
fn act_features(state: &NegotiationState, act: &DialogueAct) -> [f64; PSI_DIM] {
    let mut psi = [0.0; PSI_DIM];
    psi[act.type_index()] = 1.0;
    match act {
        DialogueAct::Propose(a) | DialogueAct::Insist(a) => {
            allocation_features(state, a, &mut psi);
            if matches!(act_kind(state, act), ActKind::ProposeRepeat | ActKind::InsistRepeat) {
                psi[9] = 1.0;
            }
            if state.last_allocation_of(Agent::Bob) == Some(*a) {
                psi[10] = 1.0;
            }
        }
        DialogueAct::Agree => {
            if let Some((_, a)) = state.standing() {
                allocation_features(state, &a, &mut psi);
            }
        }
        DialogueAct::Disagree | DialogueAct::End => {}
    }
    psi
}

/// Every act Alice may play in `state`, in a fixed order.
pub fn legal_acts(state: &NegotiationState) -> Vec<DialogueAct> {
    let allocations = state.context().allocations();
    let mut acts: Vec<DialogueAct> = allocations.iter().map(|&a| DialogueAct::Propose(a)).collect();
    acts.extend(allocations.iter().map(|&a| DialogueAct::Insist(a)));
    if matches!(state.standing(), Some((Agent::Bob, _))) {
        acts.push(DialogueAct::Agree);
    }
    acts.push(DialogueAct::Disagree);
    acts.push(DialogueAct::End);
    acts
}

fn decision_for(state: &NegotiationState, acts: &[DialogueAct]) -> Decision {
    let kinds: Vec<ActKind> = acts.iter().map(|a| act_kind(state, a)).collect();
    let mut counts = [0usize; 7];
    for k in &kinds {
        counts[k.index()] += 1;
    }
    Decision {
        step: state.turn_index(),
        psi: acts.iter().map(|a| act_features(state, a)).collect(),
        log_prior: kinds.iter().map(|k| ln(KIND_WEIGHTS[k.index()] / counts[k.index()] as f64)).collect(),
        kinds,
        chosen: 0,
    }
}

fn softmax_in_place(scores: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = exp(*s - m);
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationPolicy {
    context_net: Network,
    history_net: Network,
    context_width: usize,
    hidden: usize,
}

impl NegotiationPolicy {
    pub fn new(context_width: usize, hidden: usize) -> Result<Self, TrainError> {
        let context_net =
            Network::new(NetworkSpec::new(CONTEXT_DIM, vec![LayerSpec::Dense { width: context_width, activation: Activation::Tanh }]))?;
        let history_net = Network::new(NetworkSpec::new(SEQ_DIM, vec![LayerSpec::Recurrent { hidden }]))?;
        Ok(Self { context_net, history_net, context_width, hidden })
    }

    pub fn from_arch(arch: &PolicyArch) -> Result<Self, TrainError> {
        match *arch {
            PolicyArch::Negotiation { context_width, hidden } => Self::new(context_width, hidden),
            PolicyArch::QNetwork(_) => Err(TrainError::Contract("not a negotiation policy".into())),
        }
    }

    pub fn arch(&self) -> PolicyArch {
        PolicyArch::Negotiation { context_width: self.context_width, hidden: self.hidden }
    }

    fn z_dim(&self) -> usize {
        self.context_width + self.hidden
    }

    /// `(theta, W, context net, history net)`.
    fn ranges(&self) -> [Range<usize>; 4] {
        let w = PSI_DIM..PSI_DIM + PSI_DIM * self.z_dim();
        let c = w.end..w.end + self.context_net.param_count();
        let h = c.end..c.end + self.history_net.param_count();
        [0..PSI_DIM, w, c, h]
    }

    pub fn param_count(&self) -> usize {
        self.ranges()[3].end
    }

    /// `theta` and `W` start at zero, so the initial policy is uniform over
    /// act kinds whatever the network weights.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; PSI_DIM * (1 + self.z_dim())];
        p.extend(self.context_net.init_params(rng));
        p.extend(self.history_net.init_params(rng));
        p
    }

    fn check(&self, params: &[f64]) -> Result<(), TrainError> {
        if params.len() != self.param_count() {
            return Err(TrainError::Contract(format!(
                "policy expects {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }

    /// `theta + W z / sqrt(dim z)`.
    fn act_weights(&self, params: &[f64], z: &[f64]) -> [f64; PSI_DIM] {
        let [theta, w, _, _] = self.ranges();
        let scale = 1.0 / sqrt(self.z_dim() as f64);
        let mut u = [0.0; PSI_DIM];
        for (i, ui) in u.iter_mut().enumerate() {
            let row = &params[w.start + i * z.len()..w.start + (i + 1) * z.len()];
            *ui = params[theta.start + i] + scale * row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
        u
    }

    fn state_vector(&self, params: &[f64], inputs: &PolicyInputs) -> Result<Vec<f64>, TrainError> {
        let [_, _, c, h] = self.ranges();
        let mut z = self.context_net.predict(&params[c], &inputs.context)?;
        z.extend_from_slice(self.history_net.forward(&params[h], &inputs.sequence)?.output());
        Ok(z)
    }

    fn distribution(&self, params: &[f64], z: &[f64], d: &Decision) -> Vec<f64> {
        let u = self.act_weights(params, z);
        let mut s: Vec<f64> =
            d.psi.iter().zip(&d.log_prior).map(|(psi, prior)| prior + psi.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()).collect();
        softmax_in_place(&mut s);
        s
    }

    /// Legal acts and their probabilities in `state`.
    pub fn probabilities(&self, params: &[f64], state: &NegotiationState) -> Result<(Vec<DialogueAct>, Vec<f64>), TrainError> {
        self.check(params)?;
        let acts = legal_acts(state);
        let d = decision_for(state, &acts);
        let z = self.state_vector(params, &PolicyInputs::of(state.context(), state.history()))?;
        let probs = self.distribution(params, &z, &d);
        Ok((acts, probs))
    }

    /// `sum_t weights[t] * grad log pi(a_t | s_t)` for the decisions of one
    /// dialogue.
    pub(crate) fn log_prob_gradient(
        &self,
        params: &[f64],
        inputs: &PolicyInputs,
        decisions: &[Decision],
        weights: &[f64],
    ) -> Result<Vec<f64>, TrainError> {
        self.check(params)?;
        let [theta, w, c, h] = self.ranges();
        let mut grad = vec![0.0; params.len()];
        let context_cache = self.context_net.forward_one(&params[c.clone()], &inputs.context)?;
        let history_cache = self.history_net.forward(&params[h.clone()], &inputs.sequence)?;
        let hidden: Vec<&[f64]> = history_cache.hidden_states().collect();
        let zd = self.z_dim();
        let scale = 1.0 / sqrt(zd as f64);
        let mut d_context = vec![0.0; self.context_width];
        let mut d_hidden = Vec::with_capacity(decisions.len());

        for (d, &weight) in decisions.iter().zip(weights) {
            let hs = hidden.get(d.step).ok_or_else(|| TrainError::Contract("decision beyond the dialogue".into()))?;
            let mut z = context_cache.output().to_vec();
            z.extend_from_slice(hs);
            let probs = self.distribution(params, &z, d);
            let mut g = d.psi[d.chosen];
            for (psi, p) in d.psi.iter().zip(&probs) {
                for (gi, v) in g.iter_mut().zip(psi) {
                    *gi -= p * v;
                }
            }
            for gi in &mut g {
                *gi *= weight;
            }
            let mut dz = vec![0.0; zd];
            for (i, gi) in g.iter().enumerate() {
                grad[theta.start + i] += gi;
                let row = w.start + i * zd;
                for j in 0..zd {
                    grad[row + j] += gi * z[j] * scale;
                    dz[j] += params[row + j] * gi * scale;
                }
            }
            for (a, b) in d_context.iter_mut().zip(&dz[..self.context_width]) {
                *a += b;
            }
            d_hidden.push((d.step, dz[self.context_width..].to_vec()));
        }
        let gc = self.context_net.backward(&params[c.clone()], &context_cache, &d_context)?;
        grad[c].copy_from_slice(&gc.params);
        let gh = self.history_net.backward_with_hidden(&params[h.clone()], &history_cache, None, &d_hidden)?;
        grad[h].copy_from_slice(&gh.params);
        Ok(grad)
    }

    /// Greedy selection takes the most probable act kind, then the most
    /// probable act of that kind. A plain argmax over acts would always pick
    /// one of the singleton kinds, which carry a whole kind's prior mass.
    fn choose<R: Rng + ?Sized>(probs: &[f64], kinds: &[ActKind], selection: Selection, rng: &mut R) -> usize {
        match selection {
            Selection::Greedy => {
                let mut mass = [0.0; 7];
                for (p, k) in probs.iter().zip(kinds) {
                    mass[k.index()] += p;
                }
                let kind = argmax(&mass);
                let mut best = 0;
                let mut best_p = f64::NEG_INFINITY;
                for (i, (p, k)) in probs.iter().zip(kinds).enumerate() {
                    if k.index() == kind && *p > best_p {
                        best = i;
                        best_p = *p;
                    }
                }
                best
            }
            Selection::Sample => {
                let mut u: f64 = rng.random();
                for (i, p) in probs.iter().enumerate() {
                    if u < *p {
                        return i;
                    }
                    u -= p;
                }
                probs.len() - 1
            }
        }
    }
}

/// Plays one dialogue and returns it with Alice's decisions.
pub(crate) fn rollout_with_decisions<R: Rng + ?Sized>(
    policy: &NegotiationPolicy,
    params: &[f64],
    context: NegotiationContext,
    first: Agent,
    partner: &RuleBasedPartner,
    selection: Selection,
    rng: &mut R,
) -> Result<(TrajectoryRecord, Vec<Decision>), TrainError> {
    policy.check(params)?;
    let context_embedding = {
        let [_, _, c, _] = policy.ranges();
        policy.context_net.predict(&params[c], &context_features(&context))?
    };
    let [_, _, _, h] = policy.ranges();
    let mut decisions = Vec::new();
    let state = run_dialogue::<TrainError>(context, first, partner, |state| {
        let acts = legal_acts(state);
        let mut d = decision_for(state, &acts);
        let seq = PolicyInputs::of(state.context(), state.history()).sequence;
        let mut z = context_embedding.clone();
        z.extend_from_slice(policy.history_net.forward(&params[h.clone()], &seq)?.output());
        let probs = policy.distribution(params, &z, &d);
        d.chosen = NegotiationPolicy::choose(&probs, &d.kinds, selection, rng);
        let act = acts[d.chosen];
        decisions.push(d);
        Ok(act)
    })?;
    Ok((state.to_record()?, decisions))
}

impl From<NegotiationError> for TrainError {
    fn from(e: NegotiationError) -> Self {
        TrainError::Contract(format!("negotiation: {e}"))
    }
}

/// Plays one dialogue between the policy and `partner`.
pub fn rollout<R: Rng + ?Sized>(
    policy: &NegotiationPolicy,
    params: &[f64],
    context: NegotiationContext,
    first: Agent,
    partner: &RuleBasedPartner,
    selection: Selection,
    rng: &mut R,
) -> Result<TrajectoryRecord, TrainError> {
    Ok(rollout_with_decisions(policy, params, context, first, partner, selection, rng)?.0)
}

fn first_speaker<R: Rng + ?Sized>(rng: &mut R) -> Agent {
    if rng.random_bool(0.5) {
        Agent::Alice
    } else {
        Agent::Bob
    }
}

/// Trains Alice against `partner` with the judge's verdict on each dialogue
/// as the reward. `truth`, when given, is used only to count how often the
/// judge agreed with it. Passing `resume` continues from a checkpoint taken
/// by an earlier, interrupted call with the same configuration and seed.
pub fn reinforce_train<J: Judge + ?Sized>(
    judge: &J,
    partner: &RuleBasedPartner,
    config: &ReinforceConfig,
    seed: u64,
    truth: Option<NegotiationStyle>,
    resume: Option<&PolicySnapshot>,
) -> Result<(PolicySnapshot, TrainReport), TrainError> {
    config.validate()?;
    if judge.env() != EnvTag::Negotiation {
        return Err(TrainError::Judge(JudgeError::EnvMismatch { expected: EnvTag::Negotiation, actual: judge.env() }));
    }
    let policy = NegotiationPolicy::new(config.context_width, config.hidden)?;
    let description = judge.describe();
    let (mut params, start, mut baseline) = match resume {
        Some(s) => {
            if s.env != EnvTag::Negotiation || s.arch != policy.arch() || s.seed != seed || s.judge != description {
                return Err(TrainError::Contract("checkpoint does not match this run".into()));
            }
            policy.check(&s.params)?;
            let state: [f64; 2] =
                s.learner_state.as_slice().try_into().map_err(|_| TrainError::Contract("checkpoint lacks baseline state".into()))?;
            (s.params.clone(), s.progress, state)
        }
        None => {
            let mut rng = crate::seed::rng(crate::seed::derive(seed, "reinforce-init"));
            (policy.init_params(&mut rng), 0, [0.0, 0.0])
        }
    };
    let snapshot = |params: &[f64], progress: u64, baseline: [f64; 2]| PolicySnapshot {
        env: EnvTag::Negotiation,
        arch: policy.arch(),
        params: params.to_vec(),
        judge: description.clone(),
        seed,
        progress,
        learner_state: baseline.to_vec(),
    };

    let mut context_rng = crate::seed::rng(crate::seed::derive(seed, "train-contexts"));
    let contexts = (0..config.contexts)
        .map(|_| sample_context(&mut context_rng, DEFAULT_MAX_REJECTIONS))
        .collect::<Result<Vec<_>, _>>()?;
    let total = (config.contexts * config.epochs) as u64;
    let mut report = TrainReport::default();

    for i in start..total {
        let mut rng = crate::seed::rng(crate::seed::derive(seed, &format!("reinforce-{i}")));
        let first = first_speaker(&mut rng);
        let context = contexts[(i % config.contexts as u64) as usize];
        let (record, decisions) = rollout_with_decisions(&policy, &params, context, first, partner, Selection::Sample, &mut rng)?;
        report.steps += 1;
        let label = truth.map(|s| style_label(s, &record));
        let judgment = match judge.judge(&EpisodeRecord::Negotiation(record.clone())) {
            Ok(j) => j,
            Err(e) => return Err(TrainError::from_judge(e, i, || snapshot(&params, i, baseline))),
        };
        let reward = match judgment {
            Judgment::Reward(r) => r,
            Judgment::Unparseable(_) => {
                report.skipped += 1;
                continue;
            }
        };
        if let Some(l) = label {
            report.judged += 1;
            report.judged_correct += u64::from(l == reward);
        }
        let r = reward_value(reward);
        let b = match (config.baseline, baseline[1] > 0.0) {
            (false, _) => 0.0,
            (true, true) => baseline[0],
            (true, false) => 0.5,
        };
        let advantage = r - b;
        baseline[1] += 1.0;
        baseline[0] += (r - baseline[0]) / baseline[1];
        if advantage == 0.0 || decisions.is_empty() {
            continue;
        }
        let inputs = PolicyInputs::of(&record.context, &record.turns);
        let weights = vec![advantage; decisions.len()];
        let grad = policy.log_prob_gradient(&params, &inputs, &decisions, &weights)?;
        let next: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p + config.lr * g).collect();
        if !next.iter().all(|v| v.is_finite()) {
            return Err(TrainError::Model(crate::nn::NnError::NonFinite("policy parameters")));
        }
        params = next;
        report.updates += 1;
    }
    Ok((snapshot(&params, total, baseline), report))
}

/// Rolls the policy out once per context. First speakers, and acts under
/// [`Selection::Sample`], are drawn from `seed`.
pub fn evaluate_negotiation(
    snapshot: &PolicySnapshot,
    contexts: &[NegotiationContext],
    partner: &RuleBasedPartner,
    selection: Selection,
    seed: u64,
) -> Result<Vec<TrajectoryRecord>, TrainError> {
    if snapshot.env != EnvTag::Negotiation {
        return Err(TrainError::Contract(format!("policy was trained on {} but is evaluated on negotiation", snapshot.env)));
    }
    if contexts.is_empty() {
        return Err(TrainError::Contract("no contexts to evaluate on".into()));
    }
    let policy = NegotiationPolicy::from_arch(&snapshot.arch)?;
    let mut rng = crate::seed::rng(crate::seed::derive(seed, "negotiation-eval"));
    contexts
        .iter()
        .map(|&c| {
            let first = first_speaker(&mut rng);
            rollout(&policy, &snapshot.params, c, first, partner, selection, &mut rng)
        })
        .collect()
}
