//! Supervised judges trained on the same labeled examples a prompt would use.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{EnvTag, EpisodeRecord, Judge, JudgeError, Judgment, OutcomeJudgment};
use crate::math::ln;
use crate::matrix::MatrixGame;
use crate::negotiation::{
    Agent, Outcome, TrajectoryRecord, MAX_COUNT, MAX_POINTS, MAX_VALUE, N_ITEMS,
};
use crate::nn::{
    cross_entropy, decode_checkpoint, encode_checkpoint, Activation, ForwardCache, LayerSpec, Network, NetworkSpec,
    NnError, Optimizer, OptimizerKind,
};
use crate::ultimatum::{Proposal, ResponderAction, MAX_TOTAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub record: EpisodeRecord,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlConfig {
    /// Defaults to 5 (Ultimatum) or 50 (negotiation).
    pub epochs: Option<usize>,
    pub lr: f64,
    pub seed: u64,
    /// Negotiation only: recurrent act encoder, or a bag of acts when false.
    pub recurrent: bool,
    /// When nonempty, the parameters with the best accuracy here are kept.
    pub heldout: Vec<LabeledExample>,
}

impl Default for SlConfig {
    fn default() -> Self {
        Self { epochs: None, lr: 0.05, seed: 0, recurrent: true, heldout: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlReport {
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
    /// Epoch (1-based) whose parameters were kept.
    pub kept_epoch: usize,
    /// Records that appear with both labels.
    pub contradictions: usize,
}

/// `s * [share - 0.5, log-amount, log-total, 1]` with `s = +1` for accept and
/// `-1` for reject, so one linear boundary serves both actions.
pub fn ultimatum_features(proposal: Proposal, action: ResponderAction) -> Vec<f64> {
    let s = match action {
        ResponderAction::Accept => 1.0,
        ResponderAction::Reject => -1.0,
    };
    let scale = ln(1.0 + MAX_TOTAL as f64);
    let f = [
        proposal.responder_share() - 0.5,
        ln(1.0 + proposal.responder_amount() as f64) / scale - 0.5,
        ln(1.0 + proposal.total() as f64) / scale - 0.5,
        1.0,
    ];
    f.iter().map(|v| s * v).collect()
}

const COUNT_SLOTS: usize = MAX_COUNT as usize + 1;
const VALUE_SLOTS: usize = MAX_VALUE as usize + 1;
pub(crate) const CONTEXT_DIM: usize = N_ITEMS * (COUNT_SLOTS + 2 * VALUE_SLOTS);
pub(crate) const TURN_DIM: usize = 2 + 5 + N_ITEMS * COUNT_SLOTS;
const OUTCOME_DIM: usize = 1 + N_ITEMS * COUNT_SLOTS + 2;

pub(crate) fn context_features(ctx: &crate::negotiation::NegotiationContext) -> Vec<f64> {
    let mut x = vec![0.0; CONTEXT_DIM];
    for k in 0..N_ITEMS {
        x[k * COUNT_SLOTS + ctx.counts[k] as usize] = 1.0;
        let base = N_ITEMS * COUNT_SLOTS;
        x[base + k * VALUE_SLOTS + ctx.alice_values[k] as usize] = 1.0;
        x[base + N_ITEMS * VALUE_SLOTS + k * VALUE_SLOTS + ctx.bob_values[k] as usize] = 1.0;
    }
    x
}

fn share_one_hot(share: &[u8; N_ITEMS], out: &mut [f64]) {
    for k in 0..N_ITEMS {
        out[k * COUNT_SLOTS + (share[k] as usize).min(COUNT_SLOTS - 1)] = 1.0;
    }
}

pub(crate) fn turn_features(t: &crate::negotiation::Turn) -> Vec<f64> {
    let mut x = vec![0.0; TURN_DIM];
    x[match t.speaker {
        Agent::Alice => 0,
        Agent::Bob => 1,
    }] = 1.0;
    x[2 + t.act.type_index()] = 1.0;
    if let Some(a) = t.act.allocation() {
        share_one_hot(&a.alice, &mut x[7..]);
    }
    x
}

/// `(context, per-turn, outcome)` inputs of the negotiation classifier.
pub fn negotiation_features(r: &TrajectoryRecord) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let turns: Vec<Vec<f64>> = if r.turns.is_empty() {
        vec![vec![0.0; TURN_DIM]]
    } else {
        r.turns.iter().map(turn_features).collect()
    };
    let mut o = vec![0.0; OUTCOME_DIM];
    if let Outcome::Agreement(a) = r.outcome {
        o[0] = 1.0;
        share_one_hot(&a.alice, &mut o[1..]);
    }
    let (alice, bob) = r.score();
    o[OUTCOME_DIM - 2] = alice as f64 / MAX_POINTS as f64;
    o[OUTCOME_DIM - 1] = bob as f64 / MAX_POINTS as f64;
    (context_features(&r.context), turns, o)
}

/// Context encoder, act encoder (recurrent or bag of acts), outcome encoder
/// and a two-way softmax head over their concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationEncoder {
    context: Network,
    turns: Option<Network>,
    outcome: Network,
    head: Network,
}

struct NegCache {
    context: ForwardCache,
    turns: Option<ForwardCache>,
    outcome: ForwardCache,
    head: ForwardCache,
}

impl NegotiationEncoder {
    pub const CONTEXT_WIDTH: usize = 64;
    pub const TURN_WIDTH: usize = 32;
    pub const HIDDEN: usize = 128;
    pub const OUTCOME_WIDTH: usize = 32;

    pub fn new(recurrent: bool) -> Self {
        let tanh = Activation::Tanh;
        let context =
            Network::new(NetworkSpec::new(CONTEXT_DIM, vec![LayerSpec::Dense { width: Self::CONTEXT_WIDTH, activation: tanh }]))
                .expect("static spec");
        let turns = recurrent.then(|| {
            Network::new(NetworkSpec::new(
                TURN_DIM,
                vec![LayerSpec::Dense { width: Self::TURN_WIDTH, activation: tanh }, LayerSpec::Recurrent { hidden: Self::HIDDEN }],
            ))
            .expect("static spec")
        });
        let outcome =
            Network::new(NetworkSpec::new(OUTCOME_DIM, vec![LayerSpec::Dense { width: Self::OUTCOME_WIDTH, activation: tanh }]))
                .expect("static spec");
        let acts_width = if recurrent { Self::HIDDEN } else { TURN_DIM };
        let head = Network::new(NetworkSpec::new(
            Self::CONTEXT_WIDTH + acts_width + Self::OUTCOME_WIDTH,
            vec![LayerSpec::Dense { width: 2, activation: Activation::Identity }, LayerSpec::Softmax],
        ))
        .expect("static spec");
        Self { context, turns, outcome, head }
    }

    pub fn is_recurrent(&self) -> bool {
        self.turns.is_some()
    }

    fn parts(&self) -> Vec<&Network> {
        let mut v = vec![&self.context];
        if let Some(t) = &self.turns {
            v.push(t);
        }
        v.push(&self.outcome);
        v.push(&self.head);
        v
    }

    fn ranges(&self) -> Vec<core::ops::Range<usize>> {
        let mut off = 0;
        self.parts()
            .into_iter()
            .map(|n| {
                let r = off..off + n.param_count();
                off = r.end;
                r
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|n| n.param_count()).sum()
    }

    pub fn init_params<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.parts().into_iter().flat_map(|n| n.init_params(rng)).collect()
    }

    fn forward(&self, p: &[f64], r: &TrajectoryRecord) -> Result<NegCache, NnError> {
        let ranges = self.ranges();
        let (cx, turns, ox) = negotiation_features(r);
        let context = self.context.forward_one(&p[ranges[0].clone()], &cx)?;
        let (turn_cache, acts) = match &self.turns {
            Some(net) => {
                let c = net.forward(&p[ranges[1].clone()], &turns)?;
                let out = c.output().to_vec();
                (Some(c), out)
            }
            None => {
                let n = turns.len() as f64;
                let mut mean = vec![0.0; TURN_DIM];
                for t in &turns {
                    for (m, v) in mean.iter_mut().zip(t) {
                        *m += v / n;
                    }
                }
                (None, mean)
            }
        };
        let k = ranges.len();
        let outcome = self.outcome.forward_one(&p[ranges[k - 2].clone()], &ox)?;
        let mut joint = context.output().to_vec();
        joint.extend_from_slice(&acts);
        joint.extend_from_slice(outcome.output());
        let head = self.head.forward_one(&p[ranges[k - 1].clone()], &joint)?;
        Ok(NegCache { context, turns: turn_cache, outcome, head })
    }

    fn backward(&self, p: &[f64], c: &NegCache, d_probs: &[f64]) -> Result<Vec<f64>, NnError> {
        let ranges = self.ranges();
        let k = ranges.len();
        let mut grad = vec![0.0; p.len()];
        let gh = self.head.backward(&p[ranges[k - 1].clone()], &c.head, d_probs)?;
        grad[ranges[k - 1].clone()].copy_from_slice(&gh.params);
        let d_joint = &gh.inputs[0];
        let cw = Self::CONTEXT_WIDTH;
        let gc = self.context.backward(&p[ranges[0].clone()], &c.context, &d_joint[..cw])?;
        grad[ranges[0].clone()].copy_from_slice(&gc.params);
        let aw = if self.turns.is_some() { Self::HIDDEN } else { TURN_DIM };
        if let (Some(net), Some(tc)) = (&self.turns, &c.turns) {
            let gt = net.backward(&p[ranges[1].clone()], tc, &d_joint[cw..cw + aw])?;
            grad[ranges[1].clone()].copy_from_slice(&gt.params);
        }
        let go = self.outcome.backward(&p[ranges[k - 2].clone()], &c.outcome, &d_joint[cw + aw..])?;
        grad[ranges[k - 2].clone()].copy_from_slice(&go.params);
        Ok(grad)
    }

    fn specs(&self) -> Vec<NetworkSpec> {
        self.parts().into_iter().map(|n| n.spec().clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum SlModel {
    Ultimatum(Network),
    Negotiation(NegotiationEncoder),
}

impl SlModel {
    pub fn ultimatum() -> Self {
        let spec = NetworkSpec::new(
            4,
            vec![
                LayerSpec::Dense { width: 32, activation: Activation::Relu },
                LayerSpec::Dense { width: 2, activation: Activation::Identity },
                LayerSpec::Softmax,
            ],
        );
        SlModel::Ultimatum(Network::new(spec).expect("static spec"))
    }

    fn env(&self) -> EnvTag {
        match self {
            SlModel::Ultimatum(_) => EnvTag::Ultimatum,
            SlModel::Negotiation(_) => EnvTag::Negotiation,
        }
    }

    fn param_count(&self) -> usize {
        match self {
            SlModel::Ultimatum(n) => n.param_count(),
            SlModel::Negotiation(e) => e.param_count(),
        }
    }

    fn init_params<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            SlModel::Ultimatum(n) => n.init_params(rng),
            SlModel::Negotiation(e) => e.init_params(rng),
        }
    }

    /// Probability that the example deserves a reward.
    fn prob_yes(&self, p: &[f64], record: &EpisodeRecord) -> Result<f64, JudgeError> {
        Ok(self.forward_backward(p, record, None)?.0)
    }

    /// Forward pass and, with a label, the cross-entropy gradient.
    fn forward_backward(
        &self,
        p: &[f64],
        record: &EpisodeRecord,
        label: Option<bool>,
    ) -> Result<(f64, Option<Vec<f64>>), JudgeError> {
        match (self, record) {
            (SlModel::Ultimatum(net), EpisodeRecord::Ultimatum { proposal, action }) => {
                let c = net.forward_one(p, &ultimatum_features(*proposal, *action))?;
                let yes = c.output()[1];
                let grad = match label {
                    Some(l) => {
                        let (_, d) = cross_entropy(c.output(), usize::from(l))?;
                        Some(net.backward(p, &c, &d)?.params)
                    }
                    None => None,
                };
                Ok((yes, grad))
            }
            (SlModel::Negotiation(enc), EpisodeRecord::Negotiation(r)) => {
                let c = enc.forward(p, r)?;
                let probs = c.head.output().to_vec();
                let grad = match label {
                    Some(l) => {
                        let (_, d) = cross_entropy(&probs, usize::from(l))?;
                        Some(enc.backward(p, &c, &d)?)
                    }
                    None => None,
                };
                Ok((probs[1], grad))
            }
            _ => Err(JudgeError::EnvMismatch { expected: self.env(), actual: record.env() }),
        }
    }

    fn specs(&self) -> Vec<NetworkSpec> {
        match self {
            SlModel::Ultimatum(n) => vec![n.spec().clone()],
            SlModel::Negotiation(e) => e.specs(),
        }
    }
}

/// Trained classifier: reward iff P(yes) >= 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct SlJudge {
    model: SlModel,
    params: Vec<f64>,
    label: String,
}

const SL_MAGIC: &[u8; 4] = b"LRSL";

impl SlJudge {
    pub fn model(&self) -> &SlModel {
        &self.model
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn prob_yes(&self, record: &EpisodeRecord) -> Result<f64, JudgeError> {
        self.model.prob_yes(&self.params, record)
    }

    pub fn accuracy(&self, examples: &[LabeledExample]) -> Result<f64, JudgeError> {
        accuracy(&self.model, &self.params, examples)
    }

    /// `LRSL`, env byte, recurrent byte, label, then one network checkpoint
    /// per sub-network, each length-prefixed.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SL_MAGIC);
        out.push(match self.model.env() {
            EnvTag::Ultimatum => 0,
            _ => 2,
        });
        out.push(matches!(&self.model, SlModel::Negotiation(e) if e.is_recurrent()) as u8);
        out.extend_from_slice(&(self.label.len() as u32).to_le_bytes());
        out.extend_from_slice(self.label.as_bytes());
        let mut off = 0;
        for spec in self.model.specs() {
            let n = Network::new(spec.clone()).expect("valid spec").param_count();
            let bytes = encode_checkpoint(&spec, &self.params[off..off + n]);
            off += n;
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, JudgeError> {
        let bad = |m: &str| JudgeError::Model(NnError::Checkpoint(m.into()));
        if bytes.len() < 10 || &bytes[..4] != SL_MAGIC {
            return Err(bad("not a supervised judge checkpoint"));
        }
        let model = match (bytes[4], bytes[5]) {
            (0, _) => SlModel::ultimatum(),
            (2, r) => SlModel::Negotiation(NegotiationEncoder::new(r == 1)),
            _ => return Err(bad("unknown environment byte")),
        };
        let label_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let mut pos = 10;
        let label_bytes = bytes.get(pos..pos + label_len).ok_or_else(|| bad("truncated label"))?;
        let label = String::from_utf8(label_bytes.to_vec()).map_err(|_| bad("label is not UTF-8"))?;
        pos += label_len;
        let mut params = Vec::new();
        for spec in model.specs() {
            let len_bytes = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated"))?;
            let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
            pos += 8;
            let chunk = bytes.get(pos..pos + len).ok_or_else(|| bad("truncated"))?;
            params.extend(decode_checkpoint(&spec, chunk)?);
            pos += len;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { model, params, label })
    }
}

impl Judge for SlJudge {
    fn env(&self) -> EnvTag {
        self.model.env()
    }

    fn judge(&self, record: &EpisodeRecord) -> Result<Judgment, JudgeError> {
        Ok(Judgment::Reward(self.prob_yes(record)? >= 0.5))
    }

    fn judge_outcomes(&self, _game: &MatrixGame) -> Result<OutcomeJudgment, JudgeError> {
        Err(JudgeError::EnvMismatch { expected: self.env(), actual: EnvTag::Matrix })
    }

    fn describe(&self) -> String {
        format!("sl:{}", self.label)
    }
}

fn accuracy(model: &SlModel, p: &[f64], examples: &[LabeledExample]) -> Result<f64, JudgeError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for e in examples {
        correct += usize::from((model.prob_yes(p, &e.record)? >= 0.5) == e.label);
    }
    Ok(correct as f64 / examples.len() as f64)
}

fn contradictions(examples: &[LabeledExample]) -> usize {
    let mut seen: BTreeMap<String, (bool, bool)> = BTreeMap::new();
    for e in examples {
        let key = super::serialize_episode(&e.record);
        let entry = seen.entry(key).or_default();
        if e.label {
            entry.0 = true;
        } else {
            entry.1 = true;
        }
    }
    seen.values().filter(|(y, n)| *y && *n).count()
}

/// Trains a supervised judge with Adam, one example per update.
///
/// `label` names the judge in descriptions (typically the objective).
pub fn train_sl_judge(
    env: EnvTag,
    label: &str,
    examples: &[LabeledExample],
    config: &SlConfig,
) -> Result<(SlJudge, SlReport), JudgeError> {
    if examples.is_empty() {
        return Err(JudgeError::Contract("supervised judge needs at least one example".into()));
    }
    let (model, default_epochs) = match env {
        EnvTag::Ultimatum => (SlModel::ultimatum(), 5),
        EnvTag::Negotiation => (SlModel::Negotiation(NegotiationEncoder::new(config.recurrent)), 50),
        EnvTag::Matrix => {
            return Err(JudgeError::Contract("matrix objectives have no supervised baseline".into()));
        }
    };
    if let Some(e) = examples.iter().chain(&config.heldout).find(|e| e.record.env() != env) {
        return Err(JudgeError::EnvMismatch { expected: env, actual: e.record.env() });
    }
    let epochs = config.epochs.unwrap_or(default_epochs).max(1);
    let mut rng = crate::seed::rng(crate::seed::derive(config.seed, "sl-judge"));
    let mut params = model.init_params(&mut rng);
    let mut opt = Optimizer::new(OptimizerKind::adam(config.lr), model.param_count());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let e = &examples[i];
            let (_, grad) = model.forward_backward(&params, &e.record, Some(e.label))?;
            let grad = grad.expect("label given");
            // A non-finite gradient skips the update.
            let _ = opt.step(&mut params, &grad);
        }
        if !config.heldout.is_empty() {
            let acc = accuracy(&model, &params, &config.heldout)?;
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, params.clone()));
            }
        }
    }
    let (heldout_accuracy, kept_epoch) = match best {
        Some((acc, epoch, p)) => {
            params = p;
            (Some(acc), epoch)
        }
        None => (None, epochs),
    };
    let train_accuracy = accuracy(&model, &params, examples)?;
    let report = SlReport { train_accuracy, heldout_accuracy, kept_epoch, contradictions: contradictions(examples) };
    Ok((SlJudge { model, params, label: label.into() }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::{example_pool, select_examples, ExampleBalance, Objective};
    use crate::negotiation::NegotiationStyle;
    use crate::ultimatum::UltimatumObjective;

    fn examples(obj: Objective, n: usize, seed: u64) -> Vec<LabeledExample> {
        let pool = example_pool(&obj, 400, seed).unwrap();
        select_examples(&pool, n, ExampleBalance::Counterbalanced)
            .unwrap()
            .into_iter()
            .map(|(record, label)| LabeledExample { record, label })
            .collect()
    }

    #[test]
    fn action_sign_flips_features() {
        let p = Proposal::new(200, 50).unwrap();
        let a = ultimatum_features(p, ResponderAction::Accept);
        let r = ultimatum_features(p, ResponderAction::Reject);
        assert!(a.iter().zip(&r).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn fits_ten_threshold_examples() {
        let obj = Objective::Ultimatum(UltimatumObjective::PercentThreshold(30));
        let ex = examples(obj, 10, 0);
        let (j, report) = train_sl_judge(EnvTag::Ultimatum, "percent-30", &ex, &SlConfig::default()).unwrap();
        assert!(report.train_accuracy >= 0.9, "{report:?}");
        assert_eq!(report.contradictions, 0);
        assert!(j.describe().starts_with("sl:"));
    }

    #[test]
    fn negotiation_fits_three_examples() {
        for recurrent in [true, false] {
            let obj = Objective::Negotiation(NegotiationStyle::Competitive);
            let ex = examples(obj, 3, 1);
            let cfg = SlConfig { recurrent, lr: 0.01, ..SlConfig::default() };
            let (_, report) = train_sl_judge(EnvTag::Negotiation, "competitive", &ex, &cfg).unwrap();
            assert_eq!(report.train_accuracy, 1.0);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let obj = Objective::Negotiation(NegotiationStyle::Stubborn);
        let ex = examples(obj, 3, 2);
        let cfg = SlConfig { epochs: Some(2), ..SlConfig::default() };
        let (j, _) = train_sl_judge(EnvTag::Negotiation, "stubborn", &ex, &cfg).unwrap();
        let back = SlJudge::decode(&j.encode()).unwrap();
        assert_eq!(back, j);
        assert!(SlJudge::decode(&j.encode()[..20]).is_err());
    }

    #[test]
    fn contradictions_are_counted() {
        let obj = Objective::Ultimatum(UltimatumObjective::PayoffThreshold(10));
        let mut ex = examples(obj, 2, 3);
        let mut flipped = ex[0].clone();
        flipped.label = !flipped.label;
        ex.push(flipped);
        let (_, report) = train_sl_judge(EnvTag::Ultimatum, "payoff-10", &ex, &SlConfig::default()).unwrap();
        assert_eq!(report.contradictions, 1);
    }

    #[test]
    fn heldout_selection_keeps_best_epoch() {
        let obj = Objective::Ultimatum(UltimatumObjective::PercentThreshold(60));
        let ex = examples(obj, 10, 4);
        let heldout = examples(obj, 20, 5);
        let cfg = SlConfig { heldout: heldout.clone(), ..SlConfig::default() };
        let (j, report) = train_sl_judge(EnvTag::Ultimatum, "percent-60", &ex, &cfg).unwrap();
        assert_eq!(report.heldout_accuracy, Some(j.accuracy(&heldout).unwrap()));
    }

    #[test]
    fn wrong_env_is_rejected() {
        let ex = examples(Objective::Ultimatum(UltimatumObjective::InequityAversion), 2, 0);
        assert!(train_sl_judge(EnvTag::Negotiation, "x", &ex, &SlConfig::default()).is_err());
        assert!(train_sl_judge(EnvTag::Ultimatum, "x", &[], &SlConfig::default()).is_err());
    }
}
