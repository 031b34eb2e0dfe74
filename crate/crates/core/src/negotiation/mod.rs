//! Coarse dialogue-act negotiation over books, hats and balls.
//!
//! Alice (the learner) and Bob (a fixed partner) exchange acts until one
//! agrees to the standing proposal, one ends the dialogue, or
//! [`MAX_TURNS`] acts have been made. Points are only paid on agreement.

mod partner;

pub use partner::RuleBasedPartner;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_ITEMS: usize = 3;
pub const ITEM_NAMES: [&str; N_ITEMS] = ["books", "hats", "balls"];
pub const MAX_TURNS: usize = 100;
/// Every agent's full-inventory value.
pub const MAX_POINTS: u32 = 10;
pub const MAX_COUNT: u8 = 4;
pub const MAX_VALUE: u8 = 10;
pub const DEFAULT_MAX_REJECTIONS: u64 = 1_000_000;

pub type ItemVec = [u8; N_ITEMS];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NegotiationError {
    #[error("the dialogue has already ended")]
    Terminal,
    #[error("the dialogue has not ended yet")]
    NotTerminal,
    #[error("{0} cannot agree: there is no standing proposal from the other side")]
    NothingToAgree(Agent),
    #[error("allocation does not split the items exactly")]
    IncompleteAllocation,
    #[error("context sampling gave up after {0} rejections")]
    SamplingExhausted(u64),
    #[error("invalid context: {0}")]
    InvalidContext(String),
    #[error("unknown negotiation style `{0}`")]
    UnknownStyle(String),
}

fn dot(a: &ItemVec, b: &ItemVec) -> u32 {
    a.iter().zip(b).map(|(&x, &y)| x as u32 * y as u32).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Agent {
    Alice,
    Bob,
}

impl Agent {
    pub fn other(self) -> Agent {
        match self {
            Agent::Alice => Agent::Bob,
            Agent::Bob => Agent::Alice,
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Agent::Alice => "Alice",
            Agent::Bob => "Bob",
        })
    }
}

/// Item counts plus each agent's private per-item values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NegotiationContext {
    pub counts: ItemVec,
    pub alice_values: ItemVec,
    pub bob_values: ItemVec,
}

impl NegotiationContext {
    pub fn new(counts: ItemVec, alice_values: ItemVec, bob_values: ItemVec) -> Result<Self, NegotiationError> {
        let ctx = Self { counts, alice_values, bob_values };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<(), NegotiationError> {
        if self.counts.iter().any(|&c| c == 0 || c > MAX_COUNT) {
            return Err(NegotiationError::InvalidContext("item counts must be in 1..=4".into()));
        }
        if self.alice_values.iter().chain(&self.bob_values).any(|&v| v > MAX_VALUE) {
            return Err(NegotiationError::InvalidContext("values must be in 0..=10".into()));
        }
        if dot(&self.alice_values, &self.counts) != MAX_POINTS || dot(&self.bob_values, &self.counts) != MAX_POINTS {
            return Err(NegotiationError::InvalidContext("each agent's inventory must be worth 10 points".into()));
        }
        Ok(())
    }

    pub fn values(&self, agent: Agent) -> &ItemVec {
        match agent {
            Agent::Alice => &self.alice_values,
            Agent::Bob => &self.bob_values,
        }
    }

    /// Every complete allocation, in lexicographic order of Alice's share.
    pub fn allocations(&self) -> Vec<Allocation> {
        let c = self.counts;
        let mut out = Vec::with_capacity(((c[0] + 1) * (c[1] + 1) * (c[2] + 1)) as usize);
        for a in 0..=c[0] {
            for b in 0..=c[1] {
                for d in 0..=c[2] {
                    out.push(Allocation::for_alice([a, b, d], &c));
                }
            }
        }
        out
    }
}

/// Uniform counts and values, rejection-sampled until both agents'
/// inventories are worth exactly [`MAX_POINTS`].
pub fn sample_context<R: Rng + ?Sized>(rng: &mut R, max_rejections: u64) -> Result<NegotiationContext, NegotiationError> {
    let mut rejections = 0;
    loop {
        let counts: ItemVec = core::array::from_fn(|_| rng.random_range(1..=MAX_COUNT));
        let alice: ItemVec = core::array::from_fn(|_| rng.random_range(0..=MAX_VALUE));
        if dot(&alice, &counts) == MAX_POINTS {
            let bob: ItemVec = core::array::from_fn(|_| rng.random_range(0..=MAX_VALUE));
            if dot(&bob, &counts) == MAX_POINTS {
                return Ok(NegotiationContext { counts, alice_values: alice, bob_values: bob });
            }
        }
        rejections += 1;
        if rejections >= max_rejections {
            return Err(NegotiationError::SamplingExhausted(rejections));
        }
    }
}

/// Items assigned to each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Allocation {
    pub alice: ItemVec,
    pub bob: ItemVec,
}

impl Allocation {
    /// Alice takes `alice`, Bob gets the rest. Saturates at zero.
    pub fn for_alice(alice: ItemVec, counts: &ItemVec) -> Self {
        Self { alice, bob: core::array::from_fn(|k| counts[k].saturating_sub(alice[k])) }
    }

    pub fn share(&self, agent: Agent) -> &ItemVec {
        match agent {
            Agent::Alice => &self.alice,
            Agent::Bob => &self.bob,
        }
    }

    pub fn is_complete(&self, counts: &ItemVec) -> bool {
        (0..N_ITEMS).all(|k| self.alice[k] as u16 + self.bob[k] as u16 == counts[k] as u16)
    }

    pub fn value(&self, ctx: &NegotiationContext, agent: Agent) -> u32 {
        dot(self.share(agent), ctx.values(agent))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "act", content = "allocation", rename_all = "lowercase")]
pub enum DialogueAct {
    Propose(Allocation),
    Insist(Allocation),
    Agree,
    Disagree,
    End,
}

impl DialogueAct {
    pub fn allocation(&self) -> Option<&Allocation> {
        match self {
            DialogueAct::Propose(a) | DialogueAct::Insist(a) => Some(a),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DialogueAct::Propose(_) => "propose",
            DialogueAct::Insist(_) => "insist",
            DialogueAct::Agree => "agree",
            DialogueAct::Disagree => "disagree",
            DialogueAct::End => "end",
        }
    }

    pub fn type_index(&self) -> usize {
        match self {
            DialogueAct::Propose(_) => 0,
            DialogueAct::Insist(_) => 1,
            DialogueAct::Agree => 2,
            DialogueAct::Disagree => 3,
            DialogueAct::End => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Agent,
    pub act: DialogueAct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "allocation", rename_all = "lowercase")]
pub enum Outcome {
    Agreement(Allocation),
    Disagreement,
}

/// A dialogue in progress.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegotiationState {
    context: NegotiationContext,
    history: Vec<Turn>,
    standing: Option<(Agent, Allocation)>,
    outcome: Option<Outcome>,
}

impl NegotiationState {
    pub fn new(context: NegotiationContext) -> Self {
        Self { context, history: Vec::new(), standing: None, outcome: None }
    }

    pub fn context(&self) -> &NegotiationContext {
        &self.context
    }

    pub fn history(&self) -> &[Turn] {
        &self.history
    }

    pub fn turn_index(&self) -> usize {
        self.history.len()
    }

    /// The proposal currently on the table and who made it.
    pub fn standing(&self) -> Option<(Agent, Allocation)> {
        self.standing
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    /// The last allocation `agent` proposed or insisted on.
    pub fn last_allocation_of(&self, agent: Agent) -> Option<Allocation> {
        self.history
            .iter()
            .rev()
            .filter(|t| t.speaker == agent)
            .find_map(|t| t.act.allocation().copied())
    }

    pub fn turns_of(&self, agent: Agent) -> usize {
        self.history.iter().filter(|t| t.speaker == agent).count()
    }

    /// Checks `act` against the current state without applying it.
    pub fn check(&self, speaker: Agent, act: &DialogueAct) -> Result<(), NegotiationError> {
        if self.is_terminal() {
            return Err(NegotiationError::Terminal);
        }
        match act {
            DialogueAct::Propose(a) | DialogueAct::Insist(a) if !a.is_complete(&self.context.counts) => {
                Err(NegotiationError::IncompleteAllocation)
            }
            DialogueAct::Agree if !matches!(self.standing, Some((by, _)) if by != speaker) => {
                Err(NegotiationError::NothingToAgree(speaker))
            }
            _ => Ok(()),
        }
    }

    /// Applies one act. On error the state is unchanged.
    ///
    /// `Agree` adopts the standing proposal. `End` closes the dialogue; it
    /// counts as agreement only when both agents' last proposals are the
    /// same allocation. Reaching [`MAX_TURNS`] is a disagreement.
    pub fn step(&mut self, speaker: Agent, act: DialogueAct) -> Result<(), NegotiationError> {
        self.check(speaker, &act)?;
        self.history.push(Turn { speaker, act });
        match act {
            DialogueAct::Propose(a) | DialogueAct::Insist(a) => self.standing = Some((speaker, a)),
            DialogueAct::Agree => {
                let (_, a) = self.standing.expect("checked above");
                self.outcome = Some(Outcome::Agreement(a));
            }
            DialogueAct::Disagree => self.standing = None,
            DialogueAct::End => {
                let mine = self.last_allocation_of(speaker);
                let theirs = self.last_allocation_of(speaker.other());
                self.outcome = Some(match (self.standing, mine, theirs) {
                    (Some((_, s)), Some(m), Some(t)) if m == t && m == s => Outcome::Agreement(s),
                    _ => Outcome::Disagreement,
                });
            }
        }
        if self.outcome.is_none() && self.history.len() >= MAX_TURNS {
            self.outcome = Some(Outcome::Disagreement);
        }
        Ok(())
    }

    pub fn to_record(&self) -> Result<TrajectoryRecord, NegotiationError> {
        let outcome = self.outcome.ok_or(NegotiationError::NotTerminal)?;
        Ok(TrajectoryRecord { context: self.context, turns: self.history.clone(), outcome })
    }

    pub fn score(&self) -> Result<(u32, u32), NegotiationError> {
        Ok(self.to_record()?.score())
    }
}

/// A finished dialogue: the unit that is logged, rendered for a judge and
/// scored by the style oracles.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub context: NegotiationContext,
    pub turns: Vec<Turn>,
    pub outcome: Outcome,
}

impl TrajectoryRecord {
    /// `(Alice's points, Bob's points)`; zero for both without a complete
    /// agreed split.
    pub fn score(&self) -> (u32, u32) {
        match self.outcome {
            Outcome::Agreement(a) if a.is_complete(&self.context.counts) => {
                (a.value(&self.context, Agent::Alice), a.value(&self.context, Agent::Bob))
            }
            _ => (0, 0),
        }
    }

    pub fn agreed(&self) -> bool {
        matches!(self.outcome, Outcome::Agreement(_))
    }

    pub fn acts_of(&self, agent: Agent) -> impl Iterator<Item = &DialogueAct> + '_ {
        self.turns.iter().filter(move |t| t.speaker == agent).map(|t| &t.act)
    }

    /// Alice's proposed allocations in order; insist counts like propose.
    pub fn alice_allocations(&self) -> impl Iterator<Item = &Allocation> + '_ {
        self.acts_of(Agent::Alice).filter_map(DialogueAct::allocation)
    }

    /// Fraction of Alice's acts that are unique within the dialogue.
    /// A dialogue where Alice never speaks counts as fully diverse.
    pub fn diversity(&self) -> f64 {
        let acts: Vec<&DialogueAct> = self.acts_of(Agent::Alice).collect();
        if acts.is_empty() {
            return 1.0;
        }
        let unique: BTreeSet<&DialogueAct> = acts.iter().copied().collect();
        unique.len() as f64 / acts.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NegotiationStyle {
    Versatile,
    PushOver,
    Competitive,
    Stubborn,
}

impl NegotiationStyle {
    pub const ALL: [NegotiationStyle; 4] = [
        NegotiationStyle::Versatile,
        NegotiationStyle::PushOver,
        NegotiationStyle::Competitive,
        NegotiationStyle::Stubborn,
    ];

    /// The word used for the style in prompts.
    pub fn keyword(self) -> &'static str {
        match self {
            NegotiationStyle::Versatile => "versatile",
            NegotiationStyle::PushOver => "push-over",
            NegotiationStyle::Competitive => "competitive",
            NegotiationStyle::Stubborn => "stubborn",
        }
    }
}

impl fmt::Display for NegotiationStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl FromStr for NegotiationStyle {
    type Err = NegotiationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.keyword() == s)
            .ok_or_else(|| NegotiationError::UnknownStyle(s.into()))
    }
}

fn repeats_allocation(record: &TrajectoryRecord) -> bool {
    let mut seen = BTreeSet::new();
    record.alice_allocations().any(|a| !seen.insert(*a))
}

pub fn style_label(style: NegotiationStyle, record: &TrajectoryRecord) -> bool {
    let (alice, bob) = record.score();
    match style {
        NegotiationStyle::Versatile => !repeats_allocation(record),
        NegotiationStyle::PushOver => alice < bob,
        NegotiationStyle::Competitive => alice > bob,
        NegotiationStyle::Stubborn => repeats_allocation(record),
    }
}

/// Style oracle on a live state; errors if the dialogue is still running.
pub fn style_label_of_state(style: NegotiationStyle, state: &NegotiationState) -> Result<bool, NegotiationError> {
    Ok(style_label(style, &state.to_record()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualitativeMetrics {
    /// Mean of Alice's points minus Bob's points.
    pub advantage: f64,
    /// Mean per-dialogue fraction of unique Alice acts.
    pub diversity: f64,
    pub agreement_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no dialogues to summarize")]
pub struct EmptyInput;

pub fn qualitative_metrics(records: &[TrajectoryRecord]) -> Result<QualitativeMetrics, EmptyInput> {
    if records.is_empty() {
        return Err(EmptyInput);
    }
    let n = records.len() as f64;
    let advantage = records
        .iter()
        .map(|r| {
            let (a, b) = r.score();
            a as f64 - b as f64
        })
        .sum::<f64>()
        / n;
    let diversity = records.iter().map(TrajectoryRecord::diversity).sum::<f64>() / n;
    let agreement_rate = records.iter().filter(|r| r.agreed()).count() as f64 / n;
    Ok(QualitativeMetrics { advantage, diversity, agreement_rate })
}

/// Runs one dialogue to completion. `alice` is asked for an act whenever it
/// is her turn; Bob is the rule-based partner.
pub fn run_dialogue<E>(
    context: NegotiationContext,
    first: Agent,
    partner: &RuleBasedPartner,
    mut alice: impl FnMut(&NegotiationState) -> Result<DialogueAct, E>,
) -> Result<NegotiationState, E>
where
    E: From<NegotiationError>,
{
    let mut state = NegotiationState::new(context);
    let mut speaker = first;
    while !state.is_terminal() {
        let act = match speaker {
            Agent::Alice => alice(&state)?,
            Agent::Bob => partner.act(&state, Agent::Bob)?,
        };
        state.step(speaker, act)?;
        speaker = speaker.other();
    }
    Ok(state)
}
