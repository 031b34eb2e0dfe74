//! The single-step Ultimatum Game with the responder objectives used as
//! ground truth.
//!
//! Money is an integer number of currency units so that every threshold
//! comparison is exact.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Money = u32;

/// Range of the endowment drawn by [`sample_proposals`].
pub const MIN_TOTAL: Money = 10;
pub const MAX_TOTAL: Money = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UltimatumError {
    #[error("endowment must be positive")]
    ZeroTotal,
    #[error("responder amount {amount} exceeds the endowment {total}")]
    AmountExceedsTotal { amount: Money, total: Money },
    #[error("requested zero proposals")]
    EmptyRequest,
    #[error("invalid objective: {0}")]
    InvalidObjective(alloc::string::String),
    #[error("no seed in {tries} attempts produced a proposal set covering every threshold")]
    CoverageExhausted { tries: u64 },
}

/// A proposed split: `responder_amount` of `total` goes to the Responder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawProposal")]
pub struct Proposal {
    total: Money,
    responder_amount: Money,
}

#[derive(Deserialize)]
struct RawProposal {
    total: Money,
    responder_amount: Money,
}

impl TryFrom<RawProposal> for Proposal {
    type Error = UltimatumError;

    fn try_from(raw: RawProposal) -> Result<Self, Self::Error> {
        Proposal::new(raw.total, raw.responder_amount)
    }
}

impl Proposal {
    pub fn new(total: Money, responder_amount: Money) -> Result<Self, UltimatumError> {
        if total == 0 {
            return Err(UltimatumError::ZeroTotal);
        }
        if responder_amount > total {
            return Err(UltimatumError::AmountExceedsTotal { amount: responder_amount, total });
        }
        Ok(Self { total, responder_amount })
    }

    pub fn total(&self) -> Money {
        self.total
    }

    pub fn responder_amount(&self) -> Money {
        self.responder_amount
    }

    pub fn proposer_amount(&self) -> Money {
        self.total - self.responder_amount
    }

    pub fn responder_share(&self) -> f64 {
        self.responder_amount as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponderAction {
    Accept,
    Reject,
}

impl ResponderAction {
    pub const ALL: [ResponderAction; 2] = [ResponderAction::Accept, ResponderAction::Reject];

    pub fn other(self) -> Self {
        match self {
            ResponderAction::Accept => ResponderAction::Reject,
            ResponderAction::Reject => ResponderAction::Accept,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ResponderAction::Accept => 0,
            ResponderAction::Reject => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }
}

/// Ground-truth responder preferences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UltimatumObjective {
    /// Reject when receiving strictly less than `percent`% of the endowment.
    PercentThreshold(u8),
    /// Reject when receiving strictly less than this amount.
    PayoffThreshold(Money),
    /// Reject anything other than an exact 50/50 split.
    InequityAversion,
}

impl UltimatumObjective {
    /// The five objectives studied: 30%, 60%, $10, $100 and inequity aversion.
    pub const STANDARD: [UltimatumObjective; 5] = [
        UltimatumObjective::PercentThreshold(30),
        UltimatumObjective::PercentThreshold(60),
        UltimatumObjective::PayoffThreshold(10),
        UltimatumObjective::PayoffThreshold(100),
        UltimatumObjective::InequityAversion,
    ];

    pub fn validate(self) -> Result<Self, UltimatumError> {
        match self {
            UltimatumObjective::PercentThreshold(p) if p == 0 || p >= 100 => Err(
                UltimatumError::InvalidObjective(alloc::format!("percent threshold {p} outside (0, 100)")),
            ),
            UltimatumObjective::PayoffThreshold(0) => {
                Err(UltimatumError::InvalidObjective("payoff threshold must be positive".into()))
            }
            other => Ok(other),
        }
    }
}

impl fmt::Display for UltimatumObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UltimatumObjective::PercentThreshold(p) => write!(f, "percent-{p}"),
            UltimatumObjective::PayoffThreshold(t) => write!(f, "payoff-{t}"),
            UltimatumObjective::InequityAversion => f.write_str("inequity-aversion"),
        }
    }
}

impl FromStr for UltimatumObjective {
    type Err = UltimatumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || UltimatumError::InvalidObjective(s.into());
        let objective = if s == "inequity-aversion" {
            UltimatumObjective::InequityAversion
        } else if let Some(p) = s.strip_prefix("percent-") {
            UltimatumObjective::PercentThreshold(p.parse().map_err(|_| bad())?)
        } else if let Some(t) = s.strip_prefix("payoff-") {
            UltimatumObjective::PayoffThreshold(t.parse().map_err(|_| bad())?)
        } else {
            return Err(bad());
        };
        objective.validate()
    }
}

/// `(proposer, responder)` payoffs.
pub fn payoff(proposal: Proposal, action: ResponderAction) -> (Money, Money) {
    match action {
        ResponderAction::Accept => (proposal.proposer_amount(), proposal.responder_amount()),
        ResponderAction::Reject => (0, 0),
    }
}

pub fn desired_action(objective: UltimatumObjective, proposal: Proposal) -> ResponderAction {
    let amount = proposal.responder_amount() as u64;
    let total = proposal.total() as u64;
    let reject = match objective {
        // share < p/100  <=>  100 * amount < p * total
        UltimatumObjective::PercentThreshold(p) => 100 * amount < p as u64 * total,
        UltimatumObjective::PayoffThreshold(t) => amount < t as u64,
        UltimatumObjective::InequityAversion => 2 * amount != total,
    };
    if reject {
        ResponderAction::Reject
    } else {
        ResponderAction::Accept
    }
}

/// `true` when `action` is the one the objective wants.
pub fn label(objective: UltimatumObjective, proposal: Proposal, action: ResponderAction) -> bool {
    desired_action(objective, proposal) == action
}

/// Endowment uniform on `[MIN_TOTAL, MAX_TOTAL]`, responder amount uniform on
/// `[0, total]`.
pub fn sample_proposals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<Proposal>, UltimatumError> {
    if n == 0 {
        return Err(UltimatumError::EmptyRequest);
    }
    Ok((0..n)
        .map(|_| {
            let total = rng.random_range(MIN_TOTAL..=MAX_TOTAL);
            let amount = rng.random_range(0..=total);
            Proposal { total, responder_amount: amount }
        })
        .collect())
}

/// True when, for every threshold objective, the set holds at least one
/// proposal the objective accepts and one it rejects.
pub fn covers_thresholds(proposals: &[Proposal]) -> bool {
    UltimatumObjective::STANDARD
        .iter()
        .filter(|o| !matches!(o, UltimatumObjective::InequityAversion))
        .all(|&o| {
            let rejects = proposals
                .iter()
                .filter(|&&p| desired_action(o, p) == ResponderAction::Reject)
                .count();
            rejects > 0 && rejects < proposals.len()
        })
}

/// Samples `n` proposals from `seed`, moving to `seed + 1`, `seed + 2`, ...
/// until the set covers every threshold. Returns the set and the seed used.
pub fn sample_covering_proposals(n: usize, seed: u64, max_tries: u64) -> Result<(Vec<Proposal>, u64), UltimatumError> {
    for k in 0..max_tries {
        let s = seed.wrapping_add(k);
        let proposals = sample_proposals(n, &mut crate::seed::rng(s))?;
        if covers_thresholds(&proposals) {
            return Ok((proposals, s));
        }
    }
    Err(UltimatumError::CoverageExhausted { tries: max_tries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(total: Money, amount: Money) -> Proposal {
        Proposal::new(total, amount).unwrap()
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(payoff(p(100, 40), ResponderAction::Accept), (60, 40));
        assert_eq!(payoff(p(100, 40), ResponderAction::Reject), (0, 0));
        assert_eq!(payoff(p(10, 0), ResponderAction::Accept), (10, 0));
    }

    #[test]
    fn desired_action_examples() {
        use UltimatumObjective::*;
        assert_eq!(desired_action(PercentThreshold(30), p(100, 20)), ResponderAction::Reject);
        assert_eq!(desired_action(PercentThreshold(60), p(10, 6)), ResponderAction::Accept);
        assert_eq!(desired_action(PayoffThreshold(100), p(1000, 99)), ResponderAction::Reject);
        assert_eq!(desired_action(InequityAversion, p(100, 50)), ResponderAction::Accept);
    }

    #[test]
    fn label_examples() {
        use UltimatumObjective::*;
        assert!(label(PercentThreshold(30), p(100, 20), ResponderAction::Reject));
        assert!(!label(PercentThreshold(60), p(10, 5), ResponderAction::Accept));
        assert!(label(InequityAversion, p(100, 49), ResponderAction::Reject));
    }

    #[test]
    fn invalid_proposals() {
        assert_eq!(Proposal::new(0, 0), Err(UltimatumError::ZeroTotal));
        assert!(matches!(Proposal::new(10, 11), Err(UltimatumError::AmountExceedsTotal { .. })));
    }

    #[test]
    fn objective_names_round_trip() {
        for o in UltimatumObjective::STANDARD {
            assert_eq!(o.to_string().parse::<UltimatumObjective>().unwrap(), o);
        }
        assert!("percent-0".parse::<UltimatumObjective>().is_err());
        assert!("payoff-0".parse::<UltimatumObjective>().is_err());
        assert!("fairness".parse::<UltimatumObjective>().is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_proposals(10, &mut crate::seed::rng(7)).unwrap();
        let b = sample_proposals(10, &mut crate::seed::rng(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(sample_proposals(0, &mut crate::seed::rng(7)), Err(UltimatumError::EmptyRequest));
    }

    #[test]
    fn fifty_proposals_valid_and_covering() {
        let set = sample_proposals(50, &mut crate::seed::rng(3)).unwrap();
        assert_eq!(set.len(), 50);
        assert!(set.iter().all(|q| q.responder_amount() <= q.total()));
        let (covering, used) = sample_covering_proposals(50, 3, 1000).unwrap();
        assert!(covers_thresholds(&covering));
        assert!(used >= 3);
    }

    fn arb_proposal() -> impl Strategy<Value = Proposal> {
        (1u32..=2000).prop_flat_map(|t| (Just(t), 0..=t)).prop_map(|(t, a)| p(t, a))
    }

    fn arb_objective() -> impl Strategy<Value = UltimatumObjective> {
        prop_oneof![
            (1u8..100).prop_map(UltimatumObjective::PercentThreshold),
            (1u32..500).prop_map(UltimatumObjective::PayoffThreshold),
            Just(UltimatumObjective::InequityAversion),
        ]
    }

    proptest! {
        #[test]
        fn payoffs_sum(q in arb_proposal()) {
            let (a, b) = payoff(q, ResponderAction::Accept);
            prop_assert_eq!(a + b, q.total());
            prop_assert_eq!(payoff(q, ResponderAction::Reject), (0, 0));
        }

        #[test]
        fn exactly_one_desirable_action(o in arb_objective(), q in arb_proposal()) {
            let a = label(o, q, ResponderAction::Accept) as u8;
            let r = label(o, q, ResponderAction::Reject) as u8;
            prop_assert_eq!(a + r, 1);
        }

        #[test]
        fn thresholds_are_monotone(pct in 1u8..100, t in 1u32..500, q in arb_proposal()) {
            for o in [UltimatumObjective::PercentThreshold(pct), UltimatumObjective::PayoffThreshold(t)] {
                if desired_action(o, q) == ResponderAction::Accept {
                    for more in q.responder_amount()..=q.total() {
                        prop_assert_eq!(desired_action(o, p(q.total(), more)), ResponderAction::Accept);
                    }
                }
            }
        }

        #[test]
        fn inequity_aversion_accepts_only_even_splits(q in arb_proposal()) {
            let accepts = desired_action(UltimatumObjective::InequityAversion, q) == ResponderAction::Accept;
            prop_assert_eq!(accepts, 2 * q.responder_amount() == q.total());
        }
    }
}
