use serde::{Deserialize, Serialize};

use super::{Agent, Allocation, DialogueAct, ItemVec, NegotiationError, NegotiationState, N_ITEMS};

/// The fixed negotiation partner.
///
/// Opens greedily (every item it values), agrees to any standing offer worth
/// at least `acceptance_threshold` to it, gives up one unit of its
/// least-valued item every `concession_period` of its own turns (never
/// dropping below the threshold), and ends the dialogue once it has spoken
/// `patience` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleBasedPartner {
    pub acceptance_threshold: u32,
    pub concession_period: usize,
    pub patience: usize,
}

impl Default for RuleBasedPartner {
    fn default() -> Self {
        Self { acceptance_threshold: 5, concession_period: 2, patience: 20 }
    }
}

impl RuleBasedPartner {
    /// What `me` wants for itself after `concessions` concessions.
    pub fn demand(&self, state: &NegotiationState, me: Agent, concessions: usize) -> ItemVec {
        let ctx = state.context();
        let values = ctx.values(me);
        let mut keep: ItemVec = core::array::from_fn(|k| if values[k] > 0 { ctx.counts[k] } else { 0 });
        let worth = |keep: &ItemVec| -> u32 { (0..N_ITEMS).map(|k| keep[k] as u32 * values[k] as u32).sum() };
        for _ in 0..concessions {
            // Cheapest item still held; lowest index breaks ties.
            let Some(k) = (0..N_ITEMS).filter(|&k| keep[k] > 0).min_by_key(|&k| (values[k], k)) else {
                break;
            };
            let mut next = keep;
            next[k] -= 1;
            if worth(&next) < self.acceptance_threshold {
                break;
            }
            keep = next;
        }
        keep
    }

    pub fn act(&self, state: &NegotiationState, me: Agent) -> Result<DialogueAct, NegotiationError> {
        if state.is_terminal() {
            return Err(NegotiationError::Terminal);
        }
        if let Some((by, offer)) = state.standing() {
            if by != me && offer.value(state.context(), me) >= self.acceptance_threshold {
                return Ok(DialogueAct::Agree);
            }
        }
        let my_turns = state.turns_of(me);
        if my_turns >= self.patience {
            return Ok(DialogueAct::End);
        }
        let keep = self.demand(state, me, my_turns / self.concession_period.max(1));
        let counts = state.context().counts;
        let given: ItemVec = core::array::from_fn(|k| counts[k] - keep[k]);
        let allocation = match me {
            Agent::Alice => Allocation { alice: keep, bob: given },
            Agent::Bob => Allocation { alice: given, bob: keep },
        };
        Ok(DialogueAct::Propose(allocation))
    }
}
