//! Text rendering of episodes and its inverse.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EnvTag, JudgeError};
use crate::matrix::{option_letter, MatrixGame};
use crate::negotiation::{
    Agent, Allocation, DialogueAct, ItemVec, NegotiationContext, Outcome, TrajectoryRecord, Turn, ITEM_NAMES, N_ITEMS,
};
use crate::ultimatum::{Proposal, ResponderAction};

/// One rollout, in whichever environment it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "lowercase")]
pub enum EpisodeRecord {
    Ultimatum { proposal: Proposal, action: ResponderAction },
    /// The game whose outcomes are offered as options. The learner's choice
    /// is not part of the text: the judge names acceptable outcomes instead.
    Matrix { game: MatrixGame },
    Negotiation(TrajectoryRecord),
}

impl EpisodeRecord {
    pub fn env(&self) -> EnvTag {
        match self {
            EpisodeRecord::Ultimatum { .. } => EnvTag::Ultimatum,
            EpisodeRecord::Matrix { .. } => EnvTag::Matrix,
            EpisodeRecord::Negotiation(_) => EnvTag::Negotiation,
        }
    }
}

const ULTIMATUM_PREFIX: &str = "The Proposer offers $";
const MATRIX_HEADER: &str = "Outcomes:";
const NEGOTIATION_HEADER: &str = "Negotiation:";

pub fn serialize_episode(record: &EpisodeRecord) -> String {
    let mut s = String::new();
    match record {
        EpisodeRecord::Ultimatum { proposal, action } => {
            let verb = match action {
                ResponderAction::Accept => "accepts",
                ResponderAction::Reject => "rejects",
            };
            let _ = write!(
                s,
                "{ULTIMATUM_PREFIX}{} of ${} to the Responder. The Responder {verb}.",
                proposal.responder_amount(),
                proposal.total()
            );
        }
        EpisodeRecord::Matrix { game } => {
            s.push_str(MATRIX_HEADER);
            for o in game.outcomes() {
                let _ = write!(
                    s,
                    "\n{}) Player 1 plays {} and Player 2 plays {}; Player 1 receives {} and Player 2 receives {}.",
                    option_letter(o.index),
                    o.row_action,
                    o.col_action,
                    o.rewards.0,
                    o.rewards.1
                );
            }
        }
        EpisodeRecord::Negotiation(r) => {
            s.push_str(NEGOTIATION_HEADER);
            let _ = write!(s, "\nItems: {}", items(&r.context.counts));
            let _ = write!(s, "\nAlice's values: {}", items(&r.context.alice_values));
            let _ = write!(s, "\nBob's values: {}", items(&r.context.bob_values));
            for t in &r.turns {
                let _ = write!(s, "\n{}: {}", t.speaker, act_text(&t.act));
            }
            match r.outcome {
                Outcome::Agreement(a) => {
                    let _ = write!(
                        s,
                        "\nOutcome: agreement. Alice gets {} for {} points; Bob gets {} for {} points.",
                        items(&a.alice),
                        a.value(&r.context, Agent::Alice),
                        items(&a.bob),
                        a.value(&r.context, Agent::Bob)
                    );
                }
                Outcome::Disagreement => s.push_str("\nOutcome: disagreement. Both get 0 points."),
            }
        }
    }
    s
}

fn items(v: &ItemVec) -> String {
    let mut s = String::new();
    for k in 0..N_ITEMS {
        if k > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{}={}", ITEM_NAMES[k], v[k]);
    }
    s
}

fn allocation_text(a: &Allocation) -> String {
    format!("Alice({}) Bob({})", items(&a.alice), items(&a.bob))
}

fn act_text(act: &DialogueAct) -> String {
    match act {
        DialogueAct::Propose(a) | DialogueAct::Insist(a) => format!("{} {}", act.name(), allocation_text(a)),
        _ => act.name().to_string(),
    }
}

fn bad(msg: impl Into<String>) -> JudgeError {
    JudgeError::Episode(msg.into())
}

/// Inverse of [`serialize_episode`]. Matrix games come back without a name.
pub fn parse_episode(env: EnvTag, text: &str) -> Result<EpisodeRecord, JudgeError> {
    match env {
        EnvTag::Ultimatum => parse_ultimatum(text.trim()),
        EnvTag::Matrix => parse_matrix(text.trim()),
        EnvTag::Negotiation => parse_negotiation(text.trim()),
    }
}

/// Locates the last rendered episode of `env` inside a larger text (such as
/// a prompt whose few-shot examples precede the query) and parses it.
pub fn find_last_episode(env: EnvTag, text: &str) -> Result<EpisodeRecord, JudgeError> {
    let (marker, lines) = match env {
        EnvTag::Ultimatum => (ULTIMATUM_PREFIX, 1),
        EnvTag::Matrix => (MATRIX_HEADER, 5),
        EnvTag::Negotiation => (NEGOTIATION_HEADER, usize::MAX),
    };
    let start = text.rfind(marker).ok_or_else(|| bad(format!("no `{marker}` in text")))?;
    let rest = &text[start..];
    let block: String = if env == EnvTag::Negotiation {
        let end = rest.find("\nOutcome: ").ok_or_else(|| bad("negotiation without outcome"))?;
        let tail = &rest[end + 1..];
        let line_end = tail.find('\n').unwrap_or(tail.len());
        rest[..end + 1 + line_end].to_string()
    } else {
        rest.lines().take(lines).collect::<Vec<_>>().join("\n")
    };
    parse_episode(env, &block)
}

fn number<T: core::str::FromStr>(s: &str) -> Result<T, JudgeError> {
    s.trim().parse().map_err(|_| bad(format!("`{s}` is not a number")))
}

fn parse_ultimatum(text: &str) -> Result<EpisodeRecord, JudgeError> {
    let rest = text.strip_prefix(ULTIMATUM_PREFIX).ok_or_else(|| bad("missing proposer sentence"))?;
    let (amount, rest) = rest.split_once(" of $").ok_or_else(|| bad("missing total"))?;
    let (total, rest) = rest.split_once(" to the Responder. The Responder ").ok_or_else(|| bad("missing responder"))?;
    let action = match rest {
        "accepts." => ResponderAction::Accept,
        "rejects." => ResponderAction::Reject,
        other => return Err(bad(format!("unknown responder action `{other}`"))),
    };
    let proposal = Proposal::new(number(total)?, number(amount)?).map_err(|e| bad(e.to_string()))?;
    Ok(EpisodeRecord::Ultimatum { proposal, action })
}

fn parse_matrix(text: &str) -> Result<EpisodeRecord, JudgeError> {
    let mut lines = text.lines();
    if lines.next() != Some(MATRIX_HEADER) {
        return Err(bad("missing outcomes header"));
    }
    let mut rows: Vec<(String, String, (f64, f64))> = Vec::with_capacity(4);
    for i in 0..4 {
        let line = lines.next().ok_or_else(|| bad("fewer than four outcomes"))?;
        let prefix = format!("{}) Player 1 plays ", option_letter(i));
        let rest = line.strip_prefix(prefix.as_str()).ok_or_else(|| bad(format!("bad outcome line `{line}`")))?;
        let (row, rest) = rest.split_once(" and Player 2 plays ").ok_or_else(|| bad("missing column action"))?;
        let (col, rest) = rest.split_once("; Player 1 receives ").ok_or_else(|| bad("missing rewards"))?;
        let (r1, r2) = rest.split_once(" and Player 2 receives ").ok_or_else(|| bad("missing column reward"))?;
        let r2 = r2.strip_suffix('.').ok_or_else(|| bad("unterminated outcome line"))?;
        rows.push((row.to_string(), col.to_string(), (number(r1)?, number(r2)?)));
    }
    if lines.next().is_some() {
        return Err(bad("trailing text after outcomes"));
    }
    // Outcome i is (row i / 2, column i % 2).
    if rows[0].0 != rows[1].0 || rows[2].0 != rows[3].0 || rows[0].1 != rows[2].1 || rows[1].1 != rows[3].1 {
        return Err(bad("outcomes do not form a 2x2 grid"));
    }
    let game = MatrixGame::new(
        "",
        [rows[0].0.as_str(), rows[2].0.as_str()],
        [rows[0].1.as_str(), rows[1].1.as_str()],
        [[rows[0].2, rows[1].2], [rows[2].2, rows[3].2]],
    )
    .map_err(|e| bad(e.to_string()))?;
    Ok(EpisodeRecord::Matrix { game })
}

fn parse_items(s: &str) -> Result<ItemVec, JudgeError> {
    let mut out = [0u8; N_ITEMS];
    let mut parts = s.split(' ');
    for k in 0..N_ITEMS {
        let part = parts.next().ok_or_else(|| bad(format!("missing {}", ITEM_NAMES[k])))?;
        let (name, n) = part.split_once('=').ok_or_else(|| bad(format!("bad item `{part}`")))?;
        if name != ITEM_NAMES[k] {
            return Err(bad(format!("expected {}, found `{name}`", ITEM_NAMES[k])));
        }
        out[k] = number(n)?;
    }
    if parts.next().is_some() {
        return Err(bad(format!("extra items in `{s}`")));
    }
    Ok(out)
}

fn parse_allocation(s: &str) -> Result<Allocation, JudgeError> {
    let rest = s.strip_prefix("Alice(").ok_or_else(|| bad(format!("bad allocation `{s}`")))?;
    let (alice, rest) = rest.split_once(") Bob(").ok_or_else(|| bad(format!("bad allocation `{s}`")))?;
    let bob = rest.strip_suffix(')').ok_or_else(|| bad(format!("bad allocation `{s}`")))?;
    Ok(Allocation { alice: parse_items(alice)?, bob: parse_items(bob)? })
}

fn parse_act(s: &str) -> Result<DialogueAct, JudgeError> {
    match s {
        "agree" => return Ok(DialogueAct::Agree),
        "disagree" => return Ok(DialogueAct::Disagree),
        "end" => return Ok(DialogueAct::End),
        _ => {}
    }
    if let Some(a) = s.strip_prefix("propose ") {
        return Ok(DialogueAct::Propose(parse_allocation(a)?));
    }
    if let Some(a) = s.strip_prefix("insist ") {
        return Ok(DialogueAct::Insist(parse_allocation(a)?));
    }
    Err(bad(format!("unknown act `{s}`")))
}

fn parse_negotiation(text: &str) -> Result<EpisodeRecord, JudgeError> {
    let mut lines = text.lines();
    if lines.next() != Some(NEGOTIATION_HEADER) {
        return Err(bad("missing negotiation header"));
    }
    let mut field = |prefix: &str| -> Result<ItemVec, JudgeError> {
        let line = lines.next().ok_or_else(|| bad(format!("missing `{prefix}`")))?;
        parse_items(line.strip_prefix(prefix).ok_or_else(|| bad(format!("expected `{prefix}`")))?)
    };
    let counts = field("Items: ")?;
    let alice_values = field("Alice's values: ")?;
    let bob_values = field("Bob's values: ")?;
    let context = NegotiationContext::new(counts, alice_values, bob_values).map_err(|e| bad(e.to_string()))?;
    let mut turns = Vec::new();
    let mut outcome = None;
    for line in lines {
        if let Some(rest) = line.strip_prefix("Outcome: ") {
            if rest == "disagreement. Both get 0 points." {
                outcome = Some(Outcome::Disagreement);
            } else {
                let rest = rest.strip_prefix("agreement. Alice gets ").ok_or_else(|| bad("bad outcome"))?;
                let (alice, rest) = rest.split_once(" for ").ok_or_else(|| bad("bad outcome"))?;
                let (_, rest) = rest.split_once(" points; Bob gets ").ok_or_else(|| bad("bad outcome"))?;
                let (bob, _) = rest.split_once(" for ").ok_or_else(|| bad("bad outcome"))?;
                outcome = Some(Outcome::Agreement(Allocation { alice: parse_items(alice)?, bob: parse_items(bob)? }));
            }
            continue;
        }
        if outcome.is_some() {
            return Err(bad("text after outcome"));
        }
        let (speaker, act) = line.split_once(": ").ok_or_else(|| bad(format!("bad turn `{line}`")))?;
        let speaker = match speaker {
            "Alice" => Agent::Alice,
            "Bob" => Agent::Bob,
            other => return Err(bad(format!("unknown speaker `{other}`"))),
        };
        turns.push(Turn { speaker, act: parse_act(act)? });
    }
    let outcome = outcome.ok_or_else(|| bad("missing outcome"))?;
    Ok(EpisodeRecord::Negotiation(TrajectoryRecord { context, turns, outcome }))
}
