//! Mapping model text back to rewards.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Judgment, OutcomeJudgment};
use crate::matrix::OutcomeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok<'a> {
    Word(&'a str),
    /// Sentence boundary (`.`, `!`, `?` or newline).
    Stop,
    Colon,
}

fn tokenize(text: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() || c == '\'' {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            out.push(Tok::Word(&text[s..i]));
        }
        match c {
            '.' | '!' | '?' | '\n' => out.push(Tok::Stop),
            ':' => out.push(Tok::Colon),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Tok::Word(&text[s..]));
    }
    out
}

fn yes_no(tok: &Tok<'_>) -> Option<bool> {
    match tok {
        Tok::Word(w) if w.eq_ignore_ascii_case("yes") => Some(true),
        Tok::Word(w) if w.eq_ignore_ascii_case("no") => Some(false),
        _ => None,
    }
}

fn is_word(tok: &Tok<'_>, word: &str) -> bool {
    matches!(tok, Tok::Word(w) if w.eq_ignore_ascii_case(word))
}

/// Index just past the last "answer is" / "answer:" marker.
fn after_last_marker(toks: &[Tok<'_>]) -> Option<usize> {
    (0..toks.len()).rev().find_map(|i| {
        if !is_word(&toks[i], "answer") {
            return None;
        }
        match toks.get(i + 1) {
            Some(Tok::Colon) => Some(i + 2),
            Some(t) if is_word(t, "is") => Some(i + 2),
            _ => None,
        }
    })
}

/// Reads a Yes/No verdict from free text.
///
/// In order:
/// 1. a response that opens with Yes or No is decided by it, unless the
///    opening sentence also contains the opposite word;
/// 2. otherwise the first Yes/No after the last "answer is" or "answer:"
///    decides;
/// 3. otherwise every standalone Yes/No in the text must agree.
///
/// Anything else, including text with no Yes/No at all, is unparseable.
pub fn parse_response(raw: &str) -> Judgment {
    let toks = tokenize(raw);
    let unparseable = || Judgment::Unparseable(raw.to_string());

    if let Some(first) = toks.first().and_then(yes_no) {
        let sentence = toks.iter().take_while(|t| **t != Tok::Stop);
        if sentence.filter_map(yes_no).any(|v| v != first) {
            return unparseable();
        }
        return Judgment::Reward(first);
    }
    if let Some(i) = after_last_marker(&toks) {
        if let Some(v) = toks[i..].iter().take_while(|t| **t != Tok::Stop).find_map(yes_no) {
            return Judgment::Reward(v);
        }
    }
    let mut verdicts = toks.iter().filter_map(yes_no);
    match verdicts.next() {
        Some(v) if verdicts.all(|w| w == v) => Judgment::Reward(v),
        _ => unparseable(),
    }
}

/// Reads a set of option letters (A-D) from the text after the last answer
/// marker. "none" yields the empty set.
pub fn parse_outcome_response(raw: &str) -> OutcomeJudgment {
    let toks = tokenize(raw);
    let Some(i) = after_last_marker(&toks) else {
        return OutcomeJudgment::Unparseable(raw.to_string());
    };
    let mut set = OutcomeSet::EMPTY;
    let mut none = false;
    for t in toks[i..].iter().take_while(|t| **t != Tok::Stop) {
        let Tok::Word(w) = t else { continue };
        match w.as_bytes() {
            [c @ b'A'..=b'D'] => set.insert((c - b'A') as usize),
            _ if w.eq_ignore_ascii_case("none") => none = true,
            _ => {}
        }
    }
    match (set.is_empty(), none) {
        (false, false) => OutcomeJudgment::Outcomes(set),
        (true, true) => OutcomeJudgment::Outcomes(OutcomeSet::EMPTY),
        _ => OutcomeJudgment::Unparseable(raw.to_string()),
    }
}

/// Canonical reply text for an outcome set, e.g. `Answer: A, C`.
pub(crate) fn render_outcomes(set: OutcomeSet) -> String {
    if set.is_empty() {
        return "Answer: none".to_string();
    }
    let letters: Vec<String> = set.iter().map(|i| crate::matrix::option_letter(i).to_string()).collect();
    alloc::format!("Answer: {}", letters.join(", "))
}
