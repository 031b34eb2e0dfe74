//! Offline stand-ins for a language model.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use core::sync::atomic::{AtomicUsize, Ordering};

use super::episode::find_last_episode;
use super::parse::render_outcomes;
use super::{Completer, CompletionError, EpisodeRecord, Objective};
use crate::matrix::OutcomeSet;
use crate::seed::hash_unit;

/// Answers prompts with the ground-truth objective, flipping each answer
/// with probability `noise`.
///
/// The query is recovered as the last episode rendered in the prompt. Flips
/// are a deterministic function of `(seed, prompt)`, so a given prompt always
/// receives the same answer, as a temperature-0 model would give. Matrix
/// prompts flip each option's membership independently.
#[derive(Debug)]
pub struct MockOracle {
    objective: Objective,
    noise: f64,
    seed: u64,
    calls: AtomicUsize,
}

impl Clone for MockOracle {
    fn clone(&self) -> Self {
        Self { objective: self.objective, noise: self.noise, seed: self.seed, calls: AtomicUsize::new(self.calls()) }
    }
}

impl MockOracle {
    pub fn new(objective: Objective, noise: f64, seed: u64) -> Result<Self, CompletionError> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(CompletionError::new(format!("noise {noise} is not a probability")));
        }
        Ok(Self { objective, noise, seed, calls: AtomicUsize::new(0) })
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn flips(&self, prompt: &str, lane: u8) -> bool {
        self.noise > 0.0 && hash_unit(self.seed, prompt.as_bytes(), lane) < self.noise
    }
}

impl Completer for MockOracle {
    fn complete(&self, prompt: &str) -> Result<String, CompletionError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let record = find_last_episode(self.objective.env(), prompt)
            .map_err(|e| CompletionError::new(format!("mock oracle cannot read the prompt: {e}")))?;
        match &record {
            EpisodeRecord::Matrix { game } => {
                let truth = self.objective.outcomes(game).map_err(|e| CompletionError::new(e.to_string()))?;
                let answer = OutcomeSet::from_indices((0..4).filter(|&i| truth.contains(i) != self.flips(prompt, 1 + i as u8)));
                Ok(render_outcomes(answer))
            }
            _ => {
                let truth = self.objective.label(&record).map_err(|e| CompletionError::new(e.to_string()))?;
                let answer = truth != self.flips(prompt, 0);
                Ok(if answer { "Yes." } else { "No." }.to_string())
            }
        }
    }
}

/// Fixed prompt-to-response table.
#[derive(Debug, Default)]
pub struct MockScript {
    table: BTreeMap<String, String>,
    fallback: Option<String>,
    calls: AtomicUsize,
}

impl MockScript {
    pub fn new(table: BTreeMap<String, String>) -> Self {
        Self { table, fallback: None, calls: AtomicUsize::new(0) }
    }

    /// Response for prompts missing from the table (otherwise an error).
    pub fn with_fallback(mut self, fallback: impl Into<String>) -> Self {
        self.fallback = Some(fallback.into());
        self
    }

    pub fn insert(&mut self, prompt: impl Into<String>, response: impl Into<String>) {
        self.table.insert(prompt.into(), response.into());
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Completer for MockScript {
    fn complete(&self, prompt: &str) -> Result<String, CompletionError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.table
            .get(prompt)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| CompletionError::new("prompt not in script"))
    }
}
