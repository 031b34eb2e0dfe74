//! Two-player 2x2 normal-form games and the solution concepts used as
//! ground truth.
//!
//! Outcome `i` is the action pair `(i / 2, i % 2)`: row action first.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatrixError {
    #[error("payoff for outcome {0} is not finite")]
    NonFinitePayoff(usize),
    #[error("unknown solution concept `{0}`")]
    UnknownConcept(String),
    #[error("unknown game `{0}`")]
    UnknownGame(String),
}

/// `(row player, column player)` rewards.
pub type Rewards = (f64, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGame {
    pub name: String,
    pub row_actions: [String; 2],
    pub col_actions: [String; 2],
    /// `payoffs[row][col]`
    pub payoffs: [[Rewards; 2]; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutcome<'a> {
    pub index: usize,
    pub row_action: &'a str,
    pub col_action: &'a str,
    pub rewards: Rewards,
}

impl MatrixGame {
    pub fn new(
        name: impl Into<String>,
        row_actions: [&str; 2],
        col_actions: [&str; 2],
        payoffs: [[Rewards; 2]; 2],
    ) -> Result<Self, MatrixError> {
        let game = Self {
            name: name.into(),
            row_actions: row_actions.map(String::from),
            col_actions: col_actions.map(String::from),
            payoffs,
        };
        for i in 0..4 {
            let (a, b) = game.rewards(i);
            if !a.is_finite() || !b.is_finite() {
                return Err(MatrixError::NonFinitePayoff(i));
            }
        }
        Ok(game)
    }

    pub fn rewards(&self, index: usize) -> Rewards {
        self.payoffs[index / 2][index % 2]
    }

    pub fn set_rewards(&mut self, index: usize, rewards: Rewards) {
        self.payoffs[index / 2][index % 2] = rewards;
    }

    pub fn outcome(&self, index: usize) -> JointOutcome<'_> {
        JointOutcome {
            index,
            row_action: &self.row_actions[index / 2],
            col_action: &self.col_actions[index % 2],
            rewards: self.rewards(index),
        }
    }

    pub fn outcomes(&self) -> impl Iterator<Item = JointOutcome<'_>> {
        (0..4).map(|i| self.outcome(i))
    }

    /// Same actions and payoffs; the name is ignored.
    pub fn same_payoffs(&self, other: &MatrixGame) -> bool {
        self.row_actions == other.row_actions && self.col_actions == other.col_actions && self.payoffs == other.payoffs
    }

    pub fn prisoners_dilemma() -> Self {
        Self::new(
            "prisoners-dilemma",
            ["Cooperate", "Defect"],
            ["Cooperate", "Defect"],
            [[(3.0, 3.0), (0.0, 5.0)], [(5.0, 0.0), (1.0, 1.0)]],
        )
        .expect("finite payoffs")
    }

    pub fn chicken() -> Self {
        Self::new(
            "chicken",
            ["Swerve", "Straight"],
            ["Swerve", "Straight"],
            [[(3.0, 3.0), (1.0, 4.0)], [(4.0, 1.0), (0.0, 0.0)]],
        )
        .expect("finite payoffs")
    }

    pub fn battle_of_the_sexes() -> Self {
        Self::new(
            "battle-of-the-sexes",
            ["Football", "Opera"],
            ["Football", "Opera"],
            [[(2.0, 1.0), (0.0, 0.0)], [(0.0, 0.0), (1.0, 2.0)]],
        )
        .expect("finite payoffs")
    }

    pub fn stag_hunt() -> Self {
        Self::new(
            "stag-hunt",
            ["Stag", "Hare"],
            ["Stag", "Hare"],
            [[(4.0, 4.0), (0.0, 3.0)], [(3.0, 0.0), (2.0, 2.0)]],
        )
        .expect("finite payoffs")
    }
}

impl FromStr for MatrixGame {
    type Err = MatrixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        canonical_games()
            .into_iter()
            .find(|g| g.name == s)
            .ok_or_else(|| MatrixError::UnknownGame(s.into()))
    }
}

/// Checks the textbook ordering each canonical game is defined by.
/// Symmetric games use R = reward for mutual cooperation, T = temptation,
/// S = sucker, P = punishment, all read from the row player's payoffs.
pub fn has_canonical_structure(game: &MatrixGame) -> bool {
    let r = game.rewards(0).0;
    let s = game.rewards(1).0;
    let t = game.rewards(2).0;
    let p = game.rewards(3).0;
    let symmetric = (0..4).all(|i| {
        let mirror = (i % 2) * 2 + i / 2;
        game.rewards(i).0 == game.rewards(mirror).1
    });
    match game.name.as_str() {
        "prisoners-dilemma" => symmetric && t > r && r > p && p > s && 2.0 * r > t + s,
        "stag-hunt" => symmetric && r > t && t > p && p > s,
        "chicken" => symmetric && t > r && r > s && s > p,
        "battle-of-the-sexes" => {
            let coordination = [game.rewards(0), game.rewards(3)];
            let mismatch = [game.rewards(1), game.rewards(2)];
            coordination
                .iter()
                .all(|c| mismatch.iter().all(|m| c.0 > m.0 && c.1 > m.1))
        }
        _ => false,
    }
}

/// Battle of the Sexes, Stag Hunt, Chicken and Prisoner's Dilemma.
pub fn canonical_games() -> Vec<MatrixGame> {
    let games = alloc::vec![
        MatrixGame::battle_of_the_sexes(),
        MatrixGame::stag_hunt(),
        MatrixGame::chicken(),
        MatrixGame::prisoners_dilemma(),
    ];
    debug_assert!(games.iter().all(has_canonical_structure));
    games
}

/// A game with integer payoffs drawn uniformly from `0..=max`.
pub fn random_game<R: Rng + ?Sized>(rng: &mut R, max: u8) -> MatrixGame {
    let mut draw = || (rng.random_range(0..=max) as f64, rng.random_range(0..=max) as f64);
    let payoffs = [[draw(), draw()], [draw(), draw()]];
    MatrixGame::new("random", ["Up", "Down"], ["Left", "Right"], payoffs).expect("finite payoffs")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SolutionConcept {
    TotalWelfare,
    Equality,
    RawlsianFairness,
    ParetoOptimal,
}

impl SolutionConcept {
    pub const ALL: [SolutionConcept; 4] = [
        SolutionConcept::TotalWelfare,
        SolutionConcept::Equality,
        SolutionConcept::RawlsianFairness,
        SolutionConcept::ParetoOptimal,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            SolutionConcept::TotalWelfare => "total welfare",
            SolutionConcept::Equality => "equality of rewards",
            SolutionConcept::RawlsianFairness => "Rawlsian fairness",
            SolutionConcept::ParetoOptimal => "Pareto-optimality",
        }
    }
}

impl fmt::Display for SolutionConcept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolutionConcept::TotalWelfare => "total-welfare",
            SolutionConcept::Equality => "equality",
            SolutionConcept::RawlsianFairness => "rawlsian-fairness",
            SolutionConcept::ParetoOptimal => "pareto-optimal",
        })
    }
}

impl FromStr for SolutionConcept {
    type Err = MatrixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| MatrixError::UnknownConcept(s.into()))
    }
}

/// A subset of the four joint outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutcomeSet(u8);

impl OutcomeSet {
    pub const EMPTY: OutcomeSet = OutcomeSet(0);
    pub const ALL: OutcomeSet = OutcomeSet(0b1111);

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = Self::EMPTY;
        for i in indices {
            set.insert(i);
        }
        set
    }

    pub fn insert(&mut self, index: usize) {
        assert!(index < 4, "outcome index {index} out of range");
        self.0 |= 1 << index;
    }

    pub fn contains(self, index: usize) -> bool {
        index < 4 && self.0 & (1 << index) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: OutcomeSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..4).filter(move |&i| self.contains(i))
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

fn argmax_set(game: &MatrixGame, key: impl Fn(Rewards) -> f64) -> OutcomeSet {
    let best = (0..4).map(|i| key(game.rewards(i))).fold(f64::NEG_INFINITY, f64::max);
    OutcomeSet::from_indices((0..4).filter(|&i| key(game.rewards(i)) == best))
}

/// `a` weakly improves on `b` for both players and strictly for one.
pub fn dominates(a: Rewards, b: Rewards) -> bool {
    a.0 >= b.0 && a.1 >= b.1 && (a.0 > b.0 || a.1 > b.1)
}

pub fn satisfying_outcomes(game: &MatrixGame, concept: SolutionConcept) -> OutcomeSet {
    match concept {
        SolutionConcept::TotalWelfare => argmax_set(game, |(a, b)| a + b),
        SolutionConcept::Equality => OutcomeSet::from_indices((0..4).filter(|&i| {
            let (a, b) = game.rewards(i);
            a == b
        })),
        SolutionConcept::RawlsianFairness => argmax_set(game, |(a, b)| a.min(b)),
        SolutionConcept::ParetoOptimal => OutcomeSet::from_indices(
            (0..4).filter(|&i| !(0..4).any(|j| j != i && dominates(game.rewards(j), game.rewards(i)))),
        ),
    }
}

/// Randomly re-associates the four reward pairs with the action pairs.
/// `permutation[i]` is the original outcome whose rewards now sit at `i`.
pub fn scramble_with_permutation<R: Rng + ?Sized>(game: &MatrixGame, rng: &mut R) -> (MatrixGame, [usize; 4]) {
    let mut permutation = [0, 1, 2, 3];
    permutation.shuffle(rng);
    let mut scrambled = game.clone();
    for (i, &from) in permutation.iter().enumerate() {
        scrambled.set_rewards(i, game.rewards(from));
    }
    (scrambled, permutation)
}

pub fn scramble<R: Rng + ?Sized>(game: &MatrixGame, rng: &mut R) -> MatrixGame {
    scramble_with_permutation(game, rng).0
}

/// 1 when the prediction is nonempty and contains no incorrect outcome.
pub fn score_label_set(predicted: OutcomeSet, truth: OutcomeSet) -> bool {
    !predicted.is_empty() && predicted.is_subset(truth)
}

/// Letter used for outcome `index` in multiple-choice renderings.
pub fn option_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}
