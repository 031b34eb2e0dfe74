//! Reward judges for reinforcement learning.
//!
//! Agents are trained against a pluggable *judge*: a prompted language model
//! that answers Yes/No about an episode, an exact ground-truth objective, or a
//! small supervised classifier trained on the same handful of examples.
//!
//! The crate is `no_std` (with `alloc`). Everything that touches the network,
//! the filesystem or the clock lives in the companion `llmreward` crate.
//!
//! * [`ultimatum`], [`matrix`], [`negotiation`]: environments and their
//!   ground-truth objectives.
//! * [`nn`]: dense/recurrent layers, losses, optimizers and checkpoints.
//! * [`judge`]: episode rendering, prompts, response parsing and backends.
//! * [`rl`]: DQN for the single-step games, REINFORCE for negotiation.
//! * [`eval`]: labeling accuracy, agent accuracy and the analyses built on them.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod eval;
pub mod judge;
pub mod math;
pub mod matrix;
pub mod negotiation;
pub mod nn;
pub mod rl;
pub mod seed;
pub mod ultimatum;
