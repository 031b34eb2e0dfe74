//! Experiment runner for judge-in-the-loop reinforcement learning: a cached
//! completion client, TOML experiment configs, and the train/evaluate
//! pipeline with its CSV outputs. The games, judges and learners live in
//! `llmreward-core`.

pub mod client;
pub mod commands;
pub mod config;
pub mod results;
pub mod runner;

pub use llmreward_core as core;
