//! Deterministic simulator of a proof-of-work design that decouples the three
//! jobs a blockchain block normally bundles: proposing the next unit of
//! history, carrying transactions, and voting on which proposal wins.
//!
//! Mining is modelled round-by-round. Every round each side (honest and
//! adversary) draws Poisson block counts for one proposer tree, `m` voter
//! trees, and a transaction-block process; a pluggable adversary then decides
//! what to withhold, what to release, and how to nudge honest tie-breaking.
//! Two confirmation rules are implemented: a depth rule over all `m` voter
//! chains, and a faster list rule built from per-proposer vote confidence
//! intervals. Everything is seeded and replays bit-identically.
//!
//! Module map:
//!
//! * [`model`] — configuration, block types, per-round mining counts,
//!   sortition, parameter derivation.
//! * [`engine`] — world state, the round loop, honest block construction.
//! * [`adversary`] — strategy trait plus the packaged strategies
//!   (`passive`, `private_nakamoto`, `balancing`, `censorship`).
//! * [`confirm`] — vote tallies, confidence bounds, leader selection, both
//!   confirmation rules, ledger assembly.
//! * [`txflow`] — transaction queues, redundancy accounting, latency stats.
//! * [`baselines`] — single-chain longest-chain and heaviest-subtree
//!   comparison protocols.
//! * [`analytics`] — closed-form throughput/latency curves and the depth
//!   formula, independent of the simulator.
//!
//! The `guide` module mirrors the book chapters so their examples compile as
//! doc-tests.

pub mod adversary;
pub mod analytics;
pub mod baselines;
pub mod confirm;
pub mod engine;
pub mod guide;
pub mod model;
pub mod txflow;
