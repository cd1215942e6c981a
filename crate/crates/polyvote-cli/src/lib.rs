//! Experiment runner around the `polyvote` simulator: strict flat-JSON
//! config files, deterministic sweep expansion, worker-pool execution, and
//! reproducible CSV/JSON emission. The `polyvote` binary is a thin shell
//! over this library; integration tests drive both.

pub mod runner;
pub mod spec;
