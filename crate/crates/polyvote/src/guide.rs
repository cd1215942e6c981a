//! The user guide, as compiled documentation.
//!
//! Each module below embeds one chapter of the book under `book/` verbatim,
//! so every Rust snippet in the guide is compiled and run by `cargo test`.
//! Read it rendered (`mdbook serve book/`) or right here in rustdoc.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model_chapter {}

#[doc = include_str!("../../../book/src/engine.md")]
pub mod engine_chapter {}

#[doc = include_str!("../../../book/src/adversaries.md")]
pub mod adversaries {}

#[doc = include_str!("../../../book/src/confirmation.md")]
pub mod confirmation {}

#[doc = include_str!("../../../book/src/transactions.md")]
pub mod transactions {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines_chapter {}

#[doc = include_str!("../../../book/src/analytics.md")]
pub mod analytics_chapter {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
