//! Compiles the guide's code snippets as doctests so `cargo test --doc`
//! keeps the book in sync with the crate. One module per chapter to make
//! failures easy to place.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/blocks_and_segments.md")]
mod blocks_and_segments {}

#[doc = include_str!("../../../book/src/retention_modes.md")]
mod retention_modes {}

#[doc = include_str!("../../../book/src/rollover_protocol.md")]
mod rollover_protocol {}

#[doc = include_str!("../../../book/src/simulation.md")]
mod simulation {}

#[doc = include_str!("../../../book/src/snapshots.md")]
mod snapshots {}

#[doc = include_str!("../../../book/src/experiments.md")]
mod experiments {}
