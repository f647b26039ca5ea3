//! Time-segmented consortium blockchain.
//!
//! A chain is cut into hash-linked *segments*: each opens with an
//! activation block storing the previous segment's last-block hash and a
//! reinjection block carrying the contract-state snapshot, so
//! storage-limited nodes can keep only the current segment while the
//! chain's integrity spans its whole life.
//!
//! The crate provides:
//!
//! * [`chain`] — the canonical data model: blocks, segments, hashing,
//!   linkage, and validation.
//! * [`retention`] — storage policies (archive, full, rolling, segmented)
//!   with byte-exact accounting.
//! * [`protocol`] — role-differentiated nodes, the segment-rollover state
//!   machine, bootstrap, and snapshot export/import.
//! * [`netsim`] — a deterministic discrete-event message network.
//! * [`workload`] — the seeded transaction generator.
//! * [`sim`] — the scenario driver wiring it all together.
//! * [`experiment`] — retention comparisons reported as CSV, plus
//!   persisted segment files ([`segfile`]).
//!
//! The narrative guide lives in the repository's `book/` directory; its
//! code snippets compile and run as doctests of this crate.

pub mod chain;
pub mod experiment;
pub mod netsim;
pub mod protocol;
pub mod retention;
pub mod segfile;
pub mod sim;
pub mod workload;

#[cfg(doctest)]
mod book;
