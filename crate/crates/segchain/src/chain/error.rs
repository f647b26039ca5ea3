use thiserror::Error;

use crate::chain::types::Digest;

/// Errors raised by block construction, encoding, and chain verification.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    /// A block violates a structural invariant; `field` names the violated
    /// field.
    #[error("invalid block field `{field}`: {reason}")]
    InvalidBlock { field: &'static str, reason: String },

    /// A segment-level violation, located by segment id and block level.
    #[error("segment {segment_id} level {level}: {reason}")]
    SegmentViolation {
        segment_id: u64,
        level: u64,
        reason: String,
    },

    /// A predecessor hash does not match the expected digest.
    #[error("linkage mismatch: expected {expected}, found {found}")]
    Linkage { expected: Digest, found: Digest },

    /// Segment ids are not consecutive.
    #[error("segment ids not consecutive: {prev} followed by {next}")]
    SegmentOrder { prev: u64, next: u64 },

    /// Segment 1 must link to the chain's genesis hash.
    #[error("segment 1 activation must link to the genesis hash (expected {expected}, found {found})")]
    GenesisLinkage { expected: Digest, found: Digest },

    /// Canonical decoding failed.
    #[error("decode failed at offset {offset}: {reason}")]
    Decode { offset: usize, reason: &'static str },

    #[error("invalid chain config: {reason}")]
    InvalidConfig { reason: String },

    #[error("invalid hex for {what}: {value:?}")]
    BadHex { what: &'static str, value: String },
}
