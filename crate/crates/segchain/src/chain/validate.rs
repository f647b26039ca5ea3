//! Structural validation of blocks, segments, and inter-segment linkage.

use crate::chain::codec::operations_digest;
use crate::chain::error::ChainError;
use crate::chain::types::{Block, BlockKind, ChainConfig, Operation, Segment};
use crate::chain::hash_block;

/// Checks every block-local invariant, naming the violated field.
pub fn check_block(block: &Block) -> Result<(), ChainError> {
    let header = &block.header;
    if header.segment_id < 1 {
        return Err(ChainError::InvalidBlock {
            field: "segment_id",
            reason: "segment numbering starts at 1".to_string(),
        });
    }
    let expected_kind = BlockKind::for_level(header.level);
    if header.kind != expected_kind {
        return Err(ChainError::InvalidBlock {
            field: "kind",
            reason: format!(
                "level {} requires {:?}, found {:?}",
                header.level, expected_kind, header.kind
            ),
        });
    }
    match header.kind {
        BlockKind::Activation => {
            if !block.operations.is_empty() {
                return Err(ChainError::InvalidBlock {
                    field: "operations",
                    reason: "activation blocks carry no operations".to_string(),
                });
            }
        }
        BlockKind::Reinjection => {
            if block.operations.len() != 1 || !block.operations[0].is_snapshot() {
                return Err(ChainError::InvalidBlock {
                    field: "operations",
                    reason: "reinjection blocks carry exactly one contract snapshot".to_string(),
                });
            }
        }
        BlockKind::Payload => {
            if block.operations.iter().any(Operation::is_snapshot) {
                return Err(ChainError::InvalidBlock {
                    field: "operations",
                    reason: "contract snapshots are not allowed in payload blocks".to_string(),
                });
            }
        }
    }
    if let Some(Operation::ContractSnapshot { entries }) = block
        .operations
        .iter()
        .find(|op| op.is_snapshot())
    {
        for pair in entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(ChainError::InvalidBlock {
                    field: "operations",
                    reason: "snapshot entries not sorted or contain duplicates".to_string(),
                });
            }
        }
    }
    let digest = operations_digest(&block.operations)?;
    if digest != header.operations_hash {
        return Err(ChainError::InvalidBlock {
            field: "operations_hash",
            reason: format!(
                "header commits to {}, operations hash to {}",
                header.operations_hash, digest
            ),
        });
    }
    Ok(())
}

fn violation(segment_id: u64, level: u64, reason: impl Into<String>) -> ChainError {
    ChainError::SegmentViolation {
        segment_id,
        level,
        reason: reason.into(),
    }
}

/// Validates one segment: bookkeeping-block placement, consecutive levels,
/// consistent ids, per-block invariants, and the internal hash chain.
/// Returns the first violation with its block level.
pub fn validate_segment(segment: &Segment) -> Result<(), ChainError> {
    let sid = segment.segment_id;
    let first = segment
        .blocks
        .first()
        .ok_or_else(|| violation(sid, 0, "segment has no blocks"))?;
    if first.header.kind != BlockKind::Activation {
        return Err(violation(sid, 0, "segment must open with an activation block"));
    }
    if first.header.segment_id != sid {
        return Err(violation(
            sid,
            0,
            format!("activation block claims segment {}", first.header.segment_id),
        ));
    }
    let chain_id = first.header.chain_id;
    let mut prev_hash = None;
    for (i, block) in segment.blocks.iter().enumerate() {
        let level = i as u64;
        if block.header.level != level {
            return Err(violation(
                sid,
                level,
                format!("expected level {}, found {}", level, block.header.level),
            ));
        }
        if block.header.segment_id != sid {
            return Err(violation(
                sid,
                level,
                format!("block claims segment {}", block.header.segment_id),
            ));
        }
        if block.header.chain_id != chain_id {
            return Err(violation(sid, level, "chain id differs within segment"));
        }
        check_block(block).map_err(|e| violation(sid, level, e.to_string()))?;
        if let Some(expected) = prev_hash {
            if block.header.predecessor_hash != expected {
                return Err(violation(
                    sid,
                    level,
                    format!(
                        "predecessor hash mismatch: expected {}, found {}",
                        expected, block.header.predecessor_hash
                    ),
                ));
            }
        }
        prev_hash = Some(hash_block(block).map_err(|e| violation(sid, level, e.to_string()))?);
    }
    Ok(())
}

/// Checks that `next_activation` opens the segment that follows
/// `prev_segment_id`: ids must be consecutive and the activation must store
/// the hash of the previous segment's last block.
pub fn verify_linkage(
    prev_segment_id: u64,
    prev_last_block_hash: crate::chain::types::Digest,
    next_activation: &Block,
) -> Result<(), ChainError> {
    if next_activation.header.kind != BlockKind::Activation {
        return Err(ChainError::InvalidBlock {
            field: "kind",
            reason: "linkage target is not an activation block".to_string(),
        });
    }
    if next_activation.header.segment_id != prev_segment_id + 1 {
        return Err(ChainError::SegmentOrder {
            prev: prev_segment_id,
            next: next_activation.header.segment_id,
        });
    }
    if next_activation.header.predecessor_hash != prev_last_block_hash {
        return Err(ChainError::Linkage {
            expected: prev_last_block_hash,
            found: next_activation.header.predecessor_hash,
        });
    }
    Ok(())
}

/// Verifies a run of segments ordered by id: each segment validates, each
/// adjacent pair links, and — when segment 1 is present — its activation
/// links to the chain's genesis hash. A run starting after segment 1
/// verifies internal consistency only; provenance of its first activation
/// needs an external trusted hash.
pub fn verify_full_chain(segments: &[Segment], config: &ChainConfig) -> Result<(), ChainError> {
    let mut prev: Option<(u64, crate::chain::types::Digest)> = None;
    for segment in segments {
        let sid = segment.segment_id;
        validate_segment(segment)?;
        let first = &segment.blocks[0];
        if first.header.chain_id != config.chain_id {
            return Err(violation(
                sid,
                0,
                format!("chain id {} does not match config", first.header.chain_id),
            ));
        }
        match prev {
            None => {
                if sid == 1 && first.header.predecessor_hash != config.genesis_hash {
                    return Err(ChainError::GenesisLinkage {
                        expected: config.genesis_hash,
                        found: first.header.predecessor_hash,
                    });
                }
            }
            Some((prev_id, prev_hash)) => {
                verify_linkage(prev_id, prev_hash, first).map_err(|e| match e {
                    ChainError::Linkage { .. } | ChainError::SegmentOrder { .. } => e,
                    other => violation(sid, 0, other.to_string()),
                })?;
            }
        }
        let last = segment.blocks.last().expect("validated segment is non-empty");
        prev = Some((sid, hash_block(last)?));
    }
    Ok(())
}
