//! Block and segment constructors. Everything built here satisfies the
//! validators by construction.

use crate::chain::codec::operations_digest;
use crate::chain::error::ChainError;
use crate::chain::state::ContractRegistry;
use crate::chain::types::{
    Block, BlockHeader, BlockKind, ChainConfig, ChainId, Digest, Operation, Segment,
};
use crate::chain::{hash_block, validate};

/// Builds the level-0 activation block of `segment_id`, storing the hash
/// of the previous segment's last block. Segment 1 must link to the
/// chain's genesis hash.
pub fn build_activation_block(
    config: &ChainConfig,
    segment_id: u64,
    predecessor_segment_hash: Digest,
    timestamp: u64,
) -> Result<Block, ChainError> {
    if segment_id < 1 {
        return Err(ChainError::InvalidBlock {
            field: "segment_id",
            reason: "segment numbering starts at 1".to_string(),
        });
    }
    if segment_id == 1 && predecessor_segment_hash != config.genesis_hash {
        return Err(ChainError::GenesisLinkage {
            expected: config.genesis_hash,
            found: predecessor_segment_hash,
        });
    }
    Ok(Block {
        header: BlockHeader {
            chain_id: config.chain_id,
            segment_id,
            level: 0,
            timestamp,
            predecessor_hash: predecessor_segment_hash,
            operations_hash: operations_digest(&[])?,
            kind: BlockKind::Activation,
        },
        operations: Vec::new(),
    })
}

/// Builds the level-1 reinjection block carrying `prev_registry` as a
/// contract snapshot in canonical order, chained onto `activation`.
pub fn build_reinjection_block(
    prev_registry: &ContractRegistry,
    activation: &Block,
    timestamp: u64,
) -> Result<Block, ChainError> {
    if activation.header.kind != BlockKind::Activation {
        return Err(ChainError::InvalidBlock {
            field: "kind",
            reason: "reinjection must chain onto an activation block".to_string(),
        });
    }
    let operations = vec![Operation::ContractSnapshot {
        entries: prev_registry.snapshot_entries(),
    }];
    Ok(Block {
        header: BlockHeader {
            chain_id: activation.header.chain_id,
            segment_id: activation.header.segment_id,
            level: 1,
            timestamp,
            predecessor_hash: hash_block(activation)?,
            operations_hash: operations_digest(&operations)?,
            kind: BlockKind::Reinjection,
        },
        operations,
    })
}

/// Builds a payload block from explicit chain position. `level` must be
/// at least 2 and `operations` must not contain contract snapshots.
pub fn build_payload_block(
    chain_id: ChainId,
    segment_id: u64,
    level: u64,
    predecessor_hash: Digest,
    operations: Vec<Operation>,
    timestamp: u64,
) -> Result<Block, ChainError> {
    if level < 2 {
        return Err(ChainError::InvalidBlock {
            field: "level",
            reason: "payload blocks start at level 2".to_string(),
        });
    }
    if operations.iter().any(Operation::is_snapshot) {
        return Err(ChainError::InvalidBlock {
            field: "operations",
            reason: "contract snapshots are not allowed in payload blocks".to_string(),
        });
    }
    Ok(Block {
        header: BlockHeader {
            chain_id,
            segment_id,
            level,
            timestamp,
            predecessor_hash,
            operations_hash: operations_digest(&operations)?,
            kind: BlockKind::Payload,
        },
        operations,
    })
}

impl Segment {
    /// Opens a segment from its two bookkeeping blocks, validating their
    /// placement and linkage.
    pub fn start(activation: Block, reinjection: Block) -> Result<Segment, ChainError> {
        let segment = Segment {
            segment_id: activation.header.segment_id,
            blocks: vec![activation, reinjection],
        };
        validate::validate_segment(&segment)?;
        Ok(segment)
    }

    /// Reassembles a segment from already-linked blocks, validating it.
    pub fn from_blocks(blocks: Vec<Block>) -> Result<Segment, ChainError> {
        let segment_id = blocks
            .first()
            .map(|b| b.header.segment_id)
            .ok_or(ChainError::SegmentViolation {
                segment_id: 0,
                level: 0,
                reason: "segment has no blocks".to_string(),
            })?;
        let segment = Segment { segment_id, blocks };
        validate::validate_segment(&segment)?;
        Ok(segment)
    }

    /// Appends a payload block holding `operations` and returns a copy of
    /// it. The segment must already hold its two bookkeeping blocks.
    pub fn append_payload_block(
        &mut self,
        operations: Vec<Operation>,
        timestamp: u64,
    ) -> Result<Block, ChainError> {
        let last = self.blocks.last().ok_or(ChainError::SegmentViolation {
            segment_id: self.segment_id,
            level: 0,
            reason: "segment has no blocks".to_string(),
        })?;
        if self.blocks.len() < 2 {
            return Err(ChainError::SegmentViolation {
                segment_id: self.segment_id,
                level: last.header.level,
                reason: "payload blocks require the two bookkeeping blocks first".to_string(),
            });
        }
        let block = build_payload_block(
            last.header.chain_id,
            self.segment_id,
            last.header.level + 1,
            hash_block(last)?,
            operations,
            timestamp,
        )?;
        self.blocks.push(block.clone());
        debug_assert_eq!(
            self.blocks[self.blocks.len() - 1].header.predecessor_hash,
            hash_block(&self.blocks[self.blocks.len() - 2]).unwrap(),
        );
        Ok(block)
    }
}
