//! Core data types: digests, identifiers, headers, operations, blocks and
//! segments.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest as _, Sha256};

use crate::chain::codec;
use crate::chain::error::ChainError;

/// 32-byte SHA-256 digest. Equality is byte equality.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest([u8; 32]);

impl Digest {
    pub const LEN: usize = 32;

    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// SHA-256 of `data`.
    pub fn sha256(data: &[u8]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(data);
        Digest(hasher.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ChainError> {
        let bytes = hex::decode(s).map_err(|_| ChainError::BadHex {
            what: "digest",
            value: s.to_string(),
        })?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| ChainError::BadHex {
            what: "digest",
            value: s.to_string(),
        })?;
        Ok(Digest(arr))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = ChainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

/// 32-byte identifier of one consortium chain, constant across all of its
/// segments.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChainId([u8; 32]);

impl ChainId {
    pub const LEN: usize = 32;

    pub const fn from_bytes(bytes: [u8; 32]) -> Self {
        ChainId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, ChainError> {
        let bytes = hex::decode(s).map_err(|_| ChainError::BadHex {
            what: "chain id",
            value: s.to_string(),
        })?;
        let arr: [u8; 32] = bytes.try_into().map_err(|_| ChainError::BadHex {
            what: "chain id",
            value: s.to_string(),
        })?;
        Ok(ChainId(arr))
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainId({})", self.to_hex())
    }
}

/// Opaque fixed-width account identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId(pub [u8; 8]);

impl AccountId {
    pub const LEN: usize = 8;

    /// Account id from a small index, little-endian.
    pub fn from_index(index: u64) -> Self {
        AccountId(index.to_le_bytes())
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccountId({})", hex::encode(self.0))
    }
}

/// Opaque fixed-width smart-contract identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContractId(pub [u8; 8]);

impl ContractId {
    pub const LEN: usize = 8;

    pub fn from_index(index: u64) -> Self {
        ContractId(index.to_le_bytes())
    }
}

impl fmt::Debug for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContractId({})", hex::encode(self.0))
    }
}

/// Role of a block within its segment, determined by its level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockKind {
    /// Level 0: opens a segment, stores the previous segment's last-block
    /// hash in `predecessor_hash`, carries no operations.
    Activation,
    /// Level 1: carries exactly one contract snapshot re-inserting the
    /// previous segment's contract state.
    Reinjection,
    /// Level >= 2: ordinary payload block.
    Payload,
}

impl BlockKind {
    pub fn as_byte(self) -> u8 {
        match self {
            BlockKind::Activation => 0,
            BlockKind::Reinjection => 1,
            BlockKind::Payload => 2,
        }
    }

    pub fn from_byte(byte: u8) -> Option<Self> {
        match byte {
            0 => Some(BlockKind::Activation),
            1 => Some(BlockKind::Reinjection),
            2 => Some(BlockKind::Payload),
            _ => None,
        }
    }

    /// The kind a block at `level` must have.
    pub fn for_level(level: u64) -> Self {
        match level {
            0 => BlockKind::Activation,
            1 => BlockKind::Reinjection,
            _ => BlockKind::Payload,
        }
    }
}

/// Fixed-width block header; every field participates in the canonical
/// layout and therefore in the block hash.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockHeader {
    pub chain_id: ChainId,
    /// Segment this block belongs to; numbering starts at 1.
    pub segment_id: u64,
    /// Position within the segment, 0-based.
    pub level: u64,
    /// Logical simulator tick at which the block was produced.
    pub timestamp: u64,
    /// Hash of the previous block; for activation blocks, the hash of the
    /// previous segment's last block (or the genesis hash for segment 1).
    pub predecessor_hash: Digest,
    /// Digest of the canonical encoding of the block's operations.
    pub operations_hash: Digest,
    pub kind: BlockKind,
}

/// A single chain operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operation {
    Transaction {
        source: AccountId,
        destination: AccountId,
        value: u64,
        description: Vec<u8>,
    },
    ContractUpdate {
        contract_id: ContractId,
        new_state: Vec<u8>,
    },
    /// Full contract state carried by a reinjection block. Entries must be
    /// sorted by contract id with no duplicates.
    ContractSnapshot {
        entries: Vec<(ContractId, Vec<u8>)>,
    },
}

impl Operation {
    pub fn is_snapshot(&self) -> bool {
        matches!(self, Operation::ContractSnapshot { .. })
    }
}

/// Header plus ordered operations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub operations: Vec<Operation>,
}

impl Block {
    /// Length of the canonical encoding, without building it.
    pub fn encoded_len(&self) -> usize {
        codec::block_encoded_len(self)
    }
}

/// An ordered run of blocks opened by an activation block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub segment_id: u64,
    pub blocks: Vec<Block>,
}

impl Segment {
    pub fn last_block(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Number of payload blocks (levels >= 2).
    pub fn payload_len(&self) -> u64 {
        self.blocks.len().saturating_sub(2) as u64
    }
}

/// Static parameters of one chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChainConfig {
    pub chain_id: ChainId,
    /// Payload blocks per segment. Every segment additionally holds the
    /// activation and reinjection bookkeeping blocks.
    pub blocks_per_segment: u64,
    pub genesis_hash: Digest,
}

impl ChainConfig {
    pub const MIN_BLOCKS_PER_SEGMENT: u64 = 3;

    pub fn new(chain_id: ChainId, blocks_per_segment: u64) -> Result<Self, ChainError> {
        if blocks_per_segment < Self::MIN_BLOCKS_PER_SEGMENT {
            return Err(ChainError::InvalidConfig {
                reason: format!(
                    "blocks_per_segment must be >= {}, got {}",
                    Self::MIN_BLOCKS_PER_SEGMENT,
                    blocks_per_segment
                ),
            });
        }
        Ok(ChainConfig {
            chain_id,
            blocks_per_segment,
            genesis_hash: crate::chain::genesis_hash(&chain_id),
        })
    }
}
