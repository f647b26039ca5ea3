//! Canonical fixed-width binary layout for blocks and operations.
//!
//! All integers are little-endian. The block layout is:
//!
//! | field            | width |
//! |------------------|-------|
//! | chain_id         | 32    |
//! | segment_id       | u64   |
//! | level            | u64   |
//! | timestamp        | u64   |
//! | predecessor_hash | 32    |
//! | operations_hash  | 32    |
//! | kind             | u8    |
//! | op_count         | u32   |
//! | operations       | var   |
//!
//! Each operation starts with a tag byte (0 = transaction, 1 = contract
//! update, 2 = contract snapshot) followed by its body. Variable-length
//! byte strings carry a u32 length prefix; account and contract ids are
//! fixed 8-byte values. Fixed widths plus length prefixes make the
//! encoding injective over valid blocks.
//!
//! This layout is frozen. Files embedding blocks prepend
//! [`LAYOUT_VERSION`] so future revisions can coexist on disk.

use crate::chain::error::ChainError;
use crate::chain::types::{
    AccountId, Block, BlockHeader, BlockKind, ChainId, ContractId, Digest, Operation,
};
use crate::chain::validate::check_block;

/// Version byte prepended to on-disk formats that embed canonical blocks.
pub const LAYOUT_VERSION: u8 = 0x01;

/// Fixed header fields, `chain_id` through `kind`.
pub const FIXED_HEADER_LEN: usize = 32 + 8 + 8 + 8 + 32 + 32 + 1;

/// Width of the operation-count prefix that follows the header.
pub const OP_COUNT_LEN: usize = 4;

/// Bytes every block carries regardless of its operations.
pub const BLOCK_OVERHEAD_LEN: usize = FIXED_HEADER_LEN + OP_COUNT_LEN;

/// Byte offset of the timestamp within the canonical layout.
pub const TIMESTAMP_OFFSET: usize = 32 + 8 + 8;

pub const TAG_TRANSACTION: u8 = 0;
pub const TAG_CONTRACT_UPDATE: u8 = 1;
pub const TAG_CONTRACT_SNAPSHOT: u8 = 2;

/// Encoded length of one operation (tag byte included).
pub fn operation_encoded_len(op: &Operation) -> usize {
    1 + match op {
        Operation::Transaction { description, .. } => 8 + 8 + 8 + 4 + description.len(),
        Operation::ContractUpdate { new_state, .. } => 8 + 4 + new_state.len(),
        Operation::ContractSnapshot { entries } => {
            4 + entries
                .iter()
                .map(|(_, state)| 8 + 4 + state.len())
                .sum::<usize>()
        }
    }
}

/// Encoded length of a block's operation region (count prefix included).
pub fn operations_region_len(operations: &[Operation]) -> usize {
    OP_COUNT_LEN + operations.iter().map(operation_encoded_len).sum::<usize>()
}

/// Total canonical length of a block.
pub fn block_encoded_len(block: &Block) -> usize {
    FIXED_HEADER_LEN + operations_region_len(&block.operations)
}

fn put_u32(buf: &mut Vec<u8>, value: u32) {
    buf.extend_from_slice(&value.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, value: u64) {
    buf.extend_from_slice(&value.to_le_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) -> Result<(), ChainError> {
    let len = u32::try_from(bytes.len()).map_err(|_| ChainError::InvalidBlock {
        field: "byte string",
        reason: "length exceeds u32".to_string(),
    })?;
    put_u32(buf, len);
    buf.extend_from_slice(bytes);
    Ok(())
}

/// Appends the canonical encoding of one operation. Snapshot entries must
/// already be sorted by contract id with no duplicates.
pub fn encode_operation(op: &Operation, buf: &mut Vec<u8>) -> Result<(), ChainError> {
    match op {
        Operation::Transaction {
            source,
            destination,
            value,
            description,
        } => {
            buf.push(TAG_TRANSACTION);
            buf.extend_from_slice(&source.0);
            buf.extend_from_slice(&destination.0);
            put_u64(buf, *value);
            put_bytes(buf, description)?;
        }
        Operation::ContractUpdate {
            contract_id,
            new_state,
        } => {
            buf.push(TAG_CONTRACT_UPDATE);
            buf.extend_from_slice(&contract_id.0);
            put_bytes(buf, new_state)?;
        }
        Operation::ContractSnapshot { entries } => {
            for pair in entries.windows(2) {
                if pair[0].0 >= pair[1].0 {
                    return Err(ChainError::InvalidBlock {
                        field: "operations",
                        reason: "snapshot entries not sorted or contain duplicates".to_string(),
                    });
                }
            }
            buf.push(TAG_CONTRACT_SNAPSHOT);
            let count = u32::try_from(entries.len()).map_err(|_| ChainError::InvalidBlock {
                field: "operations",
                reason: "snapshot entry count exceeds u32".to_string(),
            })?;
            put_u32(buf, count);
            for (contract_id, state) in entries {
                buf.extend_from_slice(&contract_id.0);
                put_bytes(buf, state)?;
            }
        }
    }
    Ok(())
}

/// Digest of the concatenated canonical operation encodings (flat, not a
/// Merkle tree).
pub fn operations_digest(operations: &[Operation]) -> Result<Digest, ChainError> {
    let mut buf = Vec::with_capacity(operations.iter().map(operation_encoded_len).sum());
    for op in operations {
        encode_operation(op, &mut buf)?;
    }
    Ok(Digest::sha256(&buf))
}

/// Canonical serialization of a valid block.
///
/// Validates the block's structural invariants first and names the
/// violated field on failure. Deterministic and injective over valid
/// blocks.
pub fn encode_block(block: &Block) -> Result<Vec<u8>, ChainError> {
    check_block(block)?;
    let mut buf = Vec::with_capacity(block_encoded_len(block));
    let header = &block.header;
    buf.extend_from_slice(header.chain_id.as_bytes());
    put_u64(&mut buf, header.segment_id);
    put_u64(&mut buf, header.level);
    put_u64(&mut buf, header.timestamp);
    buf.extend_from_slice(header.predecessor_hash.as_bytes());
    buf.extend_from_slice(header.operations_hash.as_bytes());
    buf.push(header.kind.as_byte());
    let count = u32::try_from(block.operations.len()).map_err(|_| ChainError::InvalidBlock {
        field: "operations",
        reason: "operation count exceeds u32".to_string(),
    })?;
    put_u32(&mut buf, count);
    for op in &block.operations {
        encode_operation(op, &mut buf)?;
    }
    debug_assert_eq!(buf.len(), block_encoded_len(block));
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn fail(&self, reason: &'static str) -> ChainError {
        ChainError::Decode {
            offset: self.pos,
            reason,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ChainError> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail("unexpected end of input"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ChainError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ChainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ChainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn array32(&mut self) -> Result<[u8; 32], ChainError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn array8(&mut self) -> Result<[u8; 8], ChainError> {
        Ok(self.take(8)?.try_into().unwrap())
    }

    fn var_bytes(&mut self) -> Result<Vec<u8>, ChainError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode_operation(r: &mut Reader<'_>) -> Result<Operation, ChainError> {
    let tag = r.u8()?;
    match tag {
        TAG_TRANSACTION => Ok(Operation::Transaction {
            source: AccountId(r.array8()?),
            destination: AccountId(r.array8()?),
            value: r.u64()?,
            description: r.var_bytes()?,
        }),
        TAG_CONTRACT_UPDATE => Ok(Operation::ContractUpdate {
            contract_id: ContractId(r.array8()?),
            new_state: r.var_bytes()?,
        }),
        TAG_CONTRACT_SNAPSHOT => {
            let count = r.u32()? as usize;
            let mut entries = Vec::with_capacity(count.min(1024));
            for _ in 0..count {
                let id = ContractId(r.array8()?);
                let state = r.var_bytes()?;
                entries.push((id, state));
            }
            Ok(Operation::ContractSnapshot { entries })
        }
        _ => Err(r.fail("unknown operation tag")),
    }
}

/// Decodes a canonical block, requiring the input to be consumed exactly.
///
/// Only structural well-formedness is checked here; semantic invariants
/// (operation-hash match, kind/level coherence) are the verifiers' job so
/// that tampered content decodes and then fails validation with a precise
/// location.
pub fn decode_block(bytes: &[u8]) -> Result<Block, ChainError> {
    let mut r = Reader::new(bytes);
    let block = decode_block_from(&mut r)?;
    if !r.done() {
        return Err(ChainError::Decode {
            offset: r.pos,
            reason: "trailing bytes after block",
        });
    }
    Ok(block)
}

fn decode_block_from(r: &mut Reader<'_>) -> Result<Block, ChainError> {
    let chain_id = ChainId::from_bytes(r.array32()?);
    let segment_id = r.u64()?;
    let level = r.u64()?;
    let timestamp = r.u64()?;
    let predecessor_hash = Digest::from_bytes(r.array32()?);
    let operations_hash = Digest::from_bytes(r.array32()?);
    let kind_byte = r.u8()?;
    let kind = BlockKind::from_byte(kind_byte).ok_or_else(|| r.fail("unknown block kind"))?;
    let count = r.u32()? as usize;
    let mut operations = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        operations.push(decode_operation(r)?);
    }
    Ok(Block {
        header: BlockHeader {
            chain_id,
            segment_id,
            level,
            timestamp,
            predecessor_hash,
            operations_hash,
            kind,
        },
        operations,
    })
}

/// Decodes `count` consecutive blocks from `bytes`, returning the blocks
/// and the number of bytes consumed.
pub fn decode_blocks(bytes: &[u8], count: usize) -> Result<(Vec<Block>, usize), ChainError> {
    let mut r = Reader::new(bytes);
    let mut blocks = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        blocks.push(decode_block_from(&mut r)?);
    }
    let consumed = r.pos;
    Ok((blocks, consumed))
}
