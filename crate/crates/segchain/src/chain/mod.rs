//! Canonical chain model: hash-linked blocks grouped into segments.
//!
//! A segment opens with an activation block that stores the previous
//! segment's last-block hash (the genesis hash for segment 1), follows
//! with a reinjection block carrying the contract state snapshot, and then
//! holds payload blocks. Hashes are SHA-256 over the frozen canonical
//! layout in [`codec`].

mod build;
pub mod codec;
mod error;
mod state;
mod types;
mod validate;

pub use build::{build_activation_block, build_payload_block, build_reinjection_block};
pub use codec::{decode_block, encode_block};
pub use error::ChainError;
pub use state::{replay_contracts, ContractRegistry};
pub use types::{
    AccountId, Block, BlockHeader, BlockKind, ChainConfig, ChainId, ContractId, Digest, Operation,
    Segment,
};
pub use validate::{check_block, validate_segment, verify_full_chain, verify_linkage};

const GENESIS_TAG: &[u8] = b"GENESIS";

/// SHA-256 of the canonical serialization of `block`.
pub fn hash_block(block: &Block) -> Result<Digest, ChainError> {
    Ok(Digest::sha256(&encode_block(block)?))
}

/// The chain's genesis digest: SHA-256 of the chain id prefixed by the
/// ASCII tag `GENESIS`. Segment 1's activation block links to this value.
pub fn genesis_hash(chain_id: &ChainId) -> Digest {
    let mut data = Vec::with_capacity(GENESIS_TAG.len() + ChainId::LEN);
    data.extend_from_slice(GENESIS_TAG);
    data.extend_from_slice(chain_id.as_bytes());
    Digest::sha256(&data)
}
