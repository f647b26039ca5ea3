//! Per-node protocol: block production by the genesis node, the
//! segment-rollover procedure, role-specific bootstrap, reboot signaling,
//! and snapshot export/import.
//!
//! The genesis node is the sole block producer and the only signer of
//! activation blocks (consortium single-sequencer model). Every other node
//! follows: payload blocks arrive by gossip, segment transitions arrive as
//! signed activation announcements, and joining nodes synchronise either
//! the current segment (compute, query) or the whole history (cold
//! storage).

mod node;
mod snapshot;

pub use node::{
    handle_message, initiate_rollover, produce_block, start_bootstrap, NodeState, NodeStats,
};
pub use snapshot::{decode_snapshot, encode_snapshot, export_snapshot, import_snapshot, Snapshot};

use std::collections::BTreeSet;

use ed25519_dalek::{SigningKey, VerifyingKey};
use thiserror::Error;

use crate::chain::{Block, ChainConfig, ChainError, ChainId, Digest, Operation, Segment};
use crate::netsim::{PeerId, SimMessage};
use crate::retention::StoreError;

/// Default mempool drain per produced block, sized so one block absorbs a
/// full injection round of the maximum client count.
pub const DEFAULT_MAX_OPS_PER_BLOCK: usize = 32;

/// What a node is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeRole {
    /// Unique bootstrap point: produces blocks, signs and announces
    /// activations, retains all segments.
    Genesis,
    /// Retains every segment and serves history.
    ColdStorage,
    /// Storage-limited participant retaining only the current segment.
    Compute,
    /// Read-only participant answering head and segment queries; retains
    /// like a compute node and submits nothing.
    Query,
}

impl NodeRole {
    pub fn label(&self) -> &'static str {
        match self {
            NodeRole::Genesis => "genesis",
            NodeRole::ColdStorage => "cold",
            NodeRole::Compute => "compute",
            NodeRole::Query => "query",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "genesis" => Some(NodeRole::Genesis),
            "cold" => Some(NodeRole::ColdStorage),
            "compute" => Some(NodeRole::Compute),
            "query" => Some(NodeRole::Query),
            _ => None,
        }
    }
}

/// Lifecycle phase of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodePhase {
    /// Synchronising; `target_segment` is the lowest segment id the node
    /// will settle for (0 until a head response or reboot signal pins it).
    Bootstrapping { target_segment: u64 },
    Running,
    /// Validation and state are down while the segment transition
    /// completes; the peer-to-peer side stays up.
    RollingOver { next_segment: u64 },
}

/// Per-node protocol configuration. `current_segment_id` mirrors the
/// node's configuration file and is incremented on every rollover.
#[derive(Clone, Debug)]
pub struct NodeConfig {
    pub chain: ChainConfig,
    pub genesis_public_key: VerifyingKey,
    pub max_ops_per_block: usize,
    pub current_segment_id: u64,
}

impl NodeConfig {
    pub fn new(chain: ChainConfig, genesis_public_key: VerifyingKey) -> Self {
        NodeConfig {
            chain,
            genesis_public_key,
            max_ops_per_block: DEFAULT_MAX_OPS_PER_BLOCK,
            current_segment_id: 0,
        }
    }
}

/// Everything that travels between nodes.
#[derive(Clone, Debug)]
pub enum Message {
    TxSubmit {
        op: Operation,
    },
    BlockGossip {
        block: Block,
    },
    /// A signed segment-opening block from the genesis node.
    ActivationAnnounce {
        block: Block,
        signature: Vec<u8>,
    },
    /// Instructs mid-bootstrap nodes to restart their sync against the
    /// new segment.
    RebootSignal {
        new_segment_id: u64,
    },
    HeadRequest,
    HeadResponse {
        segment_id: u64,
        level: u64,
        head_hash: Digest,
    },
    SegmentRequest {
        segment_id: u64,
    },
    /// A fully retained segment plus the genesis signature over its
    /// activation block, so joiners can verify the trust anchor.
    SegmentResponse {
        segment: Segment,
        activation_signature: Vec<u8>,
    },
    /// Negative reply to a segment request the peer cannot serve.
    SegmentUnavailable {
        segment_id: u64,
    },
}

impl SimMessage for Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::TxSubmit { .. } => "TxSubmit",
            Message::BlockGossip { .. } => "BlockGossip",
            Message::ActivationAnnounce { .. } => "ActivationAnnounce",
            Message::RebootSignal { .. } => "RebootSignal",
            Message::HeadRequest => "HeadRequest",
            Message::HeadResponse { .. } => "HeadResponse",
            Message::SegmentRequest { .. } => "SegmentRequest",
            Message::SegmentResponse { .. } => "SegmentResponse",
            Message::SegmentUnavailable { .. } => "SegmentUnavailable",
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("operation requires the {expected:?} role, node has {actual:?}")]
    Role {
        expected: NodeRole,
        actual: NodeRole,
    },

    #[error("operation requires the Running phase, node is {phase:?}")]
    NotRunning { phase: NodePhase },

    #[error("rollover not due: segment {segment} holds {payloads}/{required} payload blocks")]
    RolloverNotDue {
        segment: u64,
        payloads: u64,
        required: u64,
    },

    #[error("activation signature rejected")]
    BadSignature,

    #[error("segment {segment_id} is not fully retained")]
    SegmentUnavailable { segment_id: u64 },

    #[error("snapshot head {found} does not match the trusted head {expected}")]
    Provenance { expected: Digest, found: Digest },

    #[error("malformed snapshot: {reason}")]
    MalformedSnapshot { reason: String },

    #[error(transparent)]
    Chain(#[from] ChainError),

    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Deterministic genesis signing key for a chain and run seed.
pub fn genesis_signing_key(chain_id: &ChainId, seed: u64) -> SigningKey {
    let mut data = Vec::with_capacity(16 + ChainId::LEN + 8);
    data.extend_from_slice(b"segchain-genesis");
    data.extend_from_slice(chain_id.as_bytes());
    data.extend_from_slice(&seed.to_le_bytes());
    SigningKey::from_bytes(Digest::sha256(&data).as_bytes())
}

/// Builds the peer table for a fully connected consortium: everyone but
/// `own_id`.
pub fn full_mesh_peers(all: &[PeerId], own_id: PeerId) -> BTreeSet<PeerId> {
    all.iter().copied().filter(|&id| id != own_id).collect()
}
