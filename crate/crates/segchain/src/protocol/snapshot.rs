//! Snapshot export/import: a file-transportable run of segments whose
//! hashes are fully recomputed on import.
//!
//! File format, little-endian throughout:
//!
//! `"SNAP" | layout version u8 | chain_id[32] | first_segment u64 |
//! last_segment u64 | head_hash[32] | per segment: block_count u32 |
//! concatenated canonical block bytes`
//!
//! Import verifies every block hash, every linkage, and — when the range
//! starts at segment 1 — the genesis anchor. That proves internal
//! consistency only: a snapshot from a different (but honestly built)
//! chain still verifies, so callers pass the trusted head hash they got
//! out of band; without one the resulting store is flagged as having
//! unverified provenance.

use crate::chain::codec::{decode_blocks, encode_block, LAYOUT_VERSION};
use crate::chain::{
    genesis_hash, hash_block, validate_segment, verify_linkage, ChainError, ChainId, Digest,
    Segment,
};
use crate::protocol::ProtocolError;
use crate::retention::{NodeStore, Provenance, RetentionMode};

const MAGIC: &[u8; 4] = b"SNAP";

/// A validated run of segments plus the head digest it commits to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub chain_id: ChainId,
    pub first_segment: u64,
    pub last_segment: u64,
    pub head_hash: Digest,
    pub segments: Vec<Segment>,
}

/// Exports segments `first..=last` from a store that fully retains them
/// (cold storage or genesis nodes in practice).
pub fn export_snapshot(store: &NodeStore, first: u64, last: u64) -> Result<Snapshot, ProtocolError> {
    if first < 1 || last < first {
        return Err(ProtocolError::MalformedSnapshot {
            reason: format!("invalid segment range {first}..={last}"),
        });
    }
    let mut segments = Vec::with_capacity((last - first + 1) as usize);
    for segment_id in first..=last {
        let segment = store
            .segment(segment_id)
            .ok_or(ProtocolError::SegmentUnavailable { segment_id })?;
        validate_segment(&segment)?;
        segments.push(segment);
    }
    let last_block = segments
        .last()
        .and_then(Segment::last_block)
        .expect("range is non-empty");
    Ok(Snapshot {
        chain_id: last_block.header.chain_id,
        first_segment: first,
        last_segment: last,
        head_hash: hash_block(last_block)?,
        segments,
    })
}

/// Recomputes and checks every hash in the snapshot and builds a
/// cold-retention store from it. With `trusted_head` present the snapshot
/// must end in exactly that digest; without it the store is flagged
/// [`Provenance::UnverifiedImport`].
pub fn import_snapshot(
    snapshot: &Snapshot,
    trusted_head: Option<Digest>,
) -> Result<NodeStore, ProtocolError> {
    let malformed = |reason: String| ProtocolError::MalformedSnapshot { reason };
    if snapshot.segments.is_empty() {
        return Err(malformed("snapshot contains no segments".to_string()));
    }
    let declared = (snapshot.first_segment, snapshot.last_segment);
    let actual = (
        snapshot.segments.first().unwrap().segment_id,
        snapshot.segments.last().unwrap().segment_id,
    );
    if declared != actual {
        return Err(malformed(format!(
            "declared range {declared:?} does not match contents {actual:?}"
        )));
    }

    let mut prev: Option<(u64, Digest)> = None;
    for segment in &snapshot.segments {
        validate_segment(segment)?;
        let activation = &segment.blocks[0];
        if activation.header.chain_id != snapshot.chain_id {
            return Err(malformed(format!(
                "segment {} belongs to chain {}",
                segment.segment_id, activation.header.chain_id
            )));
        }
        match prev {
            None => {
                if segment.segment_id == 1 {
                    let expected = genesis_hash(&snapshot.chain_id);
                    if activation.header.predecessor_hash != expected {
                        return Err(ProtocolError::Chain(ChainError::GenesisLinkage {
                            expected,
                            found: activation.header.predecessor_hash,
                        }));
                    }
                }
            }
            Some((prev_id, prev_hash)) => {
                verify_linkage(prev_id, prev_hash, activation)?;
            }
        }
        let last = segment.last_block().expect("validated segment is non-empty");
        prev = Some((segment.segment_id, hash_block(last)?));
    }

    let (_, computed_head) = prev.expect("at least one segment");
    if computed_head != snapshot.head_hash {
        return Err(ProtocolError::Chain(ChainError::Linkage {
            expected: snapshot.head_hash,
            found: computed_head,
        }));
    }
    if let Some(trusted) = trusted_head {
        if trusted != snapshot.head_hash {
            return Err(ProtocolError::Provenance {
                expected: trusted,
                found: snapshot.head_hash,
            });
        }
    }

    let mut store = NodeStore::new(RetentionMode::SegmentedCold);
    for segment in &snapshot.segments {
        for block in &segment.blocks {
            store.ingest_block(block)?;
        }
    }
    store.set_provenance(match trusted_head {
        Some(_) => Provenance::TrustedImport,
        None => Provenance::UnverifiedImport,
    });
    Ok(store)
}

/// Serializes a snapshot into the documented file format.
pub fn encode_snapshot(snapshot: &Snapshot) -> Result<Vec<u8>, ProtocolError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(LAYOUT_VERSION);
    buf.extend_from_slice(snapshot.chain_id.as_bytes());
    buf.extend_from_slice(&snapshot.first_segment.to_le_bytes());
    buf.extend_from_slice(&snapshot.last_segment.to_le_bytes());
    buf.extend_from_slice(snapshot.head_hash.as_bytes());
    for segment in &snapshot.segments {
        let count = u32::try_from(segment.blocks.len()).map_err(|_| {
            ProtocolError::MalformedSnapshot {
                reason: "segment block count exceeds u32".to_string(),
            }
        })?;
        buf.extend_from_slice(&count.to_le_bytes());
        for block in &segment.blocks {
            buf.extend_from_slice(&encode_block(block)?);
        }
    }
    Ok(buf)
}

/// Decodes the documented snapshot file format. Structural only; run
/// [`import_snapshot`] on the result to verify hashes.
pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot, ProtocolError> {
    let malformed = |reason: &str| ProtocolError::MalformedSnapshot {
        reason: reason.to_string(),
    };
    if bytes.len() < 4 + 1 + 32 + 8 + 8 + 32 {
        return Err(malformed("snapshot file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed("bad magic, not a snapshot file"));
    }
    if bytes[4] != LAYOUT_VERSION {
        return Err(malformed("unsupported layout version"));
    }
    let mut pos = 5;
    let chain_id = ChainId::from_bytes(bytes[pos..pos + 32].try_into().unwrap());
    pos += 32;
    let first_segment = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    pos += 8;
    let last_segment = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    pos += 8;
    let head_hash = Digest::from_bytes(bytes[pos..pos + 32].try_into().unwrap());
    pos += 32;
    if last_segment < first_segment {
        return Err(malformed("inverted segment range"));
    }
    let mut segments = Vec::new();
    for _ in first_segment..=last_segment {
        if bytes.len() - pos < 4 {
            return Err(malformed("truncated segment header"));
        }
        let count = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        let (blocks, consumed) = decode_blocks(&bytes[pos..], count)?;
        pos += consumed;
        let segment_id = blocks
            .first()
            .map(|b| b.header.segment_id)
            .ok_or_else(|| malformed("segment with zero blocks"))?;
        segments.push(Segment { segment_id, blocks });
    }
    if pos != bytes.len() {
        return Err(malformed("trailing bytes after snapshot"));
    }
    Ok(Snapshot {
        chain_id,
        first_segment,
        last_segment,
        head_hash,
        segments,
    })
}
