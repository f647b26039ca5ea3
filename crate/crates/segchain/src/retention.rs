//! Storage-retention policies and byte-accurate accounting.
//!
//! A [`NodeStore`] ingests the blocks a node accepts and applies its
//! retention mode's pruning rule. Byte accounting uses canonical
//! serialization lengths, decomposed per block into header, operation, and
//! contract-state-delta components, so results are platform-independent.
//!
//! Pruning rules:
//!
//! * `Archive` and `SegmentedCold` never prune.
//! * `Full` keeps every header and operation region but drops the
//!   contract-state deltas of blocks older than the latest checkpoint.
//! * `Rolling` keeps only blocks newer than the latest checkpoint. When a
//!   checkpoint forms (block level is a positive multiple of the
//!   interval), the checkpoint block's header is moved to an accumulating
//!   header list and everything at or before the checkpoint is dropped, so
//!   the retained window restarts empty and the store grows by exactly one
//!   header per checkpoint.
//! * `SegmentedCompute` discards the entire previous segment the moment a
//!   new segment's activation block arrives.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::chain::codec::{operations_region_len, FIXED_HEADER_LEN};
use crate::chain::{hash_block, Block, BlockHeader, ChainError, Digest, Operation, Segment};

/// How a node keeps its past data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetentionMode {
    /// Keep everything.
    Archive,
    /// Keep headers and operations forever; drop state deltas older than
    /// the latest checkpoint.
    Full { checkpoint_interval: u64 },
    /// Keep only data newer than the latest checkpoint, plus one
    /// accumulated header per checkpoint.
    Rolling { checkpoint_interval: u64 },
    /// Keep only the current segment.
    SegmentedCompute,
    /// Keep every segment of the segmented chain.
    SegmentedCold,
}

impl RetentionMode {
    /// Stable label used in reports and config files.
    pub fn label(&self) -> &'static str {
        match self {
            RetentionMode::Archive => "archive",
            RetentionMode::Full { .. } => "full",
            RetentionMode::Rolling { .. } => "rolling",
            RetentionMode::SegmentedCompute => "segmented-compute",
            RetentionMode::SegmentedCold => "segmented-cold",
        }
    }

    /// Parses a label, attaching `checkpoint_interval` where the mode
    /// needs one.
    pub fn from_label(label: &str, checkpoint_interval: u64) -> Option<Self> {
        match label {
            "archive" => Some(RetentionMode::Archive),
            "full" => Some(RetentionMode::Full { checkpoint_interval }),
            "rolling" => Some(RetentionMode::Rolling { checkpoint_interval }),
            "segmented-compute" => Some(RetentionMode::SegmentedCompute),
            "segmented-cold" => Some(RetentionMode::SegmentedCold),
            _ => None,
        }
    }
}

/// Byte decomposition of one block: `header_bytes + operations_bytes`
/// equals the canonical serialization length; `state_delta_bytes` counts
/// the encoded contract-state change the block induces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockFootprint {
    pub header_bytes: u64,
    pub operations_bytes: u64,
    pub state_delta_bytes: u64,
}

impl BlockFootprint {
    pub fn of(block: &Block) -> Self {
        let state_delta: usize = block
            .operations
            .iter()
            .map(|op| match op {
                // Encoded (contract_id, new_state) pair: 8-byte id plus
                // length-prefixed state.
                Operation::ContractUpdate { new_state, .. } => 8 + 4 + new_state.len(),
                Operation::Transaction { .. } | Operation::ContractSnapshot { .. } => 0,
            })
            .sum();
        BlockFootprint {
            header_bytes: FIXED_HEADER_LEN as u64,
            operations_bytes: operations_region_len(&block.operations) as u64,
            state_delta_bytes: state_delta as u64,
        }
    }

    pub fn total(&self) -> u64 {
        self.header_bytes + self.operations_bytes + self.state_delta_bytes
    }
}

/// Where a store's contents came from; imports without a trusted head are
/// flagged so callers can treat their provenance as unverified.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Local,
    TrustedImport,
    UnverifiedImport,
}

#[derive(Clone, Debug)]
struct StoredBlock {
    block: Block,
    footprint: BlockFootprint,
    keep_header: bool,
    keep_operations: bool,
    keep_state: bool,
}

impl StoredBlock {
    fn retained_bytes(&self) -> u64 {
        let mut bytes = 0;
        if self.keep_header {
            bytes += self.footprint.header_bytes;
        }
        if self.keep_operations {
            bytes += self.footprint.operations_bytes;
        }
        if self.keep_state {
            bytes += self.footprint.state_delta_bytes;
        }
        bytes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Head {
    segment_id: u64,
    level: u64,
    hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("block (segment {segment} level {level}) does not extend store head {head:?}")]
    NotExtending {
        head: Option<(u64, u64)>,
        segment: u64,
        level: u64,
    },

    #[error("sample at {given} total blocks not greater than previous sample at {last}")]
    NonMonotoneSample { last: u64, given: u64 },

    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Per-node block storage with mode-driven pruning and exact byte
/// accounting.
#[derive(Clone, Debug)]
pub struct NodeStore {
    mode: RetentionMode,
    segments: BTreeMap<u64, BTreeMap<u64, StoredBlock>>,
    checkpoint_headers: Vec<BlockHeader>,
    provenance: Provenance,
    bytes: u64,
    blocks_ingested: u64,
    head: Option<Head>,
}

impl NodeStore {
    pub fn new(mode: RetentionMode) -> Self {
        NodeStore {
            mode,
            segments: BTreeMap::new(),
            checkpoint_headers: Vec::new(),
            provenance: Provenance::Local,
            bytes: 0,
            blocks_ingested: 0,
            head: None,
        }
    }

    pub fn mode(&self) -> RetentionMode {
        self.mode
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn set_provenance(&mut self, provenance: Provenance) {
        self.provenance = provenance;
    }

    /// Chain position of the newest ingested block, independent of whether
    /// its bytes are still retained.
    pub fn head(&self) -> Option<(u64, u64, Digest)> {
        self.head.map(|h| (h.segment_id, h.level, h.hash))
    }

    pub fn current_segment_id(&self) -> Option<u64> {
        self.head.map(|h| h.segment_id)
    }

    pub fn blocks_ingested(&self) -> u64 {
        self.blocks_ingested
    }

    pub fn checkpoint_header_count(&self) -> usize {
        self.checkpoint_headers.len()
    }

    /// Records `block`, which must extend the current head (or open the
    /// next segment with a linking activation block), then prunes per the
    /// retention mode.
    pub fn ingest_block(&mut self, block: &Block) -> Result<(), StoreError> {
        let hash = hash_block(block)?;
        let header = &block.header;
        let not_extending = || StoreError::NotExtending {
            head: self.head.map(|h| (h.segment_id, h.level)),
            segment: header.segment_id,
            level: header.level,
        };
        match self.head {
            None => {
                if header.level != 0 {
                    return Err(not_extending());
                }
            }
            Some(h) => {
                let extends_segment = header.segment_id == h.segment_id
                    && header.level == h.level + 1
                    && header.predecessor_hash == h.hash;
                let opens_next_segment = header.level == 0
                    && header.segment_id == h.segment_id + 1
                    && header.predecessor_hash == h.hash;
                if opens_next_segment {
                    if self.mode == RetentionMode::SegmentedCompute {
                        self.drop_segments_before(header.segment_id);
                    }
                } else if !extends_segment {
                    return Err(not_extending());
                }
            }
        }

        let stored = StoredBlock {
            footprint: BlockFootprint::of(block),
            block: block.clone(),
            keep_header: true,
            keep_operations: true,
            keep_state: true,
        };
        self.bytes += stored.retained_bytes();
        self.segments
            .entry(header.segment_id)
            .or_default()
            .insert(header.level, stored);
        self.blocks_ingested += 1;
        self.head = Some(Head {
            segment_id: header.segment_id,
            level: header.level,
            hash,
        });

        let at_checkpoint = |interval: u64| header.level > 0 && header.level.is_multiple_of(interval);
        match self.mode {
            RetentionMode::Full { checkpoint_interval } if at_checkpoint(checkpoint_interval) => {
                self.drop_state_before(header.segment_id, header.level);
            }
            RetentionMode::Rolling { checkpoint_interval } if at_checkpoint(checkpoint_interval) => {
                self.roll_checkpoint(header.segment_id, header.level);
            }
            _ => {}
        }
        Ok(())
    }

    fn drop_segments_before(&mut self, segment_id: u64) {
        let kept = self.segments.split_off(&segment_id);
        let dropped = std::mem::replace(&mut self.segments, kept);
        for (_, levels) in dropped {
            for (_, stored) in levels {
                self.bytes -= stored.retained_bytes();
            }
        }
    }

    fn drop_state_before(&mut self, segment_id: u64, level: u64) {
        for (&sid, levels) in self.segments.iter_mut() {
            for (&lvl, stored) in levels.iter_mut() {
                if (sid, lvl) < (segment_id, level) && stored.keep_state {
                    stored.keep_state = false;
                    self.bytes -= stored.footprint.state_delta_bytes;
                }
            }
        }
    }

    fn roll_checkpoint(&mut self, segment_id: u64, level: u64) {
        let checkpoint_header = self
            .segments
            .get(&segment_id)
            .and_then(|levels| levels.get(&level))
            .map(|stored| stored.block.header.clone())
            .expect("checkpoint block was just inserted");
        self.checkpoint_headers.push(checkpoint_header);
        self.bytes += FIXED_HEADER_LEN as u64;

        // Drop everything at or before the checkpoint; the retained
        // window restarts empty.
        let mut empty_segments = Vec::new();
        for (&sid, levels) in self.segments.iter_mut() {
            if sid < segment_id {
                for (_, stored) in std::mem::take(levels) {
                    self.bytes -= stored.retained_bytes();
                }
            } else if sid == segment_id {
                let kept = levels.split_off(&(level + 1));
                for (_, stored) in std::mem::replace(levels, kept) {
                    self.bytes -= stored.retained_bytes();
                }
            }
            if levels.is_empty() {
                empty_segments.push(sid);
            }
        }
        for sid in empty_segments {
            self.segments.remove(&sid);
        }
    }

    /// Exact total of retained component bytes plus accumulated checkpoint
    /// headers. Maintained incrementally; [`Self::recompute_bytes`] audits
    /// it from scratch.
    pub fn measured_bytes(&self) -> u64 {
        self.bytes
    }

    /// Recomputes the byte total by walking every retained component.
    pub fn recompute_bytes(&self) -> u64 {
        let blocks: u64 = self
            .segments
            .values()
            .flat_map(|levels| levels.values())
            .map(StoredBlock::retained_bytes)
            .sum();
        blocks + (self.checkpoint_headers.len() * FIXED_HEADER_LEN) as u64
    }

    pub fn retained_segment_ids(&self) -> Vec<u64> {
        self.segments.keys().copied().collect()
    }

    /// Number of blocks still physically present for `segment_id`.
    pub fn retained_block_count(&self, segment_id: u64) -> usize {
        self.segments.get(&segment_id).map_or(0, BTreeMap::len)
    }

    fn is_fully_retained(levels: &BTreeMap<u64, StoredBlock>) -> bool {
        !levels.is_empty()
            && levels.keys().copied().eq(0..levels.len() as u64)
            && levels
                .values()
                .all(|s| s.keep_header && s.keep_operations && s.keep_state)
    }

    /// Reassembles `segment_id` if every block and component is retained.
    pub fn segment(&self, segment_id: u64) -> Option<Segment> {
        let levels = self.segments.get(&segment_id)?;
        if !Self::is_fully_retained(levels) {
            return None;
        }
        Some(Segment {
            segment_id,
            blocks: levels.values().map(|s| s.block.clone()).collect(),
        })
    }

    /// The segment the head block belongs to, if fully retained.
    pub fn current_segment(&self) -> Option<Segment> {
        self.segment(self.head?.segment_id)
    }

    /// All segments whose every block and component is retained, ordered
    /// by id.
    pub fn fully_retained_segments(&self) -> Vec<Segment> {
        self.segments
            .keys()
            .filter_map(|&sid| self.segment(sid))
            .collect()
    }
}

/// One point on a storage curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StorageSample {
    pub total_blocks: u64,
    pub bytes: u64,
}

/// Ordered storage samples for one node over a run.
#[derive(Clone, Debug, Default)]
pub struct StorageLedger {
    samples: Vec<StorageSample>,
}

impl StorageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `(total_blocks, measured_bytes(store))`; `total_blocks`
    /// must exceed the previous sample's.
    pub fn record_sample(&mut self, store: &NodeStore, total_blocks: u64) -> Result<(), StoreError> {
        if let Some(last) = self.samples.last() {
            if total_blocks <= last.total_blocks {
                return Err(StoreError::NonMonotoneSample {
                    last: last.total_blocks,
                    given: total_blocks,
                });
            }
        }
        self.samples.push(StorageSample {
            total_blocks,
            bytes: store.measured_bytes(),
        });
        Ok(())
    }

    pub fn samples(&self) -> &[StorageSample] {
        &self.samples
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{
        build_activation_block, build_reinjection_block, AccountId, ChainConfig,
        ChainId, ContractId, ContractRegistry, Operation,
    };

    fn config() -> ChainConfig {
        ChainConfig::new(ChainId::from_bytes([0xCC; 32]), 10).unwrap()
    }

    fn tx(i: u64) -> Operation {
        Operation::Transaction {
            source: AccountId::from_index(i),
            destination: AccountId::from_index(i + 1),
            value: 1,
            description: vec![0x41; 32],
        }
    }

    fn update(i: u64, len: usize) -> Operation {
        Operation::ContractUpdate {
            contract_id: ContractId::from_index(i),
            new_state: vec![0x42; len],
        }
    }

    /// Single never-rolling segment with `payloads` payload blocks; block
    /// at level `l` carries one transaction, plus a contract update on
    /// every fourth level.
    fn unsegmented_chain(payloads: usize) -> Segment {
        let config = config();
        let activation = build_activation_block(&config, 1, config.genesis_hash, 0).unwrap();
        let reinjection =
            build_reinjection_block(&ContractRegistry::new(), &activation, 1).unwrap();
        let mut segment = Segment::start(activation, reinjection).unwrap();
        for i in 0..payloads {
            let mut ops = vec![tx(i as u64)];
            if i % 4 == 0 {
                ops.push(update(i as u64 % 3, 64));
            }
            segment.append_payload_block(ops, 2 + i as u64).unwrap();
        }
        segment
    }

    fn ingest_all(store: &mut NodeStore, segment: &Segment) {
        for block in &segment.blocks {
            store.ingest_block(block).unwrap();
        }
    }

    #[test]
    fn archive_retains_every_component() {
        let segment = unsegmented_chain(98);
        let mut store = NodeStore::new(RetentionMode::Archive);
        ingest_all(&mut store, &segment);
        assert_eq!(store.blocks_ingested(), 100);
        assert_eq!(store.retained_block_count(1), 100);
        let expected: u64 = segment
            .blocks
            .iter()
            .map(|b| BlockFootprint::of(b).total())
            .sum();
        assert_eq!(store.measured_bytes(), expected);
        assert_eq!(store.recompute_bytes(), expected);
        assert!(store.segment(1).is_some());
    }

    #[test]
    fn footprint_splits_the_canonical_length() {
        let segment = unsegmented_chain(6);
        for block in &segment.blocks {
            let fp = BlockFootprint::of(block);
            assert_eq!(
                fp.header_bytes + fp.operations_bytes,
                block.encoded_len() as u64
            );
        }
    }

    #[test]
    fn rolling_keeps_window_after_latest_checkpoint_plus_headers() {
        // Interval 10, chain through level 35: checkpoints formed at
        // levels 10, 20, 30. The retained window is levels 31..=35 and
        // three headers have accumulated.
        let segment = unsegmented_chain(34); // levels 0..=35
        let mut store = NodeStore::new(RetentionMode::Rolling {
            checkpoint_interval: 10,
        });
        ingest_all(&mut store, &segment);
        assert_eq!(store.checkpoint_header_count(), 3);
        assert_eq!(store.retained_block_count(1), 5);
        let window: u64 = segment.blocks[31..=35]
            .iter()
            .map(|b| BlockFootprint::of(b).total())
            .sum();
        assert_eq!(
            store.measured_bytes(),
            window + 3 * FIXED_HEADER_LEN as u64
        );
        // Exactly at a checkpoint the window is empty: headers only.
        let segment = unsegmented_chain(29); // levels 0..=30
        let mut store = NodeStore::new(RetentionMode::Rolling {
            checkpoint_interval: 10,
        });
        ingest_all(&mut store, &segment);
        assert_eq!(store.retained_block_count(1), 0);
        assert_eq!(store.measured_bytes(), 3 * FIXED_HEADER_LEN as u64);
        // Partial retention means no reassembled segment.
        assert!(store.segment(1).is_none());
        assert!(store.fully_retained_segments().is_empty());
    }

    #[test]
    fn full_drops_old_state_but_keeps_headers_and_operations() {
        let segment = unsegmented_chain(23); // levels 0..=24, checkpoints at 10 and 20
        let mut archive = NodeStore::new(RetentionMode::Archive);
        let mut full = NodeStore::new(RetentionMode::Full {
            checkpoint_interval: 10,
        });
        ingest_all(&mut archive, &segment);
        ingest_all(&mut full, &segment);
        assert_eq!(full.retained_block_count(1), 25);
        let dropped_state: u64 = segment
            .blocks
            .iter()
            .filter(|b| b.header.level < 20)
            .map(|b| BlockFootprint::of(b).state_delta_bytes)
            .sum();
        assert!(dropped_state > 0, "test stream must carry state deltas");
        assert_eq!(full.measured_bytes(), archive.measured_bytes() - dropped_state);
        assert_eq!(full.recompute_bytes(), full.measured_bytes());
    }

    #[test]
    fn store_rejects_non_extending_blocks() {
        let segment = unsegmented_chain(4);
        let mut store = NodeStore::new(RetentionMode::Archive);
        store.ingest_block(&segment.blocks[0]).unwrap();
        let err = store.ingest_block(&segment.blocks[2]);
        assert!(matches!(err, Err(StoreError::NotExtending { .. })));
        // A fresh store only accepts a segment-opening block.
        let mut store = NodeStore::new(RetentionMode::Archive);
        let err = store.ingest_block(&segment.blocks[1]);
        assert!(matches!(err, Err(StoreError::NotExtending { .. })));
    }

    #[test]
    fn ledger_is_strictly_monotone_in_total_blocks() {
        let mut ledger = StorageLedger::new();
        let store = NodeStore::new(RetentionMode::Archive);
        ledger.record_sample(&store, 0).unwrap();
        assert_eq!(
            ledger.samples(),
            &[StorageSample {
                total_blocks: 0,
                bytes: 0
            }]
        );
        let err = ledger.record_sample(&store, 0);
        assert!(matches!(err, Err(StoreError::NonMonotoneSample { .. })));
        ledger.record_sample(&store, 5).unwrap();
    }
}
