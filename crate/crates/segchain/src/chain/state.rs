//! Smart-contract state: the registry carried across segments and the
//! replay interpreter that rebuilds it from a segment's blocks.

use std::collections::BTreeMap;

use crate::chain::error::ChainError;
use crate::chain::types::{ContractId, Operation, Segment};

/// Key-value contract state, keyed by contract id. Iteration order is the
/// canonical snapshot order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContractRegistry {
    entries: BTreeMap<ContractId, Vec<u8>>,
}

impl ContractRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a registry from snapshot entries, rejecting unsorted or
    /// duplicated ids.
    pub fn from_snapshot_entries(entries: &[(ContractId, Vec<u8>)]) -> Result<Self, ChainError> {
        for pair in entries.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(ChainError::InvalidBlock {
                    field: "operations",
                    reason: "snapshot entries not sorted or contain duplicates".to_string(),
                });
            }
        }
        Ok(ContractRegistry {
            entries: entries.iter().cloned().collect(),
        })
    }

    pub fn get(&self, id: &ContractId) -> Option<&[u8]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    /// Last-writer-wins update.
    pub fn set(&mut self, id: ContractId, state: Vec<u8>) {
        self.entries.insert(id, state);
    }

    /// Applies the contract effect of one payload operation. Transactions
    /// carry no contract state; snapshots are only legal in reinjection
    /// blocks and are rejected here.
    pub fn apply_operation(&mut self, op: &Operation) -> Result<(), ChainError> {
        match op {
            Operation::Transaction { .. } => Ok(()),
            Operation::ContractUpdate {
                contract_id,
                new_state,
            } => {
                self.set(*contract_id, new_state.clone());
                Ok(())
            }
            Operation::ContractSnapshot { .. } => Err(ChainError::InvalidBlock {
                field: "operations",
                reason: "contract snapshots are not allowed in payload blocks".to_string(),
            }),
        }
    }

    /// Entries in canonical (sorted) snapshot order.
    pub fn snapshot_entries(&self) -> Vec<(ContractId, Vec<u8>)> {
        self.entries
            .iter()
            .map(|(id, state)| (*id, state.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ContractId, &Vec<u8>)> {
        self.entries.iter()
    }
}

/// Rebuilds the contract registry a segment ends with: decode the snapshot
/// in the reinjection block, then apply every contract update in block and
/// operation order. Pure function of the segment's contents.
pub fn replay_contracts(segment: &Segment) -> Result<ContractRegistry, ChainError> {
    let reinjection = segment.blocks.get(1).ok_or(ChainError::SegmentViolation {
        segment_id: segment.segment_id,
        level: 1,
        reason: "segment has no reinjection block".to_string(),
    })?;
    let mut registry = match reinjection.operations.as_slice() {
        [Operation::ContractSnapshot { entries }] => ContractRegistry::from_snapshot_entries(entries)?,
        _ => {
            return Err(ChainError::SegmentViolation {
                segment_id: segment.segment_id,
                level: 1,
                reason: "reinjection block must carry exactly one contract snapshot".to_string(),
            })
        }
    };
    for block in &segment.blocks[2..] {
        for op in &block.operations {
            registry.apply_operation(op).map_err(|e| ChainError::SegmentViolation {
                segment_id: segment.segment_id,
                level: block.header.level,
                reason: e.to_string(),
            })?;
        }
    }
    Ok(registry)
}
