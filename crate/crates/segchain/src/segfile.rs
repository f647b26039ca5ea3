//! Segment files: the persisted form of one segment.
//!
//! Format, little-endian: `"SEGC" | layout version u8 | chain_id[32] |
//! segment_id u64 | block_count u32 | concatenated canonical block bytes`.
//! Reading a written file round-trips bit-exactly. The chain id and
//! segment id in the file header must match the contained blocks, so a
//! flipped header byte is caught at decode time.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::chain::codec::{decode_blocks, encode_block, LAYOUT_VERSION};
use crate::chain::{ChainError, ChainId, Segment};

pub const MAGIC: &[u8; 4] = b"SEGC";

/// Offset of the first byte after the magic/version region; tampering
/// below this point would only exercise the decoder.
pub const PAYLOAD_REGION_START: u64 = 5;

#[derive(Debug, Error)]
pub enum SegfileError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("malformed segment file: {reason}")]
    Malformed { reason: String },

    #[error(transparent)]
    Chain(#[from] ChainError),
}

fn malformed(reason: impl Into<String>) -> SegfileError {
    SegfileError::Malformed {
        reason: reason.into(),
    }
}

/// Serializes a segment into the documented file format.
pub fn encode_segment_file(segment: &Segment) -> Result<Vec<u8>, SegfileError> {
    let first = segment
        .blocks
        .first()
        .ok_or_else(|| malformed("segment has no blocks"))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(LAYOUT_VERSION);
    buf.extend_from_slice(first.header.chain_id.as_bytes());
    buf.extend_from_slice(&segment.segment_id.to_le_bytes());
    let count = u32::try_from(segment.blocks.len())
        .map_err(|_| malformed("block count exceeds u32"))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for block in &segment.blocks {
        buf.extend_from_slice(&encode_block(block)?);
    }
    Ok(buf)
}

/// Decodes a segment file, cross-checking the file header against the
/// contained blocks.
pub fn decode_segment_file(bytes: &[u8]) -> Result<Segment, SegfileError> {
    if bytes.len() < 4 + 1 + 32 + 8 + 4 {
        return Err(malformed("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed("bad magic, not a segment file"));
    }
    if bytes[4] != LAYOUT_VERSION {
        return Err(malformed("unsupported layout version"));
    }
    let chain_id = ChainId::from_bytes(bytes[5..37].try_into().unwrap());
    let segment_id = u64::from_le_bytes(bytes[37..45].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[45..49].try_into().unwrap()) as usize;
    if count == 0 {
        return Err(malformed("segment file with zero blocks"));
    }
    let (blocks, consumed) = decode_blocks(&bytes[49..], count)?;
    if 49 + consumed != bytes.len() {
        return Err(malformed("trailing bytes after blocks"));
    }
    for block in &blocks {
        if block.header.chain_id != chain_id {
            return Err(malformed(format!(
                "file header chain id {} does not match block chain id {}",
                chain_id, block.header.chain_id
            )));
        }
        if block.header.segment_id != segment_id {
            return Err(malformed(format!(
                "file header segment id {} does not match block segment id {}",
                segment_id, block.header.segment_id
            )));
        }
    }
    Ok(Segment { segment_id, blocks })
}

/// Canonical file name for a segment.
pub fn segment_file_name(segment_id: u64) -> String {
    format!("segment_{segment_id:05}.seg")
}

/// Writes `segment` into `dir` under its canonical name.
pub fn write_segment(dir: &Path, segment: &Segment) -> Result<PathBuf, SegfileError> {
    let bytes = encode_segment_file(segment)?;
    let path = dir.join(segment_file_name(segment.segment_id));
    fs::create_dir_all(dir).map_err(|source| SegfileError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    fs::write(&path, bytes).map_err(|source| SegfileError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

pub fn read_segment(path: &Path) -> Result<Segment, SegfileError> {
    let bytes = fs::read(path).map_err(|source| SegfileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_segment_file(&bytes)
}

/// Segment files under `dir`, sorted by name (and therefore by id).
pub fn list_segment_files(dir: &Path) -> Result<Vec<PathBuf>, SegfileError> {
    let entries = fs::read_dir(dir).map_err(|source| SegfileError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| SegfileError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "seg") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{
        build_activation_block, build_reinjection_block, AccountId, ChainConfig, ContractRegistry,
        Operation,
    };

    fn sample_segment() -> Segment {
        let config = ChainConfig::new(ChainId::from_bytes([3; 32]), 10).unwrap();
        let activation = build_activation_block(&config, 1, config.genesis_hash, 0).unwrap();
        let reinjection =
            build_reinjection_block(&ContractRegistry::new(), &activation, 1).unwrap();
        let mut segment = Segment::start(activation, reinjection).unwrap();
        segment
            .append_payload_block(
                vec![Operation::Transaction {
                    source: AccountId::from_index(1),
                    destination: AccountId::from_index(2),
                    value: 1,
                    description: vec![7; 100],
                }],
                2,
            )
            .unwrap();
        segment
    }

    #[test]
    fn files_round_trip_bit_exactly() {
        let segment = sample_segment();
        let dir = tempfile::tempdir().unwrap();
        let path = write_segment(dir.path(), &segment).unwrap();
        assert_eq!(path.file_name().unwrap(), "segment_00001.seg");
        let reread = read_segment(&path).unwrap();
        assert_eq!(reread, segment);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, encode_segment_file(&reread).unwrap());
    }

    #[test]
    fn file_size_is_header_plus_block_bytes() {
        let segment = sample_segment();
        let bytes = encode_segment_file(&segment).unwrap();
        let blocks: usize = segment.blocks.iter().map(|b| b.encoded_len()).sum();
        assert_eq!(bytes.len(), 4 + 1 + 32 + 8 + 4 + blocks);
    }

    #[test]
    fn header_cross_checks_catch_flips() {
        let segment = sample_segment();
        let mut bytes = encode_segment_file(&segment).unwrap();
        bytes[6] ^= 0xFF; // inside the file-header chain id
        assert!(matches!(
            decode_segment_file(&bytes),
            Err(SegfileError::Malformed { .. })
        ));
        let mut bytes = encode_segment_file(&segment).unwrap();
        bytes[37] ^= 0x01; // file-header segment id
        assert!(decode_segment_file(&bytes).is_err());
        let mut bytes = encode_segment_file(&segment).unwrap();
        bytes[45] ^= 0x01; // block count
        assert!(decode_segment_file(&bytes).is_err());
    }
}
