//! Shared helpers for integration tests: deterministic chain builders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use segchain::chain::{
    build_activation_block, build_reinjection_block, hash_block, replay_contracts, AccountId,
    ChainConfig, ChainId, ContractId, Operation, Segment,
};

pub fn test_chain(n: u64) -> ChainConfig {
    ChainConfig::new(ChainId::from_bytes([0xAA; 32]), n).expect("valid test config")
}

/// Deterministic mixed operation stream: transactions with varying
/// descriptions plus occasional contract updates.
pub fn mixed_ops(rng: &mut ChaCha12Rng, count: usize) -> Vec<Operation> {
    (0..count)
        .map(|_| {
            if rng.gen_bool(0.2) {
                let len = rng.gen_range(4..64usize);
                let mut state = vec![0u8; len];
                rng.fill(state.as_mut_slice());
                Operation::ContractUpdate {
                    contract_id: ContractId::from_index(rng.gen_range(0..6)),
                    new_state: state,
                }
            } else {
                let source = rng.gen_range(0..32u64);
                let destination = (source + 1 + rng.gen_range(0..31u64)) % 32;
                let len = rng.gen_range(40..160usize);
                let mut description = vec![0u8; len];
                rng.fill(description.as_mut_slice());
                Operation::Transaction {
                    source: AccountId::from_index(source),
                    destination: AccountId::from_index(destination),
                    value: 1,
                    description,
                }
            }
        })
        .collect()
}

/// Builds an honestly linked chain: `segments` segments of `n` payload
/// blocks each, every payload block holding `ops_per_block` mixed
/// operations. Contract state carries across segments the way the
/// protocol does it.
pub fn build_chain(config: &ChainConfig, segments: u64, ops_per_block: usize, seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut chain: Vec<Segment> = Vec::new();
    let mut registry = segchain::chain::ContractRegistry::new();
    let mut prev_hash = config.genesis_hash;
    let mut tick = 0u64;
    for sid in 1..=segments {
        let activation = build_activation_block(config, sid, prev_hash, tick).unwrap();
        let reinjection = build_reinjection_block(&registry, &activation, tick).unwrap();
        let mut segment = Segment::start(activation, reinjection).unwrap();
        for _ in 0..config.blocks_per_segment {
            tick += 1;
            let ops = mixed_ops(&mut rng, ops_per_block);
            segment.append_payload_block(ops, tick).unwrap();
        }
        registry = replay_contracts(&segment).unwrap();
        prev_hash = hash_block(segment.last_block().unwrap()).unwrap();
        chain.push(segment);
        tick += 1;
    }
    chain
}
