//! End-to-end protocol behavior on the simulated network: rollover
//! convergence, role-specific bootstrap, reboot handling, activation
//! authentication, and snapshot round-trips.

mod common;

use ed25519_dalek::Signer;
use proptest::prelude::*;

use common::{build_chain, test_chain};
use segchain::chain::{hash_block, ChainConfig, ChainId, Digest};
use segchain::netsim::{NetParams, Outbox, PeerId};
use segchain::protocol::{
    decode_snapshot, encode_snapshot, export_snapshot, genesis_signing_key, handle_message,
    import_snapshot, start_bootstrap, Message, NodeConfig, NodePhase, NodeRole, NodeState,
    ProtocolError,
};
use segchain::retention::{NodeStore, Provenance, RetentionMode};
use segchain::sim::{ClusterSim, SimOptions, Topology};
use segchain::workload::WorkloadConfig;

fn fast_workload(clients: u32, seed: u64) -> WorkloadConfig {
    WorkloadConfig::new(clients, 16, 40, 80, seed).unwrap()
}

fn small_sim(n: u64, topology: Topology, seed: u64) -> ClusterSim {
    let chain = test_chain(n);
    let options = SimOptions::new(chain, fast_workload(8, seed), topology);
    ClusterSim::new(options).unwrap()
}

#[test]
fn network_converges_across_rollovers() {
    let chain = test_chain(5);
    let mut options = SimOptions::new(
        chain,
        fast_workload(8, 11),
        Topology {
            num_compute: 3,
            num_cold: 1,
            num_query: 1,
        },
    );
    options.contract_update_every = Some(2);
    let mut sim = ClusterSim::new(options).unwrap();
    sim.run_rounds(17).unwrap();
    sim.settle(1000).unwrap();

    // Segment 1 opening plus rollovers at payloads 5, 10, 15.
    let reports = sim.rollover_reports();
    assert_eq!(reports.len(), 4);
    for report in reports {
        assert!(report.converged, "segment {} did not converge", report.segment_id);
        assert!(report.peer_tables_unchanged);
        assert!(report.registry_carried);
    }
    let head = sim.converged_head().expect("all nodes agree");
    assert_eq!(head.0, 4); // payloads 16,17 live in segment 4
    // Contract updates actually flowed.
    assert!(!sim.node(sim.genesis_id()).registry.is_empty());
    // Compute and query nodes hold exactly the current segment; cold and
    // genesis hold everything.
    for &id in sim.compute_ids().iter().chain(sim.query_ids()) {
        assert_eq!(sim.node(id).store.retained_segment_ids(), vec![4]);
    }
    for &id in sim.cold_ids() {
        assert_eq!(
            sim.node(id).store.retained_segment_ids(),
            vec![1, 2, 3, 4]
        );
    }
    // No node raised an alarm anywhere in the honest run.
    for id in sim.protocol_node_ids() {
        assert!(sim.node(id).stats.alarms.is_empty(), "{:?}", sim.node(id).stats.alarms);
    }
}

#[test]
fn compute_join_fetches_only_the_current_segment() {
    let mut sim = small_sim(
        5,
        Topology {
            num_compute: 1,
            num_cold: 1,
            num_query: 0,
        },
        21,
    );
    let join_tick = sim.join_tick_after_payload(7);
    let joiner = sim.schedule_join(join_tick, NodeRole::Compute);
    sim.run_rounds(10).unwrap();
    sim.settle(1000).unwrap();

    let node = sim.node(joiner);
    assert!(node.is_running());
    assert_eq!(node.store.retained_segment_ids(), vec![2]);
    assert_eq!(node.head(), sim.converged_head());
    // One segment of at most 7 small blocks plus nothing else.
    let segment_bound: u64 = sim
        .node(sim.genesis_id())
        .store
        .segment(2)
        .unwrap()
        .blocks
        .iter()
        .map(|b| b.encoded_len() as u64)
        .sum();
    assert!(node.stats.segment_bytes_downloaded <= segment_bound);
    assert_eq!(node.stats.reboots, 0);
}

#[test]
fn cold_join_synchronises_the_whole_history() {
    let mut sim = small_sim(
        5,
        Topology {
            num_compute: 1,
            num_cold: 1,
            num_query: 0,
        },
        22,
    );
    let join_tick = sim.join_tick_after_payload(7);
    let joiner = sim.schedule_join(join_tick, NodeRole::ColdStorage);
    sim.run_rounds(12).unwrap();
    sim.run_until_running(joiner, 2000).unwrap();
    sim.settle(2000).unwrap();

    let node = sim.node(joiner);
    assert!(node.is_running());
    assert_eq!(node.store.retained_segment_ids(), vec![1, 2, 3]);
    assert_eq!(node.head(), sim.converged_head());
    assert_eq!(
        node.store.measured_bytes(),
        sim.node(sim.genesis_id()).store.measured_bytes(),
        "a synced cold node stores exactly what the genesis node stores"
    );
}

#[test]
fn reboot_signal_redirects_a_mid_bootstrap_join() {
    let chain = test_chain(6);
    let mut options = SimOptions::new(
        chain,
        fast_workload(8, 23),
        Topology {
            num_compute: 1,
            num_cold: 1,
            num_query: 0,
        },
    );
    options.net = NetParams::new(2, 23);
    let mut sim = ClusterSim::new(options).unwrap();
    // The rollover to segment 2 fires at the start of round 6. Join so
    // that the head request lands on the genesis node at that exact tick:
    // the head response then races the reboot signal and the reboot wins.
    let rollover_tick = 6 * sim.round_period();
    let join_tick = rollover_tick - 2; // one link latency earlier
    let joiner = sim.schedule_join(join_tick, NodeRole::Compute);
    sim.run_rounds(8).unwrap();
    sim.settle(2000).unwrap();

    let node = sim.node(joiner);
    assert!(node.is_running());
    assert!(
        node.stats.reboots >= 1,
        "scenario must actually exercise the reboot path"
    );
    assert_eq!(node.head(), sim.converged_head());
    assert_eq!(node.store.retained_segment_ids(), vec![2]);
}

#[test]
fn rollover_is_due_at_exactly_n_payload_blocks() {
    let config = test_chain(10);
    let key = genesis_signing_key(&config.chain_id, 2);
    let node_config = NodeConfig::new(config, key.verifying_key());
    let mut genesis = NodeState::new(
        PeerId(0),
        NodeRole::Genesis,
        node_config,
        [PeerId(1)].into_iter().collect(),
    )
    .with_signing_key(key);

    // Fresh segment: two bookkeeping blocks, not due.
    segchain::protocol::initiate_rollover(&mut genesis, 0).unwrap();
    assert!(!genesis.rollover_due());

    // 9 payloads (11 total blocks): still not due.
    for tick in 1..=9 {
        segchain::protocol::produce_block(&mut genesis, tick).unwrap();
    }
    assert!(!genesis.rollover_due());
    // The 10th payload (12 total blocks) makes it due.
    segchain::protocol::produce_block(&mut genesis, 10).unwrap();
    assert!(genesis.rollover_due());
}

/// An announcement whose recorded predecessor hash disagrees with the
/// local head leaves the node RollingOver with an alarm; it must not
/// follow a chain it cannot verify.
#[test]
fn mismatched_activation_parks_the_node_rolling_over() {
    let config = test_chain(3);
    let key = genesis_signing_key(&config.chain_id, 3);
    let node_config = NodeConfig::new(config.clone(), key.verifying_key());
    let mut node = NodeState::new(
        PeerId(5),
        NodeRole::Compute,
        node_config,
        [PeerId(0)].into_iter().collect(),
    );

    // Join segment 1 honestly.
    let activation =
        segchain::chain::build_activation_block(&config, 1, config.genesis_hash, 0).unwrap();
    let signature = key
        .sign(hash_block(&activation).unwrap().as_bytes())
        .to_bytes()
        .to_vec();
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        1,
        PeerId(0),
        Message::ActivationAnnounce { block: activation, signature },
        &mut out,
    );
    assert!(node.is_running());

    // Announce segment 2 with a predecessor the node never saw.
    let bogus =
        segchain::chain::build_activation_block(&config, 2, Digest::from_bytes([9; 32]), 2).unwrap();
    let signature = key
        .sign(hash_block(&bogus).unwrap().as_bytes())
        .to_bytes()
        .to_vec();
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        3,
        PeerId(0),
        Message::ActivationAnnounce { block: bogus, signature },
        &mut out,
    );
    assert_eq!(node.phase, NodePhase::RollingOver { next_segment: 2 });
    assert_eq!(node.config.current_segment_id, 1, "the bad segment is not adopted");
    assert!(node.stats.alarms.iter().any(|a| a.contains("links to")));
}

#[test]
fn stale_reboot_signals_are_ignored() {
    let config = test_chain(3);
    let key = genesis_signing_key(&config.chain_id, 4);
    let node_config = NodeConfig::new(config, key.verifying_key());
    let mut node = NodeState::new(
        PeerId(5),
        NodeRole::Compute,
        node_config,
        [PeerId(0)].into_iter().collect(),
    );
    let mut out = Outbox::new();
    start_bootstrap(&mut node, &mut out);
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        1,
        PeerId(0),
        Message::HeadResponse {
            segment_id: 4,
            level: 2,
            head_hash: Digest::default(),
        },
        &mut out,
    );
    assert_eq!(node.phase, NodePhase::Bootstrapping { target_segment: 4 });

    // A signal at or below the current target changes nothing.
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        2,
        PeerId(0),
        Message::RebootSignal { new_segment_id: 4 },
        &mut out,
    );
    assert_eq!(node.stats.reboots, 0);
    assert_eq!(node.phase, NodePhase::Bootstrapping { target_segment: 4 });

    // A newer one restarts the sync.
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        3,
        PeerId(0),
        Message::RebootSignal { new_segment_id: 5 },
        &mut out,
    );
    assert_eq!(node.stats.reboots, 1);
    assert_eq!(node.phase, NodePhase::Bootstrapping { target_segment: 5 });
}

#[test]
fn production_drains_the_mempool_up_to_the_block_limit() {
    let config = test_chain(50);
    let key = genesis_signing_key(&config.chain_id, 1);
    let node_config = NodeConfig::new(config, key.verifying_key());
    let mut genesis = NodeState::new(
        PeerId(0),
        NodeRole::Genesis,
        node_config,
        [PeerId(1)].into_iter().collect(),
    )
    .with_signing_key(key);
    segchain::protocol::initiate_rollover(&mut genesis, 0).unwrap();

    // Empty mempool still produces (an empty payload block).
    let block = segchain::protocol::produce_block(&mut genesis, 1).unwrap();
    assert!(block.operations.is_empty());
    assert_eq!(block.header.level, 2);

    // One simulated submission round per client fills the mempool in
    // client order.
    let mut gen =
        segchain::workload::TransactionGenerator::new(fast_workload(32, 5)).unwrap();
    for op in gen.next_round() {
        let mut out = Outbox::new();
        handle_message(&mut genesis, 2, PeerId(1), Message::TxSubmit { op }, &mut out);
    }
    assert_eq!(genesis.mempool.len(), 32);

    // 40 queued, 32 per block: one full block, 8 left over.
    for op in gen.next_round().into_iter().take(8) {
        let mut out = Outbox::new();
        handle_message(&mut genesis, 3, PeerId(1), Message::TxSubmit { op }, &mut out);
    }
    assert_eq!(genesis.mempool.len(), 40);
    let block = segchain::protocol::produce_block(&mut genesis, 4).unwrap();
    assert_eq!(block.operations.len(), 32);
    assert_eq!(genesis.mempool.len(), 8);
}

/// Full 32-client rounds put the per-block payload in the expected band
/// around 32 x (framing + mean description length).
#[test]
fn full_rounds_fill_blocks_to_the_expected_size() {
    let chain = test_chain(10);
    let options = SimOptions::new(
        chain,
        WorkloadConfig::default().with_seed(77),
        Topology {
            num_compute: 1,
            num_cold: 0,
            num_query: 0,
        },
    );
    let mut sim = ClusterSim::new(options).unwrap();
    sim.run_rounds(30).unwrap();
    sim.settle(1000).unwrap();

    let genesis = sim.node(sim.genesis_id());
    let mut payload_bytes = 0u64;
    let mut payload_blocks = 0u64;
    for segment in genesis.store.fully_retained_segments() {
        for block in &segment.blocks[2..] {
            payload_bytes += block.encoded_len() as u64 - 125;
            payload_blocks += 1;
        }
    }
    let mean = payload_bytes as f64 / payload_blocks as f64;
    // 32 ops x (tag 1 + ids 16 + value 8 + length prefix 4 + mean 1050).
    let expected = 32.0 * (29.0 + 1050.0);
    assert!(
        (mean - expected).abs() / expected < 0.02,
        "mean payload {mean} strays from {expected}"
    );
}

/// Manual message-level test of the retry path: a corrupted segment from
/// the first peer makes the bootstrap fall over to the second.
#[test]
fn tampered_segment_response_triggers_peer_retry() {
    let config = test_chain(4);
    let key = genesis_signing_key(&config.chain_id, 7);
    let node_config = NodeConfig::new(config.clone(), key.verifying_key());
    let chain = build_chain(&config, 2, 2, 7);

    let sign = |segment: &segchain::chain::Segment| {
        key.sign(hash_block(&segment.blocks[0]).unwrap().as_bytes())
            .to_bytes()
            .to_vec()
    };

    let peers = [PeerId(0), PeerId(1)];
    let mut node = NodeState::new(
        PeerId(9),
        NodeRole::Compute,
        node_config,
        peers.iter().copied().collect(),
    );
    let mut out = Outbox::new();
    start_bootstrap(&mut node, &mut out);
    assert!(matches!(
        out.into_sends().as_slice(),
        [(PeerId(0), Message::HeadRequest)]
    ));

    let head = hash_block(chain[1].last_block().unwrap()).unwrap();
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        1,
        PeerId(0),
        Message::HeadResponse {
            segment_id: 2,
            level: 5,
            head_hash: head,
        },
        &mut out,
    );
    assert!(matches!(
        out.into_sends().as_slice(),
        [(PeerId(0), Message::SegmentRequest { segment_id: 2 })]
    ));

    // Peer 0 serves a corrupted copy.
    let mut corrupted = chain[1].clone();
    if let segchain::chain::Operation::Transaction { description, .. } =
        &mut corrupted.blocks[2].operations[0]
    {
        description[0] ^= 1;
    }
    let signature = sign(&chain[1]);
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        2,
        PeerId(0),
        Message::SegmentResponse {
            segment: corrupted,
            activation_signature: signature.clone(),
        },
        &mut out,
    );
    assert!(!node.stats.alarms.is_empty());
    assert!(matches!(
        out.into_sends().as_slice(),
        [(PeerId(1), Message::HeadRequest)]
    ));

    // Peer 1 serves the honest segment and the node finishes.
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        3,
        PeerId(1),
        Message::HeadResponse {
            segment_id: 2,
            level: 5,
            head_hash: head,
        },
        &mut out,
    );
    let mut out = Outbox::new();
    handle_message(
        &mut node,
        4,
        PeerId(1),
        Message::SegmentResponse {
            segment: chain[1].clone(),
            activation_signature: signature,
        },
        &mut out,
    );
    assert!(node.is_running());
    assert_eq!(node.head().unwrap().0, 2);
}

#[test]
fn bootstrap_stalls_when_every_peer_lacks_a_segment() {
    let config = test_chain(4);
    let key = genesis_signing_key(&config.chain_id, 8);
    let node_config = NodeConfig::new(config, key.verifying_key());
    let peers = [PeerId(0), PeerId(1)];
    let mut node = NodeState::new(
        PeerId(9),
        NodeRole::ColdStorage,
        node_config,
        peers.iter().copied().collect(),
    );
    let mut out = Outbox::new();
    start_bootstrap(&mut node, &mut out);
    drop(out);
    for (i, &peer) in peers.iter().enumerate() {
        let mut out = Outbox::new();
        handle_message(
            &mut node,
            i as u64 + 1,
            peer,
            Message::HeadResponse {
                segment_id: 3,
                level: 2,
                head_hash: Digest::default(),
            },
            &mut out,
        );
        let mut out = Outbox::new();
        handle_message(
            &mut node,
            i as u64 + 2,
            peer,
            Message::SegmentUnavailable { segment_id: 1 },
            &mut out,
        );
    }
    assert!(matches!(node.phase, NodePhase::Bootstrapping { .. }));
    assert!(node
        .stats
        .alarms
        .iter()
        .any(|a| a.contains("unavailable from every peer")));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Activation announcements that do not verify under the genesis key
    /// are never applied, whether signed by a forged key or corrupted in
    /// transit.
    #[test]
    fn forged_activations_are_never_applied(forged_seed in 1..u64::MAX, flip in any::<Option<(u8, u8)>>()) {
        let config = test_chain(4);
        let genesis_key = genesis_signing_key(&config.chain_id, 0);
        let node_config = NodeConfig::new(config.clone(), genesis_key.verifying_key());
        let mut node = NodeState::new(
            PeerId(5),
            NodeRole::Compute,
            node_config,
            [PeerId(0)].into_iter().collect(),
        );

        let activation = segchain::chain::build_activation_block(
            &config,
            1,
            config.genesis_hash,
            0,
        ).unwrap();
        let digest = hash_block(&activation).unwrap();
        let mut signature = match flip {
            // Honest key, corrupted signature bytes.
            Some((pos, xor)) => {
                let mut sig = genesis_key.sign(digest.as_bytes()).to_bytes().to_vec();
                sig[pos as usize % 64] ^= xor | 1;
                sig
            }
            // Forged key.
            None => {
                let forged = genesis_signing_key(&config.chain_id, forged_seed);
                forged.sign(digest.as_bytes()).to_bytes().to_vec()
            }
        };
        if signature.len() != 64 {
            signature.truncate(64);
        }

        let mut out = Outbox::new();
        handle_message(
            &mut node,
            1,
            PeerId(0),
            Message::ActivationAnnounce { block: activation.clone(), signature },
            &mut out,
        );
        prop_assert_eq!(node.head(), None);
        prop_assert_eq!(node.config.current_segment_id, 0);
        prop_assert!(!node.stats.alarms.is_empty());

        // The honest announcement still lands afterwards.
        let honest = genesis_key.sign(digest.as_bytes()).to_bytes().to_vec();
        let mut out = Outbox::new();
        handle_message(
            &mut node,
            2,
            PeerId(0),
            Message::ActivationAnnounce { block: activation, signature: honest },
            &mut out,
        );
        prop_assert_eq!(node.config.current_segment_id, 1);
        prop_assert!(node.is_running());
    }
}

#[test]
fn snapshots_round_trip_and_verify_provenance() {
    let config = test_chain(4);
    let chain = build_chain(&config, 5, 2, 31);
    let mut store = NodeStore::new(RetentionMode::SegmentedCold);
    for segment in &chain {
        for block in &segment.blocks {
            store.ingest_block(block).unwrap();
        }
    }

    let snapshot = export_snapshot(&store, 1, 5).unwrap();
    assert_eq!(
        snapshot.head_hash,
        hash_block(chain[4].last_block().unwrap()).unwrap()
    );

    // File round-trip.
    let bytes = encode_snapshot(&snapshot).unwrap();
    let decoded = decode_snapshot(&bytes).unwrap();
    assert_eq!(decoded, snapshot);

    // Trusted import reproduces the store byte for byte.
    let imported = import_snapshot(&decoded, Some(snapshot.head_hash)).unwrap();
    assert_eq!(imported.measured_bytes(), store.measured_bytes());
    assert_eq!(imported.provenance(), Provenance::TrustedImport);
    assert_eq!(imported.head(), store.head());

    // Without a trusted head the store is flagged.
    let unverified = import_snapshot(&decoded, None).unwrap();
    assert_eq!(unverified.provenance(), Provenance::UnverifiedImport);

    // A snapshot from a different (honestly built) chain fails the
    // provenance check against our trusted head.
    let other_config = ChainConfig::new(ChainId::from_bytes([0xBB; 32]), 4).unwrap();
    let other_chain = build_chain(&other_config, 5, 2, 31);
    let mut other_store = NodeStore::new(RetentionMode::SegmentedCold);
    for segment in &other_chain {
        for block in &segment.blocks {
            other_store.ingest_block(block).unwrap();
        }
    }
    let other_snapshot = export_snapshot(&other_store, 1, 5).unwrap();
    let err = import_snapshot(&other_snapshot, Some(snapshot.head_hash));
    assert!(matches!(err, Err(ProtocolError::Provenance { .. })));

    // Partial ranges export and import as internally consistent suffixes.
    let partial = export_snapshot(&store, 3, 5).unwrap();
    let imported = import_snapshot(&partial, Some(partial.head_hash)).unwrap();
    assert_eq!(imported.retained_segment_ids(), vec![3, 4, 5]);

    // Ranges the store does not retain are availability errors.
    let mut compute_store = NodeStore::new(RetentionMode::SegmentedCompute);
    for segment in &chain {
        for block in &segment.blocks {
            compute_store.ingest_block(block).unwrap();
        }
    }
    let err = export_snapshot(&compute_store, 1, 2);
    assert!(matches!(
        err,
        Err(ProtocolError::SegmentUnavailable { segment_id: 1 })
    ));
}

#[test]
fn tampered_snapshot_bytes_never_import() {
    let config = test_chain(3);
    let chain = build_chain(&config, 3, 2, 17);
    let mut store = NodeStore::new(RetentionMode::SegmentedCold);
    for segment in &chain {
        for block in &segment.blocks {
            store.ingest_block(block).unwrap();
        }
    }
    let snapshot = export_snapshot(&store, 1, 3).unwrap();
    let bytes = encode_snapshot(&snapshot).unwrap();

    let mut rng_state = 0x9E3779B97F4A7C15u64;
    let mut next = move |bound: usize| {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (rng_state >> 33) as usize % bound
    };
    for _ in 0..200 {
        // Skip the magic/version prefix: decoding garbage is not the
        // interesting failure mode here.
        let pos = 5 + next(bytes.len() - 5);
        let xor = 1 + next(255) as u8;
        let mut mutated = bytes.clone();
        mutated[pos] ^= xor;
        let outcome = decode_snapshot(&mutated)
            .and_then(|snap| import_snapshot(&snap, Some(snapshot.head_hash)));
        assert!(outcome.is_err(), "flip at byte {pos} imported cleanly");
    }
}

#[test]
fn identical_seeds_replay_identical_simulations() {
    let run = |seed: u64| {
        let mut sim = small_sim(
            4,
            Topology {
                num_compute: 2,
                num_cold: 1,
                num_query: 0,
            },
            seed,
        );
        sim.enable_trace();
        sim.run_rounds(9).unwrap();
        sim.settle(1000).unwrap();
        let trace = sim.take_trace();
        let head = sim.converged_head().unwrap();
        let samples: Vec<_> = sim
            .ledger(sim.compute_ids()[0])
            .unwrap()
            .samples()
            .to_vec();
        (trace, head, samples)
    };
    let a = run(5);
    let b = run(5);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    let c = run(6);
    assert_ne!(a.1 .2, c.1 .2, "different seeds must change the head digest");
}
