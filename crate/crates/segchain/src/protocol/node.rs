//! Node state and the deterministic event handler driving it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier};

use crate::chain::{
    build_activation_block, build_payload_block, build_reinjection_block, hash_block,
    replay_contracts, validate_segment, Block, BlockKind, ContractRegistry, Digest, Operation,
    Segment,
};
use crate::netsim::{Outbox, PeerId, Tick};
use crate::protocol::{Message, NodeConfig, NodePhase, NodeRole, ProtocolError};
use crate::retention::{NodeStore, RetentionMode};

/// Counters and alarms a node accumulates; used by diagnostics and tests.
#[derive(Clone, Debug, Default)]
pub struct NodeStats {
    /// Canonical bytes of every segment received in a `SegmentResponse`,
    /// whether or not it was accepted.
    pub segment_bytes_downloaded: u64,
    /// Bootstrap restarts triggered by reboot signals.
    pub reboots: u32,
    /// Segment transitions applied (including produced ones on genesis).
    pub rollovers: u32,
    /// Human-readable records of rejected inputs and stuck states.
    pub alarms: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BootstrapStage {
    AwaitHead,
    AwaitSegment,
}

#[derive(Clone, Debug)]
struct BootstrapState {
    stage: BootstrapStage,
    /// Peer currently being asked; `None` once every peer failed us.
    peer: Option<PeerId>,
    /// Peers that already failed this bootstrap attempt.
    tried: BTreeSet<PeerId>,
    /// Lowest acceptable segment id, raised by reboot signals.
    min_target: u64,
    /// Network head segment learned from a head response (0 = unknown).
    target: u64,
    /// Segment currently being fetched.
    wanted: u64,
}

impl BootstrapState {
    fn new(min_target: u64) -> Self {
        BootstrapState {
            stage: BootstrapStage::AwaitHead,
            peer: None,
            tried: BTreeSet::new(),
            min_target,
            target: 0,
            wanted: 0,
        }
    }

    fn effective_target(&self) -> u64 {
        self.target.max(self.min_target)
    }
}

/// One simulated node: role, phase, configuration, store, contract
/// registry, mempool, and peer table, plus the bookkeeping the handler
/// needs (bootstrap progress, an out-of-order gossip buffer, and the
/// activation signatures it can serve to joiners).
pub struct NodeState {
    pub id: PeerId,
    pub role: NodeRole,
    pub phase: NodePhase,
    pub config: NodeConfig,
    pub store: NodeStore,
    pub registry: ContractRegistry,
    pub mempool: VecDeque<Operation>,
    pub peer_table: BTreeSet<PeerId>,
    pub stats: NodeStats,
    signing_key: Option<SigningKey>,
    activation_signatures: BTreeMap<u64, Vec<u8>>,
    bootstrap: Option<BootstrapState>,
    pending_blocks: BTreeMap<(u64, u64), Block>,
}

impl NodeState {
    /// A founding node: starts Running with an empty store, expecting the
    /// genesis node to announce segment 1.
    pub fn new(id: PeerId, role: NodeRole, config: NodeConfig, peers: BTreeSet<PeerId>) -> Self {
        let mode = match role {
            NodeRole::Genesis | NodeRole::ColdStorage => RetentionMode::SegmentedCold,
            NodeRole::Compute | NodeRole::Query => RetentionMode::SegmentedCompute,
        };
        NodeState {
            id,
            role,
            phase: NodePhase::Running,
            config,
            store: NodeStore::new(mode),
            registry: ContractRegistry::new(),
            mempool: VecDeque::new(),
            peer_table: peers,
            stats: NodeStats::default(),
            signing_key: None,
            activation_signatures: BTreeMap::new(),
            bootstrap: None,
            pending_blocks: BTreeMap::new(),
        }
    }

    /// Attaches the activation signing key; only the genesis node holds
    /// one.
    pub fn with_signing_key(mut self, key: SigningKey) -> Self {
        self.signing_key = Some(key);
        self
    }

    /// `(segment_id, level, head_hash)` of the newest accepted block.
    pub fn head(&self) -> Option<(u64, u64, Digest)> {
        self.store.head()
    }

    /// Hash the next activation block must link to: the current head, or
    /// the chain's genesis hash before any block exists.
    fn linkage_anchor(&self) -> Digest {
        self.store
            .head()
            .map(|(_, _, hash)| hash)
            .unwrap_or(self.config.chain.genesis_hash)
    }

    /// Payload blocks in the current segment.
    pub fn current_payload_count(&self) -> u64 {
        self.store
            .head()
            .map(|(_, level, _)| level.saturating_sub(1))
            .unwrap_or(0)
    }

    /// True once the current segment holds its full complement of payload
    /// blocks (`blocks_per_segment` payloads, bookkeeping excluded).
    pub fn rollover_due(&self) -> bool {
        match self.store.head() {
            Some((segment_id, level, _)) => {
                segment_id == self.config.current_segment_id
                    && level == self.config.chain.blocks_per_segment + 1
            }
            None => false,
        }
    }

    pub fn activation_signature(&self, segment_id: u64) -> Option<&[u8]> {
        self.activation_signatures
            .get(&segment_id)
            .map(Vec::as_slice)
    }

    pub fn is_running(&self) -> bool {
        self.phase == NodePhase::Running
    }

    fn alarm(&mut self, message: String) {
        self.stats.alarms.push(message);
    }

    /// One-line status for simulator diagnostics.
    pub fn describe(&self) -> String {
        let head = match self.store.head() {
            Some((segment, level, hash)) => {
                format!("seg={} lvl={} head={}", segment, level, &hash.to_hex()[..8])
            }
            None => "empty".to_string(),
        };
        let bootstrap = match &self.bootstrap {
            Some(b) => format!(
                " bootstrap={:?} wanted={} peer={:?}",
                b.stage, b.wanted, b.peer
            ),
            None => String::new(),
        };
        format!(
            "{} {:?} {}{} alarms={}",
            self.role.label(),
            self.phase,
            head,
            bootstrap,
            self.stats.alarms.len()
        )
    }

    fn verify_activation(&self, block: &Block, signature: &[u8]) -> Result<(), ProtocolError> {
        let digest = hash_block(block)?;
        let sig_bytes: [u8; 64] = signature
            .try_into()
            .map_err(|_| ProtocolError::BadSignature)?;
        let signature = Signature::from_bytes(&sig_bytes);
        self.config
            .genesis_public_key
            .verify(digest.as_bytes(), &signature)
            .map_err(|_| ProtocolError::BadSignature)
    }

    /// Applies a payload block that extends the head: store, registry,
    /// and nothing else.
    fn apply_payload(&mut self, block: &Block) -> Result<(), ProtocolError> {
        self.store.ingest_block(block)?;
        for op in &block.operations {
            self.registry.apply_operation(op)?;
        }
        Ok(())
    }

    /// Applies buffered out-of-order gossip that now extends the head and
    /// discards anything stale.
    fn drain_pending(&mut self) {
        while let Some((segment, level, _)) = self.store.head() {
            // Drop entries at or behind the head.
            let stale: Vec<(u64, u64)> = self
                .pending_blocks
                .range(..=(segment, level))
                .map(|(k, _)| *k)
                .collect();
            for key in stale {
                self.pending_blocks.remove(&key);
            }
            match self.pending_blocks.remove(&(segment, level + 1)) {
                Some(block) => {
                    if self.apply_payload(&block).is_err() {
                        self.alarm(format!(
                            "buffered block {}:{} no longer extends the head",
                            segment,
                            level + 1
                        ));
                        break;
                    }
                }
                None => break,
            }
        }
    }
}

/// Drains up to `max_ops_per_block` mempool operations into a new payload
/// block on the current segment. Genesis-only; the caller gossips the
/// returned block.
pub fn produce_block(node: &mut NodeState, now: Tick) -> Result<Block, ProtocolError> {
    if node.role != NodeRole::Genesis {
        return Err(ProtocolError::Role {
            expected: NodeRole::Genesis,
            actual: node.role,
        });
    }
    if node.phase != NodePhase::Running {
        return Err(ProtocolError::NotRunning { phase: node.phase });
    }
    let (segment_id, level, head_hash) = node.store.head().ok_or(ProtocolError::RolloverNotDue {
        segment: 0,
        payloads: 0,
        required: node.config.chain.blocks_per_segment,
    })?;
    let take = node.config.max_ops_per_block.min(node.mempool.len());
    let ops: Vec<Operation> = node.mempool.drain(..take).collect();
    let block = build_payload_block(
        node.config.chain.chain_id,
        segment_id,
        level + 1,
        head_hash,
        ops,
        now,
    )?;
    node.apply_payload(&block)?;
    Ok(block)
}

/// Genesis side of the segment transition: records the closing segment's
/// last-block hash, increments the configured segment id, builds and signs
/// the next activation block, rebuilds its own reinjection block, and
/// returns the `ActivationAnnounce` plus `RebootSignal` broadcast for the
/// peer table. Also used to open segment 1 on an empty chain.
pub fn initiate_rollover(
    node: &mut NodeState,
    now: Tick,
) -> Result<Vec<(PeerId, Message)>, ProtocolError> {
    if node.role != NodeRole::Genesis {
        return Err(ProtocolError::Role {
            expected: NodeRole::Genesis,
            actual: node.role,
        });
    }
    if node.phase != NodePhase::Running {
        return Err(ProtocolError::NotRunning { phase: node.phase });
    }
    let opening_chain = node.store.head().is_none() && node.config.current_segment_id == 0;
    if !opening_chain && !node.rollover_due() {
        return Err(ProtocolError::RolloverNotDue {
            segment: node.config.current_segment_id,
            payloads: node.current_payload_count(),
            required: node.config.chain.blocks_per_segment,
        });
    }
    let signing_key = node
        .signing_key
        .clone()
        .ok_or(ProtocolError::BadSignature)?;

    let recorded_hash = node.linkage_anchor();
    let next_segment = node.config.current_segment_id + 1;
    node.phase = NodePhase::RollingOver {
        next_segment,
    };

    let activation = build_activation_block(&node.config.chain, next_segment, recorded_hash, now)?;
    let signature = signing_key.sign(hash_block(&activation)?.as_bytes());
    let signature = signature.to_bytes().to_vec();

    node.config.current_segment_id = next_segment;
    node.store.ingest_block(&activation)?;
    node.activation_signatures
        .insert(next_segment, signature.clone());
    let reinjection = build_reinjection_block(&node.registry, &activation, now)?;
    node.store.ingest_block(&reinjection)?;
    node.phase = NodePhase::Running;
    node.stats.rollovers += 1;

    let mut out = Vec::new();
    for &peer in &node.peer_table {
        out.push((
            peer,
            Message::ActivationAnnounce {
                block: activation.clone(),
                signature: signature.clone(),
            },
        ));
        out.push((
            peer,
            Message::RebootSignal {
                new_segment_id: next_segment,
            },
        ));
    }
    Ok(out)
}

/// Begins synchronisation for a joining node: compute and query nodes will
/// fetch only the current segment, cold storage nodes the whole history.
/// Sends the first `HeadRequest`; the rest of the exchange runs through
/// [`handle_message`].
pub fn start_bootstrap(node: &mut NodeState, out: &mut Outbox<Message>) {
    let min_target = match &node.bootstrap {
        Some(b) => b.min_target,
        None => 0,
    };
    node.phase = NodePhase::Bootstrapping {
        target_segment: min_target,
    };
    let mut bootstrap = BootstrapState::new(min_target);
    node.pending_blocks.clear();
    match node.peer_table.iter().next().copied() {
        Some(peer) => {
            bootstrap.peer = Some(peer);
            out.send(peer, Message::HeadRequest);
        }
        None => {
            node.alarm("bootstrap has no peers to ask".to_string());
        }
    }
    node.bootstrap = Some(bootstrap);
}

/// The deterministic per-node event handler. Never blocks; all sends go
/// through the outbox.
pub fn handle_message(node: &mut NodeState, now: Tick, from: PeerId, msg: Message, out: &mut Outbox<Message>) {
    match msg {
        Message::TxSubmit { op } => {
            if node.role == NodeRole::Genesis {
                node.mempool.push_back(op);
            }
        }
        Message::BlockGossip { block } => handle_gossip(node, block),
        Message::ActivationAnnounce { block, signature } => {
            handle_activation(node, block, signature)
        }
        Message::RebootSignal { new_segment_id } => {
            handle_reboot_signal(node, new_segment_id, out)
        }
        Message::HeadRequest => {
            if node.is_running() {
                if let Some((segment_id, level, head_hash)) = node.store.head() {
                    out.send(
                        from,
                        Message::HeadResponse {
                            segment_id,
                            level,
                            head_hash,
                        },
                    );
                }
            }
        }
        Message::HeadResponse {
            segment_id, level, ..
        } => {
            let _ = (now, level);
            handle_head_response(node, from, segment_id, out);
        }
        Message::SegmentRequest { segment_id } => {
            if !node.is_running() {
                return;
            }
            let served = node.store.segment(segment_id).and_then(|segment| {
                node.activation_signature(segment_id)
                    .map(|sig| (segment, sig.to_vec()))
            });
            match served {
                Some((segment, activation_signature)) => out.send(
                    from,
                    Message::SegmentResponse {
                        segment,
                        activation_signature,
                    },
                ),
                None => out.send(from, Message::SegmentUnavailable { segment_id }),
            }
        }
        Message::SegmentResponse {
            segment,
            activation_signature,
        } => handle_segment_response(node, from, segment, activation_signature, out),
        Message::SegmentUnavailable { segment_id } => {
            handle_segment_unavailable(node, from, segment_id, out)
        }
    }
}

fn handle_gossip(node: &mut NodeState, block: Block) {
    let seg = block.header.segment_id;
    let level = block.header.level;
    if node.is_running() {
        if let Some((head_seg, head_level, head_hash)) = node.store.head() {
            if seg == head_seg && level == head_level + 1 {
                if block.header.predecessor_hash == head_hash {
                    if let Err(e) = node.apply_payload(&block) {
                        node.alarm(format!("gossiped block {seg}:{level} rejected: {e}"));
                    }
                    node.drain_pending();
                } else {
                    node.alarm(format!(
                        "gossiped block {seg}:{level} does not chain onto the head"
                    ));
                }
                return;
            }
            if (seg, level) <= (head_seg, head_level) {
                return; // already have it
            }
        }
    }
    // Not applicable yet: buffer until the gap closes or bootstrap ends.
    node.pending_blocks.insert((seg, level), block);
    if node.pending_blocks.len() > 4096 {
        node.alarm("pending block buffer overflow".to_string());
        node.pending_blocks.clear();
    }
}

/// Applies an announced activation: verify the signature and the recorded
/// predecessor hash, let the store prune per its mode, rebuild the
/// reinjection block from the local registry snapshot, and resume Running.
/// The peer table is untouched throughout.
fn handle_activation(node: &mut NodeState, block: Block, signature: Vec<u8>) {
    if matches!(node.phase, NodePhase::Bootstrapping { .. }) {
        // Joining nodes are redirected by the reboot signal instead.
        return;
    }
    if node.verify_activation(&block, &signature).is_err() {
        node.alarm(format!(
            "activation for segment {} has a bad signature",
            block.header.segment_id
        ));
        return;
    }
    if block.header.kind != BlockKind::Activation {
        node.alarm("announced block is not an activation block".to_string());
        return;
    }
    let next = node.config.current_segment_id + 1;
    let announced = block.header.segment_id;
    if announced < next {
        return; // stale or duplicate
    }
    if announced > next {
        node.alarm(format!(
            "activation for segment {announced} skips ahead of expected {next}"
        ));
        return;
    }
    node.phase = NodePhase::RollingOver { next_segment: next };
    let expected = node.linkage_anchor();
    if block.header.predecessor_hash != expected {
        // Stay RollingOver: validation is down and the mismatch needs
        // operator attention.
        node.alarm(format!(
            "activation for segment {next} links to {}, local record is {expected}",
            block.header.predecessor_hash
        ));
        return;
    }
    node.config.current_segment_id = next;
    let timestamp = block.header.timestamp;
    if let Err(e) = node.store.ingest_block(&block) {
        node.alarm(format!("activation for segment {next} rejected by store: {e}"));
        return;
    }
    node.activation_signatures.insert(next, signature);
    let reinjection = match build_reinjection_block(&node.registry, &block, timestamp) {
        Ok(b) => b,
        Err(e) => {
            node.alarm(format!("reinjection build failed for segment {next}: {e}"));
            return;
        }
    };
    if let Err(e) = node.store.ingest_block(&reinjection) {
        node.alarm(format!("reinjection for segment {next} rejected by store: {e}"));
        return;
    }
    node.phase = NodePhase::Running;
    node.stats.rollovers += 1;
    node.drain_pending();
}

/// Restarts an in-flight bootstrap against a newer segment. Running nodes
/// and stale signals are unaffected.
fn handle_reboot_signal(node: &mut NodeState, new_segment_id: u64, out: &mut Outbox<Message>) {
    if !matches!(node.phase, NodePhase::Bootstrapping { .. }) {
        return;
    }
    let Some(bootstrap) = &node.bootstrap else {
        return;
    };
    if new_segment_id <= bootstrap.effective_target() {
        return; // stale signal
    }
    node.stats.reboots += 1;
    node.bootstrap = Some(BootstrapState::new(new_segment_id));
    start_bootstrap(node, out);
}

fn handle_head_response(node: &mut NodeState, from: PeerId, segment_id: u64, out: &mut Outbox<Message>) {
    let Some(bootstrap) = &mut node.bootstrap else {
        return;
    };
    if bootstrap.stage != BootstrapStage::AwaitHead || bootstrap.peer != Some(from) {
        return; // stale response from an earlier attempt
    }
    bootstrap.target = segment_id;
    let target = bootstrap.effective_target();
    node.phase = NodePhase::Bootstrapping {
        target_segment: target,
    };
    let wanted = match node.role {
        // Cold storage synchronises history in order; a reboot keeps the
        // already-verified segments and resumes after them.
        NodeRole::ColdStorage => node
            .store
            .head()
            .map(|(segment, _, _)| segment + 1)
            .unwrap_or(1),
        // Everyone else only ever fetches the current segment.
        _ => target,
    };
    if wanted > target {
        // Everything this peer knows about is already in the store.
        if let Some(segment) = node.store.current_segment() {
            finish_bootstrap(node, &segment);
            return;
        }
    }
    bootstrap.wanted = wanted;
    bootstrap.stage = BootstrapStage::AwaitSegment;
    out.send(
        from,
        Message::SegmentRequest {
            segment_id: wanted,
        },
    );
}

/// Moves a bootstrap attempt to the next untried peer, restarting from the
/// head request; with every peer exhausted the bootstrap parks and raises
/// an alarm.
fn try_next_peer(node: &mut NodeState, failed: PeerId, reason: String, out: &mut Outbox<Message>) {
    node.alarm(reason);
    let Some(bootstrap) = &mut node.bootstrap else {
        return;
    };
    bootstrap.tried.insert(failed);
    let next = node
        .peer_table
        .iter()
        .copied()
        .find(|p| !bootstrap.tried.contains(p));
    match next {
        Some(peer) => {
            bootstrap.peer = Some(peer);
            bootstrap.stage = BootstrapStage::AwaitHead;
            bootstrap.target = 0;
            bootstrap.wanted = 0;
            out.send(peer, Message::HeadRequest);
        }
        None => {
            bootstrap.peer = None;
            let wanted = bootstrap.wanted;
            node.alarm(format!(
                "bootstrap stalled: segment {wanted} unavailable from every peer"
            ));
        }
    }
}

fn handle_segment_response(
    node: &mut NodeState,
    from: PeerId,
    segment: Segment,
    activation_signature: Vec<u8>,
    out: &mut Outbox<Message>,
) {
    // Received bytes count whether or not the segment is accepted.
    let payload_bytes: u64 = segment.blocks.iter().map(|b| b.encoded_len() as u64).sum();
    node.stats.segment_bytes_downloaded += payload_bytes;

    let Some(bootstrap) = &node.bootstrap else {
        return;
    };
    if bootstrap.stage != BootstrapStage::AwaitSegment
        || bootstrap.peer != Some(from)
        || segment.segment_id != bootstrap.wanted
    {
        return; // stale response, e.g. from before a reboot signal
    }

    if let Err(e) = accept_segment(node, &segment, &activation_signature) {
        try_next_peer(
            node,
            from,
            format!("segment {} from {from} rejected: {e}", segment.segment_id),
            out,
        );
        return;
    }

    let bootstrap = node.bootstrap.as_mut().expect("bootstrap still active");
    if node.role == NodeRole::ColdStorage && segment.segment_id < bootstrap.effective_target() {
        bootstrap.wanted = segment.segment_id + 1;
        let wanted = bootstrap.wanted;
        out.send(from, Message::SegmentRequest { segment_id: wanted });
        return;
    }
    finish_bootstrap(node, &segment);
}

/// Validates and ingests one fetched segment: internal validity, the
/// genesis signature over its activation, and — for history sync — the
/// linkage the store enforces against the previous segment.
fn accept_segment(
    node: &mut NodeState,
    segment: &Segment,
    activation_signature: &[u8],
) -> Result<(), ProtocolError> {
    validate_segment(segment)?;
    let activation = &segment.blocks[0];
    if activation.header.chain_id != node.config.chain.chain_id {
        return Err(ProtocolError::MalformedSnapshot {
            reason: "segment belongs to a different chain".to_string(),
        });
    }
    node.verify_activation(activation, activation_signature)?;
    if segment.segment_id == 1
        && activation.header.predecessor_hash != node.config.chain.genesis_hash
    {
        return Err(ProtocolError::Chain(crate::chain::ChainError::GenesisLinkage {
            expected: node.config.chain.genesis_hash,
            found: activation.header.predecessor_hash,
        }));
    }
    for block in &segment.blocks {
        node.store.ingest_block(block)?;
    }
    node.activation_signatures
        .insert(segment.segment_id, activation_signature.to_vec());
    Ok(())
}

fn finish_bootstrap(node: &mut NodeState, last_segment: &Segment) {
    match replay_contracts(last_segment) {
        Ok(registry) => node.registry = registry,
        Err(e) => {
            node.alarm(format!("contract replay failed: {e}"));
            return;
        }
    }
    node.config.current_segment_id = last_segment.segment_id;
    node.bootstrap = None;
    node.phase = NodePhase::Running;
    node.drain_pending();
}

fn handle_segment_unavailable(
    node: &mut NodeState,
    from: PeerId,
    segment_id: u64,
    out: &mut Outbox<Message>,
) {
    let Some(bootstrap) = &node.bootstrap else {
        return;
    };
    if bootstrap.stage != BootstrapStage::AwaitSegment
        || bootstrap.peer != Some(from)
        || segment_id != bootstrap.wanted
    {
        return;
    }
    try_next_peer(
        node,
        from,
        format!("peer {from} cannot serve segment {segment_id}"),
        out,
    );
}
