//! Scenario driver: wires protocol nodes and workload clients into the
//! deterministic network and runs block production on a fixed schedule.
//!
//! Time is divided into rounds of `6 * latency` ticks, one payload block
//! per round:
//!
//! * `t0`: if the current segment is full (or the chain has not started),
//!   the genesis node opens the next segment; announcements land by
//!   `t0 + 2*latency`.
//! * `t0 + 2*latency`: every client submits one transaction.
//! * `t0 + 4*latency`: the genesis node drains the mempool into a payload
//!   block and gossips it; deliveries land by `t0 + 5*latency`, where
//!   storage ledgers are sampled against the payload-block count.
//!
//! The fixed schedule makes every tick — and therefore every join event,
//! block timestamp, and ledger sample — a pure function of the scenario
//! and seed. Mid-run joins are processed at their exact tick, so a
//! bootstrap can genuinely interleave with production and rollover
//! traffic.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::chain::{ChainConfig, ChainError, ContractId, ContractRegistry, Digest, Operation};
use crate::netsim::{Actor, NetError, NetParams, Network, Outbox, PeerId, Tick};
use crate::protocol::{
    full_mesh_peers, genesis_signing_key, handle_message, initiate_rollover, produce_block,
    start_bootstrap, Message, NodeConfig, NodeRole, NodeState, ProtocolError,
};
use crate::retention::{StorageLedger, StoreError};
use crate::workload::{TransactionGenerator, WorkloadConfig, WorkloadError};

/// Number of ticks per production round, in units of the link latency.
pub const ROUND_PHASES: u64 = 6;

/// First peer id handed to workload clients; protocol nodes stay below.
const CLIENT_ID_BASE: u64 = 1000;

/// How many nodes of each non-genesis role a scenario starts with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Topology {
    pub num_compute: u32,
    pub num_cold: u32,
    pub num_query: u32,
}

/// Everything a scenario needs beyond the chain parameters.
#[derive(Clone, Debug)]
pub struct SimOptions {
    pub chain: ChainConfig,
    pub workload: WorkloadConfig,
    pub topology: Topology,
    pub net: NetParams,
    pub max_ops_per_block: usize,
    /// When set, every k-th round client 0 also submits one deterministic
    /// contract update, so segments carry real contract state.
    pub contract_update_every: Option<u64>,
}

impl SimOptions {
    pub fn new(chain: ChainConfig, workload: WorkloadConfig, topology: Topology) -> Self {
        SimOptions {
            chain,
            workload,
            net: NetParams::new(1, workload.seed),
            topology,
            max_ops_per_block: crate::protocol::DEFAULT_MAX_OPS_PER_BLOCK,
            contract_update_every: None,
        }
    }
}

/// Outcome of one segment transition, captured as it settles.
#[derive(Clone, Debug)]
pub struct RolloverReport {
    /// The segment that was opened.
    pub segment_id: u64,
    /// All Running nodes reported the same `(segment, level, head)` after
    /// the announcement settled.
    pub converged: bool,
    /// Every node that existed before the transition kept its peer table
    /// byte for byte.
    pub peer_tables_unchanged: bool,
    /// The snapshot in the new reinjection block equals the registry at
    /// the previous segment's last block.
    pub registry_carried: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("scenario error: {0}")]
    Scenario(String),
}

/// A network participant: a protocol node or a transaction client.
pub enum SimActor {
    Node(Box<NodeState>),
    Client,
}

impl SimActor {
    fn node(&self) -> Option<&NodeState> {
        match self {
            SimActor::Node(node) => Some(node),
            SimActor::Client => None,
        }
    }

    fn node_mut(&mut self) -> Option<&mut NodeState> {
        match self {
            SimActor::Node(node) => Some(node),
            SimActor::Client => None,
        }
    }
}

impl Actor for SimActor {
    type Msg = Message;

    fn deliver(&mut self, now: Tick, from: PeerId, message: Message, out: &mut Outbox<Message>) {
        match self {
            SimActor::Node(node) => handle_message(node, now, from, message, out),
            SimActor::Client => {}
        }
    }

    fn describe(&self) -> String {
        match self {
            SimActor::Node(node) => node.describe(),
            SimActor::Client => String::new(),
        }
    }
}

struct PendingRollover {
    segment_id: u64,
    pre_tables: BTreeMap<PeerId, BTreeSet<PeerId>>,
    pre_registry: ContractRegistry,
}

/// The assembled scenario: network, nodes, clients, workload, and the
/// ledgers tracking one representative compute and cold node.
pub struct ClusterSim {
    net: Network<SimActor>,
    genesis_id: PeerId,
    compute_ids: Vec<PeerId>,
    cold_ids: Vec<PeerId>,
    query_ids: Vec<PeerId>,
    client_ids: Vec<PeerId>,
    next_node_id: u64,
    tx_gen: TransactionGenerator,
    contract_updates: Option<(u64, ChaCha12Rng)>,
    payload_produced: u64,
    round_index: u64,
    cursor: Tick,
    ledgers: BTreeMap<PeerId, StorageLedger>,
    joins: BTreeMap<(Tick, u64), (NodeRole, PeerId)>,
    join_seq: u64,
    rollover_reports: Vec<RolloverReport>,
    started: bool,
}

impl ClusterSim {
    pub fn new(options: SimOptions) -> Result<Self, SimError> {
        options.workload.validate()?;
        let signing_key = genesis_signing_key(&options.chain.chain_id, options.workload.seed);
        let node_config = NodeConfig {
            chain: options.chain.clone(),
            genesis_public_key: signing_key.verifying_key(),
            max_ops_per_block: options.max_ops_per_block,
            current_segment_id: 0,
        };

        let mut net = Network::new(options.net);
        let genesis_id = PeerId(0);
        let mut node_ids = vec![genesis_id];
        let mut cold_ids = Vec::new();
        let mut compute_ids = Vec::new();
        let mut query_ids = Vec::new();
        let mut next = 1;
        for _ in 0..options.topology.num_cold {
            cold_ids.push(PeerId(next));
            next += 1;
        }
        for _ in 0..options.topology.num_compute {
            compute_ids.push(PeerId(next));
            next += 1;
        }
        for _ in 0..options.topology.num_query {
            query_ids.push(PeerId(next));
            next += 1;
        }
        node_ids.extend(cold_ids.iter().chain(&compute_ids).chain(&query_ids));

        for &id in &node_ids {
            let role = if id == genesis_id {
                NodeRole::Genesis
            } else if cold_ids.contains(&id) {
                NodeRole::ColdStorage
            } else if compute_ids.contains(&id) {
                NodeRole::Compute
            } else {
                NodeRole::Query
            };
            let mut node = NodeState::new(
                id,
                role,
                node_config.clone(),
                full_mesh_peers(&node_ids, id),
            );
            if role == NodeRole::Genesis {
                node = node.with_signing_key(signing_key.clone());
            }
            net.register(id, SimActor::Node(Box::new(node)));
        }

        let mut client_ids = Vec::new();
        for i in 0..options.workload.num_clients as u64 {
            let id = PeerId(CLIENT_ID_BASE + i);
            client_ids.push(id);
            net.register(id, SimActor::Client);
        }

        let mut ledgers = BTreeMap::new();
        if let Some(&id) = compute_ids.first() {
            ledgers.insert(id, StorageLedger::new());
        }
        if let Some(&id) = cold_ids.first() {
            ledgers.insert(id, StorageLedger::new());
        }

        let contract_updates = options
            .contract_update_every
            .map(|every| (every, ChaCha12Rng::seed_from_u64(options.workload.seed ^ 0xC0117AC7)));

        Ok(ClusterSim {
            net,
            genesis_id,
            compute_ids,
            cold_ids,
            query_ids,
            client_ids,
            next_node_id: next,
            tx_gen: TransactionGenerator::new(options.workload)?,
            contract_updates,
            payload_produced: 0,
            round_index: 0,
            cursor: 0,
            ledgers,
            joins: BTreeMap::new(),
            join_seq: 0,
            rollover_reports: Vec::new(),
            started: false,
        })
    }

    pub fn genesis_id(&self) -> PeerId {
        self.genesis_id
    }

    pub fn compute_ids(&self) -> &[PeerId] {
        &self.compute_ids
    }

    pub fn cold_ids(&self) -> &[PeerId] {
        &self.cold_ids
    }

    pub fn query_ids(&self) -> &[PeerId] {
        &self.query_ids
    }

    pub fn now(&self) -> Tick {
        self.net.now()
    }

    pub fn payload_produced(&self) -> u64 {
        self.payload_produced
    }

    /// Ticks per production round under the configured latency.
    pub fn round_period(&self) -> u64 {
        ROUND_PHASES * self.net.params().latency_ticks
    }

    /// The tick at which the round following payload block `p` begins —
    /// the natural instant for "join after payload p" events.
    pub fn join_tick_after_payload(&self, payload: u64) -> Tick {
        payload * self.round_period()
    }

    pub fn rollover_reports(&self) -> &[RolloverReport] {
        &self.rollover_reports
    }

    /// Starts recording the network's delivery trace.
    pub fn enable_trace(&mut self) {
        self.net.enable_trace();
    }

    /// The recorded delivery trace, one line per delivery.
    pub fn take_trace(&mut self) -> Vec<String> {
        self.net.take_trace()
    }

    /// Storage samples of the tracked representative for `id`, if tracked.
    pub fn ledger(&self, id: PeerId) -> Option<&StorageLedger> {
        self.ledgers.get(&id)
    }

    /// The node whose ledger stands in for a role in reports.
    pub fn representative(&self, role: NodeRole) -> Option<PeerId> {
        match role {
            NodeRole::Genesis => Some(self.genesis_id),
            NodeRole::ColdStorage => self.cold_ids.first().copied(),
            NodeRole::Compute => self.compute_ids.first().copied(),
            NodeRole::Query => self.query_ids.first().copied(),
        }
    }

    /// Immutable view of a protocol node. Panics for unknown or client
    /// ids; scenarios know their peers.
    pub fn node(&self, id: PeerId) -> &NodeState {
        self.net
            .actor(id)
            .and_then(SimActor::node)
            .unwrap_or_else(|| panic!("no protocol node with id {id}"))
    }

    pub fn node_mut(&mut self, id: PeerId) -> &mut NodeState {
        self.net
            .actor_mut(id)
            .and_then(SimActor::node_mut)
            .unwrap_or_else(|| panic!("no protocol node with id {id}"))
    }

    /// Ids of every protocol node currently registered, in id order.
    pub fn protocol_node_ids(&self) -> Vec<PeerId> {
        self.net
            .actors()
            .filter(|(_, a)| a.node().is_some())
            .map(|(id, _)| id)
            .collect()
    }

    /// `(segment, level, head)` shared by every Running node, or `None`
    /// while any two disagree (or none are Running).
    pub fn converged_head(&self) -> Option<(u64, u64, Digest)> {
        let mut shared: Option<(u64, u64, Digest)> = None;
        for (_, actor) in self.net.actors() {
            let Some(node) = actor.node() else { continue };
            if !node.is_running() {
                continue;
            }
            let head = node.head()?;
            match shared {
                None => shared = Some(head),
                Some(existing) if existing == head => {}
                Some(_) => return None,
            }
        }
        shared
    }

    /// Registers a mid-run join: at `tick` a fresh node of `role` appears,
    /// learns the full peer set, and starts bootstrapping. Returns the id
    /// it will use.
    pub fn schedule_join(&mut self, tick: Tick, role: NodeRole) -> PeerId {
        let id = PeerId(self.next_node_id);
        self.next_node_id += 1;
        assert!(
            self.next_node_id < CLIENT_ID_BASE,
            "node ids would collide with client ids"
        );
        self.joins.insert((tick, self.join_seq), (role, id));
        self.join_seq += 1;
        id
    }

    fn process_join(&mut self, role: NodeRole, id: PeerId) -> Result<(), SimError> {
        let peers: Vec<PeerId> = self.protocol_node_ids();
        let genesis = self.node(self.genesis_id);
        let config = NodeConfig {
            chain: genesis.config.chain.clone(),
            genesis_public_key: genesis.config.genesis_public_key,
            max_ops_per_block: genesis.config.max_ops_per_block,
            current_segment_id: 0,
        };
        let mut node = NodeState::new(id, role, config, peers.iter().copied().collect());
        let mut out = Outbox::new();
        start_bootstrap(&mut node, &mut out);
        for &peer in &peers {
            self.node_mut(peer).peer_table.insert(id);
        }
        match role {
            NodeRole::ColdStorage => self.cold_ids.push(id),
            NodeRole::Compute => self.compute_ids.push(id),
            NodeRole::Query => self.query_ids.push(id),
            NodeRole::Genesis => {
                return Err(SimError::Scenario(
                    "a network has exactly one genesis node".to_string(),
                ))
            }
        }
        self.net.register(id, SimActor::Node(Box::new(node)));
        for (to, message) in out.into_sends() {
            self.net.send(id, to, message)?;
        }
        Ok(())
    }

    /// Advances the clock to `target`, injecting scheduled joins at their
    /// exact ticks on the way.
    fn advance_with_joins(&mut self, target: Tick) -> Result<(), SimError> {
        loop {
            let due = self
                .joins
                .first_key_value()
                .map(|(&(tick, _), &(role, id))| (tick, role, id))
                .filter(|&(tick, _, _)| tick <= target);
            match due {
                Some((tick, role, id)) => {
                    self.net.advance_to(tick.max(self.net.now()));
                    self.joins.pop_first();
                    self.process_join(role, id)?;
                }
                None => break,
            }
        }
        // The chain-start window may already sit past an early target.
        self.net.advance_to(target.max(self.net.now()));
        Ok(())
    }

    fn do_rollover(&mut self, now: Tick) -> Result<PendingRollover, SimError> {
        let mut pre_tables = BTreeMap::new();
        for id in self.protocol_node_ids() {
            pre_tables.insert(id, self.node(id).peer_table.clone());
        }
        let pre_registry = self.node(self.genesis_id).registry.clone();
        let (messages, segment_id) = {
            let genesis = self.node_mut(self.genesis_id);
            let messages = initiate_rollover(genesis, now)?;
            (messages, genesis.config.current_segment_id)
        };
        for (to, message) in messages {
            self.net.send(self.genesis_id, to, message)?;
        }
        Ok(PendingRollover {
            segment_id,
            pre_tables,
            pre_registry,
        })
    }

    fn finalize_rollover(&mut self, pending: PendingRollover) {
        let genesis_head = self.node(self.genesis_id).head();
        let converged = match (self.converged_head(), genesis_head) {
            (Some(shared), Some(head)) => shared == head,
            _ => false,
        };
        let peer_tables_unchanged = pending
            .pre_tables
            .iter()
            .all(|(id, table)| &self.node(*id).peer_table == table);
        let registry_carried = self
            .node(self.genesis_id)
            .store
            .segment(pending.segment_id)
            .and_then(|segment| crate::chain::replay_contracts(&segment).ok())
            .map(|replayed| {
                // The new segment has no payload yet, so the replay equals
                // the reinjected snapshot.
                replayed == pending.pre_registry
            })
            .unwrap_or(false);
        self.rollover_reports.push(RolloverReport {
            segment_id: pending.segment_id,
            converged,
            peer_tables_unchanged,
            registry_carried,
        });
    }

    fn submit_round(&mut self) -> Result<(), SimError> {
        for i in 0..self.client_ids.len() {
            let op = self.tx_gen.next_transaction();
            self.net
                .send(self.client_ids[i], self.genesis_id, Message::TxSubmit { op })?;
        }
        if let Some((every, rng)) = &mut self.contract_updates {
            if self.round_index.is_multiple_of(*every) {
                let contract_id = ContractId::from_index(rng.gen_range(0..8));
                let len = rng.gen_range(16..64usize);
                let mut new_state = vec![0u8; len];
                rng.fill(new_state.as_mut_slice());
                let op = Operation::ContractUpdate {
                    contract_id,
                    new_state,
                };
                self.net
                    .send(self.client_ids[0], self.genesis_id, Message::TxSubmit { op })?;
            }
        }
        Ok(())
    }

    fn sample_ledgers(&mut self) -> Result<(), SimError> {
        let payload = self.payload_produced;
        let net = &self.net;
        for (id, ledger) in self.ledgers.iter_mut() {
            if let Some(node) = net.actor(*id).and_then(SimActor::node) {
                ledger.record_sample(&node.store, payload)?;
            }
        }
        Ok(())
    }

    /// Opens segment 1 and records the payload-0 ledger samples; invoked
    /// automatically by the first round.
    pub fn start(&mut self) -> Result<(), SimError> {
        if self.started {
            return Ok(());
        }
        self.advance_with_joins(self.cursor)?;
        let pending = self.do_rollover(self.cursor)?;
        let latency = self.net.params().latency_ticks;
        self.advance_with_joins(self.cursor + 2 * latency)?;
        self.finalize_rollover(pending);
        self.sample_ledgers()?;
        self.started = true;
        Ok(())
    }

    /// Runs one production round: rollover when due, one submission round,
    /// one produced payload block, one ledger sample.
    pub fn run_round(&mut self) -> Result<(), SimError> {
        self.start()?;
        let latency = self.net.params().latency_ticks;
        let t0 = self.cursor;
        self.advance_with_joins(t0)?;

        let pending = if self.node(self.genesis_id).rollover_due() {
            Some(self.do_rollover(self.net.now())?)
        } else {
            None
        };
        self.advance_with_joins(t0 + 2 * latency)?;
        if let Some(pending) = pending {
            self.finalize_rollover(pending);
        }

        self.submit_round()?;
        self.advance_with_joins(t0 + 4 * latency)?;

        let now = self.net.now();
        let block = produce_block(self.node_mut(self.genesis_id), now)?;
        let peers: Vec<PeerId> = self.node(self.genesis_id).peer_table.iter().copied().collect();
        for peer in peers {
            self.net
                .send(self.genesis_id, peer, Message::BlockGossip { block: block.clone() })?;
        }
        self.payload_produced += 1;
        self.round_index += 1;

        self.advance_with_joins(t0 + 5 * latency)?;
        self.sample_ledgers()?;
        self.advance_with_joins(t0 + 6 * latency)?;
        self.cursor = t0 + 6 * latency;
        Ok(())
    }

    pub fn run_rounds(&mut self, rounds: u64) -> Result<(), SimError> {
        for _ in 0..rounds {
            self.run_round()?;
        }
        Ok(())
    }

    /// Lets in-flight traffic (typically trailing bootstraps) finish.
    pub fn settle(&mut self, budget_ticks: u64) -> Result<Tick, SimError> {
        Ok(self.net.run_until_idle(budget_ticks)?)
    }

    /// Steps until `id` reports Running, within `budget_ticks`.
    pub fn run_until_running(&mut self, id: PeerId, budget_ticks: u64) -> Result<Tick, SimError> {
        Ok(self.net.run_until(budget_ticks, |net| {
            net.actor(id)
                .and_then(SimActor::node)
                .map(NodeState::is_running)
                .unwrap_or(false)
        })?)
    }
}
