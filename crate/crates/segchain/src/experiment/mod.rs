//! Experiment runner: storage-retention comparisons over identical seeded
//! workloads, reported as plot-ready CSV plus persisted segment files.
//!
//! Every mode under comparison consumes the byte-identical operation
//! stream (same workload seed, same per-block grouping), so curve
//! differences are attributable to the retention policy alone. The
//! unsegmented modes (archive, full, rolling) ingest a single
//! never-rolling segment; the segmented modes run the full rollover
//! protocol on the simulated network.
//!
//! Reported byte totals are canonical-serialization sizes from the store
//! accounting, not on-disk file sizes, so reports are platform-independent
//! and are not comparable to any production blockchain's storage numbers.

mod config;

pub use config::{default_chain_id, parse_scenario_config, ConfigError};

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::chain::{
    build_activation_block, build_reinjection_block, hash_block, verify_full_chain, ChainConfig,
    ChainError, ContractRegistry, Digest, Operation, Segment,
};
use crate::netsim::NetParams;
use crate::protocol::NodeRole;
use crate::retention::{NodeStore, RetentionMode, StorageLedger, StoreError};
use crate::segfile::{self, SegfileError};
use crate::sim::{ClusterSim, SimError, SimOptions, Topology};
use crate::workload::{TransactionGenerator, WorkloadConfig, WorkloadError};

/// Default checkpoint interval for the full and rolling modes, aligned
/// with the default segment length for comparability.
pub const DEFAULT_CHECKPOINT_INTERVAL: u64 = 10;

/// One experiment: chain and workload parameters, the retention modes to
/// compare, and the run shape.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub topology: Topology,
    pub chain: ChainConfig,
    pub workload: WorkloadConfig,
    pub retention_compare: Vec<RetentionMode>,
    pub total_payload_blocks: u64,
    pub sample_every: u64,
    /// Mid-run joins as `(tick, role)`; ticks follow the simulator's
    /// fixed round schedule.
    pub join_events: Vec<(u64, NodeRole)>,
    pub output_dir: PathBuf,
    pub latency_ticks: u64,
    pub max_ops_per_block: usize,
    /// Tick budget for post-run settling; `None` derives a generous one
    /// from the run length.
    pub settle_budget_ticks: Option<u64>,
}

impl ScenarioConfig {
    /// Storage comparison across all five modes: segment length 10, 1000
    /// payload blocks, the full 32-client workload.
    pub fn mode_compare(seed: u64, output_dir: impl Into<PathBuf>) -> Self {
        let chain = ChainConfig::new(default_chain_id(), 10).expect("valid preset");
        ScenarioConfig {
            topology: Topology {
                num_compute: 3,
                num_cold: 1,
                num_query: 0,
            },
            chain,
            workload: WorkloadConfig::default().with_seed(seed),
            retention_compare: vec![
                RetentionMode::Archive,
                RetentionMode::Full {
                    checkpoint_interval: DEFAULT_CHECKPOINT_INTERVAL,
                },
                RetentionMode::Rolling {
                    checkpoint_interval: DEFAULT_CHECKPOINT_INTERVAL,
                },
                RetentionMode::SegmentedCompute,
                RetentionMode::SegmentedCold,
            ],
            total_payload_blocks: 1000,
            sample_every: 1,
            join_events: Vec::new(),
            output_dir: output_dir.into(),
            latency_ticks: 1,
            max_ops_per_block: crate::protocol::DEFAULT_MAX_OPS_PER_BLOCK,
            settle_budget_ticks: None,
        }
    }

    /// Segment-length sweep point: `blocks_per_segment` payload blocks per
    /// segment over 1000 payload blocks, comparing the segmented roles
    /// against an unsegmented archive.
    pub fn segment_sweep(
        blocks_per_segment: u64,
        seed: u64,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        let chain =
            ChainConfig::new(default_chain_id(), blocks_per_segment).expect("valid preset");
        let mut config = Self::mode_compare(seed, output_dir);
        config.chain = chain;
        config.retention_compare = vec![
            RetentionMode::Archive,
            RetentionMode::SegmentedCompute,
            RetentionMode::SegmentedCold,
        ];
        config
    }
}

/// One CSV row: `mode,node_role,total_blocks,bytes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReportRow {
    pub mode: String,
    pub node_role: String,
    pub total_blocks: u64,
    pub bytes: u64,
}

/// Everything a finished experiment leaves behind.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub report_path: PathBuf,
    pub rows: Vec<ReportRow>,
    pub segment_files: Vec<PathBuf>,
    /// Final head digest per mode label, for determinism checks.
    pub final_heads: BTreeMap<String, Digest>,
    /// Total segments produced by the segmented run, when one ran.
    pub segmented_segment_count: Option<u64>,
    /// Total blocks (bookkeeping included) of the segmented run.
    pub segmented_total_blocks: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid scenario: {0}")]
    Invalid(String),

    /// The simulation blew its tick budget; the samples gathered so far
    /// were still written out.
    #[error("simulation timed out ({detail}); partial report at {}", partial_report.display())]
    Timeout {
        partial_report: PathBuf,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Segfile(#[from] SegfileError),
}

fn invalid(reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Invalid(reason.into())
}

fn validate(config: &ScenarioConfig) -> Result<(), ExperimentError> {
    config.workload.validate()?;
    if config.retention_compare.is_empty() {
        return Err(invalid("retention_compare must name at least one mode"));
    }
    let mut labels: Vec<&str> = config.retention_compare.iter().map(|m| m.label()).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() != config.retention_compare.len() {
        return Err(invalid("retention_compare lists a mode twice"));
    }
    if config.total_payload_blocks < config.chain.blocks_per_segment {
        return Err(invalid(format!(
            "total_payload_blocks {} below blocks_per_segment {}",
            config.total_payload_blocks, config.chain.blocks_per_segment
        )));
    }
    if config.sample_every == 0 {
        return Err(invalid("sample_every must be at least 1"));
    }
    if config.latency_ticks == 0 {
        return Err(invalid("latency_ticks must be at least 1"));
    }
    let wants_compute = config
        .retention_compare
        .contains(&RetentionMode::SegmentedCompute);
    let wants_cold = config
        .retention_compare
        .contains(&RetentionMode::SegmentedCold);
    if wants_compute && config.topology.num_compute == 0 {
        return Err(invalid("segmented-compute comparison needs num_compute >= 1"));
    }
    if wants_cold && config.topology.num_cold == 0 {
        return Err(invalid("segmented-cold comparison needs num_cold >= 1"));
    }
    Ok(())
}

struct UnsegmentedRun {
    ledgers: BTreeMap<&'static str, StorageLedger>,
    segment: Segment,
    head: Digest,
}

/// Builds the never-rolling comparison chain once and feeds every
/// unsegmented store from it; determinism makes this byte-identical to
/// running the modes one at a time.
fn run_unsegmented(
    config: &ScenarioConfig,
    modes: &[RetentionMode],
) -> Result<UnsegmentedRun, ExperimentError> {
    let mut generator = TransactionGenerator::new(config.workload)?;
    let activation = build_activation_block(&config.chain, 1, config.chain.genesis_hash, 0)?;
    let reinjection = build_reinjection_block(&ContractRegistry::new(), &activation, 0)?;
    let mut segment = Segment::start(activation, reinjection)?;

    let mut stores: Vec<(RetentionMode, NodeStore, StorageLedger)> = modes
        .iter()
        .map(|&mode| (mode, NodeStore::new(mode), StorageLedger::new()))
        .collect();
    for (_, store, _) in stores.iter_mut() {
        store.ingest_block(&segment.blocks[0])?;
        store.ingest_block(&segment.blocks[1])?;
    }
    for (_, store, ledger) in stores.iter_mut() {
        ledger.record_sample(store, 0)?;
    }

    let mut mempool: VecDeque<Operation> = VecDeque::new();
    for round in 0..config.total_payload_blocks {
        mempool.extend(generator.next_round());
        let take = config.max_ops_per_block.min(mempool.len());
        let ops: Vec<Operation> = mempool.drain(..take).collect();
        let block = segment.append_payload_block(ops, round + 1)?;
        for (_, store, ledger) in stores.iter_mut() {
            store.ingest_block(&block)?;
            ledger.record_sample(store, round + 1)?;
        }
    }

    let head = hash_block(segment.last_block().expect("chain is non-empty"))?;
    let ledgers = stores
        .into_iter()
        .map(|(mode, _, ledger)| (mode.label(), ledger))
        .collect();
    Ok(UnsegmentedRun {
        ledgers,
        segment,
        head,
    })
}

fn filter_samples(ledger: &StorageLedger, config: &ScenarioConfig) -> Vec<(u64, u64)> {
    let last = config.total_payload_blocks;
    ledger
        .samples()
        .iter()
        .filter(|s| s.total_blocks % config.sample_every == 0 || s.total_blocks == last)
        .map(|s| (s.total_blocks, s.bytes))
        .collect()
}

/// Runs the configured comparison, writes `report.csv` and the final
/// segment files under the output directory, self-verifies every
/// persisted file, and returns the report path plus summary data.
pub fn run_experiment(config: &ScenarioConfig) -> Result<ExperimentOutput, ExperimentError> {
    validate(config)?;

    let unsegmented_modes: Vec<RetentionMode> = config
        .retention_compare
        .iter()
        .copied()
        .filter(|m| {
            !matches!(
                m,
                RetentionMode::SegmentedCompute | RetentionMode::SegmentedCold
            )
        })
        .collect();
    let wants_segmented = config.retention_compare.len() != unsegmented_modes.len();

    let unsegmented = if unsegmented_modes.is_empty() {
        None
    } else {
        Some(run_unsegmented(config, &unsegmented_modes)?)
    };

    let mut timed_out: Option<SimError> = None;
    let segmented = if wants_segmented {
        let options = SimOptions {
            chain: config.chain.clone(),
            workload: config.workload,
            topology: config.topology,
            net: NetParams::new(config.latency_ticks, config.workload.seed),
            max_ops_per_block: config.max_ops_per_block,
            contract_update_every: None,
        };
        let mut sim = ClusterSim::new(options)?;
        for &(tick, role) in &config.join_events {
            sim.schedule_join(tick, role);
        }
        sim.run_rounds(config.total_payload_blocks)?;
        // Generous budget: trailing bootstraps sync two ticks a segment.
        // A blown budget still yields the samples gathered so far; the
        // partial report is written before the error surfaces.
        let budget = config
            .settle_budget_ticks
            .unwrap_or(50 * (config.total_payload_blocks + 10) * config.latency_ticks);
        if let Err(e) = sim.settle(budget) {
            timed_out = Some(e);
        }
        Some(sim)
    } else {
        None
    };

    // Assemble rows.
    let mut rows: Vec<ReportRow> = Vec::new();
    for mode in &config.retention_compare {
        let (ledger, role) = match mode {
            RetentionMode::Archive | RetentionMode::Full { .. } | RetentionMode::Rolling { .. } => {
                let run = unsegmented.as_ref().expect("unsegmented run present");
                (run.ledgers.get(mode.label()).expect("ledger present"), "compute")
            }
            RetentionMode::SegmentedCompute => {
                let sim = segmented.as_ref().expect("segmented run present");
                let id = sim
                    .representative(NodeRole::Compute)
                    .expect("validated topology");
                (sim.ledger(id).expect("tracked ledger"), "compute")
            }
            RetentionMode::SegmentedCold => {
                let sim = segmented.as_ref().expect("segmented run present");
                let id = sim
                    .representative(NodeRole::ColdStorage)
                    .expect("validated topology");
                (sim.ledger(id).expect("tracked ledger"), "cold")
            }
        };
        for (total_blocks, bytes) in filter_samples(ledger, config) {
            rows.push(ReportRow {
                mode: mode.label().to_string(),
                node_role: role.to_string(),
                total_blocks,
                bytes,
            });
        }
    }
    rows.sort_by(|a, b| {
        (&a.mode, &a.node_role, a.total_blocks).cmp(&(&b.mode, &b.node_role, b.total_blocks))
    });

    // Persist the report.
    fs::create_dir_all(&config.output_dir).map_err(|source| ExperimentError::Io {
        path: config.output_dir.clone(),
        source,
    })?;
    let report_path = config.output_dir.join("report.csv");
    let mut csv = String::from("mode,node_role,total_blocks,bytes\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.mode, row.node_role, row.total_blocks, row.bytes
        ));
    }
    fs::write(&report_path, csv).map_err(|source| ExperimentError::Io {
        path: report_path.clone(),
        source,
    })?;

    // Persist final segments and self-verify them.
    let mut segment_files = Vec::new();
    let mut final_heads = BTreeMap::new();
    if let Some(run) = &unsegmented {
        let dir = config.output_dir.join("segments").join("unsegmented");
        segment_files.push(segfile::write_segment(&dir, &run.segment)?);
        verify_persisted(&dir, &config.chain)?;
        for mode in &unsegmented_modes {
            final_heads.insert(mode.label().to_string(), run.head);
        }
    }
    let mut segmented_segment_count = None;
    let mut segmented_total_blocks = None;
    if let Some(sim) = &segmented {
        let dir = config.output_dir.join("segments").join("segmented");
        let genesis = sim.node(sim.genesis_id());
        let segments = genesis.store.fully_retained_segments();
        segmented_segment_count = Some(segments.len() as u64);
        segmented_total_blocks = Some(segments.iter().map(|s| s.blocks.len() as u64).sum());
        for segment in &segments {
            segment_files.push(segfile::write_segment(&dir, segment)?);
        }
        verify_persisted(&dir, &config.chain)?;
        let head = genesis
            .head()
            .map(|(_, _, hash)| hash)
            .expect("segmented run produced blocks");
        for mode in &config.retention_compare {
            if matches!(
                mode,
                RetentionMode::SegmentedCompute | RetentionMode::SegmentedCold
            ) {
                final_heads.insert(mode.label().to_string(), head);
            }
        }
    }

    if let Some(source) = timed_out {
        return Err(ExperimentError::Timeout {
            partial_report: report_path,
            detail: source.to_string(),
        });
    }
    Ok(ExperimentOutput {
        report_path,
        rows,
        segment_files,
        final_heads,
        segmented_segment_count,
        segmented_total_blocks,
    })
}

/// Reads back everything just written and verifies the full chain; an
/// experiment must never leave an unverifiable file behind.
fn verify_persisted(dir: &Path, chain: &ChainConfig) -> Result<(), ExperimentError> {
    let mut segments = Vec::new();
    for path in segfile::list_segment_files(dir)? {
        segments.push(segfile::read_segment(&path)?);
    }
    segments.sort_by_key(|s| s.segment_id);
    verify_full_chain(&segments, chain)?;
    Ok(())
}
