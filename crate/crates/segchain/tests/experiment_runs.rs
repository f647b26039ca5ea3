//! Experiment-runner behavior that is cheapest to check end to end:
//! degenerate workloads, sampling cadence, and config validation.

use segchain::chain::ChainConfig;
use segchain::experiment::{default_chain_id, run_experiment, ScenarioConfig};
use segchain::retention::RetentionMode;
use segchain::sim::Topology;
use segchain::workload::WorkloadConfig;

fn scenario(dir: &tempfile::TempDir) -> ScenarioConfig {
    let mut config = ScenarioConfig::mode_compare(9, dir.path());
    config.total_payload_blocks = 25;
    config.workload = WorkloadConfig::new(4, 8, 30, 50, 9).unwrap();
    config
}

/// With zero clients every payload block is empty and the compute cap is
/// exactly the 12 near-empty blocks of one segment: an activation block
/// (125 bytes), a reinjection block with an empty snapshot (130 bytes),
/// and ten op-less payload blocks (125 bytes each).
#[test]
fn zero_client_workload_caps_at_the_bookkeeping_floor() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = scenario(&dir);
    config.total_payload_blocks = 100;
    config.workload = WorkloadConfig::new(0, 8, 30, 50, 9).unwrap();
    config.retention_compare = vec![RetentionMode::SegmentedCompute];
    let output = run_experiment(&config).unwrap();

    let compute_peak = output
        .rows
        .iter()
        .filter(|r| r.mode == "segmented-compute")
        .map(|r| r.bytes)
        .max()
        .unwrap();
    assert_eq!(compute_peak, 125 + 130 + 10 * 125);
    assert_eq!(output.segmented_segment_count, Some(10));
}

#[test]
fn sample_cadence_filters_rows_but_keeps_the_final_sample() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = scenario(&dir);
    config.sample_every = 10;
    let output = run_experiment(&config).unwrap();
    let archive: Vec<u64> = output
        .rows
        .iter()
        .filter(|r| r.mode == "archive")
        .map(|r| r.total_blocks)
        .collect();
    assert_eq!(archive, vec![0, 10, 20, 25]);
}

/// A blown settle budget is an error — but the samples gathered so far
/// are still written as a partial report first.
#[test]
fn settle_timeout_still_writes_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = scenario(&dir);
    config.retention_compare = vec![RetentionMode::SegmentedCold];
    // A cold node joins one block before the end: its history sync is
    // still in flight when the run ends, and the budget cannot cover it.
    config.join_events = vec![(
        24 * 6 * config.latency_ticks,
        segchain::protocol::NodeRole::ColdStorage,
    )];
    config.settle_budget_ticks = Some(1);
    match run_experiment(&config) {
        Err(segchain::experiment::ExperimentError::Timeout { partial_report, .. }) => {
            let csv = std::fs::read_to_string(partial_report).unwrap();
            assert!(csv.starts_with("mode,node_role,total_blocks,bytes\n"));
            assert!(csv.lines().count() > 20, "partial report carries the samples");
        }
        other => panic!("expected a timeout with a partial report, got {other:?}"),
    }
}

#[test]
fn invalid_scenarios_are_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();

    // Fewer payload blocks than one segment holds.
    let mut config = scenario(&dir);
    config.total_payload_blocks = 5;
    assert!(run_experiment(&config).is_err());

    // Segmented comparison without the nodes to measure.
    let mut config = scenario(&dir);
    config.topology = Topology {
        num_compute: 0,
        num_cold: 1,
        num_query: 0,
    };
    assert!(run_experiment(&config).is_err());

    // A mode listed twice.
    let mut config = scenario(&dir);
    config.retention_compare = vec![RetentionMode::Archive, RetentionMode::Archive];
    assert!(run_experiment(&config).is_err());

    // Segment length below the minimum.
    assert!(ChainConfig::new(default_chain_id(), 2).is_err());
}
