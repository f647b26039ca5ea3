//! Flat `key = value` scenario-config files: one assignment per line, `#`
//! comments, keys mirroring [`ScenarioConfig`] fields in lower_snake_case.

use std::path::PathBuf;

use thiserror::Error;

use crate::chain::{ChainConfig, ChainId, Digest};
use crate::experiment::{ScenarioConfig, DEFAULT_CHECKPOINT_INTERVAL};
use crate::protocol::NodeRole;
use crate::retention::RetentionMode;
use crate::sim::Topology;
use crate::workload::WorkloadConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("key `{key}`: {reason}")]
    Value { key: &'static str, reason: String },
}

/// Chain id used when a config does not pin one.
pub fn default_chain_id() -> ChainId {
    ChainId::from_bytes(*Digest::sha256(b"segchain/default-chain").as_bytes())
}

struct RawConfig {
    entries: Vec<(usize, String, String)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
                line: line_no,
                reason: "expected `key = value`".to_string(),
            })?;
            entries.push((
                line_no,
                key.trim().to_string(),
                value.trim().to_string(),
            ));
        }
        Ok(RawConfig { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        let pos = self.entries.iter().position(|(_, k, _)| k == key)?;
        Some(self.entries.remove(pos).2)
    }
}

fn value_err(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key,
        reason: reason.into(),
    }
}

fn parse_num<T: std::str::FromStr>(
    raw: Option<String>,
    key: &'static str,
    default: T,
) -> Result<T, ConfigError> {
    match raw {
        Some(s) => s
            .parse()
            .map_err(|_| value_err(key, format!("cannot parse {s:?} as a number"))),
        None => Ok(default),
    }
}

fn parse_modes(raw: &str, checkpoint_interval: u64) -> Result<Vec<RetentionMode>, ConfigError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|label| {
            RetentionMode::from_label(label, checkpoint_interval)
                .ok_or_else(|| value_err("retention_compare", format!("unknown mode {label:?}")))
        })
        .collect()
}

fn parse_join_events(raw: &str) -> Result<Vec<(u64, NodeRole)>, ConfigError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let (tick, role) = entry.split_once(':').ok_or_else(|| {
                value_err("join_events", format!("expected `tick:role`, got {entry:?}"))
            })?;
            let tick: u64 = tick
                .trim()
                .parse()
                .map_err(|_| value_err("join_events", format!("bad tick in {entry:?}")))?;
            let role = NodeRole::from_label(role.trim())
                .ok_or_else(|| value_err("join_events", format!("unknown role in {entry:?}")))?;
            Ok((tick, role))
        })
        .collect()
}

/// Parses a scenario config from its flat text form. Unknown keys are
/// rejected so a typo cannot silently fall back to a default.
pub fn parse_scenario_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut raw = RawConfig::parse(text)?;

    let checkpoint_interval = parse_num(
        raw.take("checkpoint_interval"),
        "checkpoint_interval",
        DEFAULT_CHECKPOINT_INTERVAL,
    )?;
    let chain_id = match raw.take("chain_id") {
        Some(hex) => ChainId::from_hex(&hex)
            .map_err(|e| value_err("chain_id", e.to_string()))?,
        None => default_chain_id(),
    };
    let blocks_per_segment = parse_num(raw.take("blocks_per_segment"), "blocks_per_segment", 10)?;
    let chain = ChainConfig::new(chain_id, blocks_per_segment)
        .map_err(|e| value_err("blocks_per_segment", e.to_string()))?;

    let workload = {
        let mut w = WorkloadConfig::default();
        w.num_clients = parse_num(raw.take("num_clients"), "num_clients", w.num_clients)?;
        w.num_accounts = parse_num(raw.take("num_accounts"), "num_accounts", w.num_accounts)?;
        w.description_min_len = parse_num(
            raw.take("description_min_len"),
            "description_min_len",
            w.description_min_len,
        )?;
        w.description_max_len = parse_num(
            raw.take("description_max_len"),
            "description_max_len",
            w.description_max_len,
        )?;
        w.value = parse_num(raw.take("value"), "value", w.value)?;
        w.seed = parse_num(raw.take("seed"), "seed", w.seed)?;
        w.validate()
            .map_err(|e| value_err("workload", e.to_string()))?;
        w
    };

    let topology = Topology {
        num_compute: parse_num(raw.take("num_compute"), "num_compute", 1)?,
        num_cold: parse_num(raw.take("num_cold"), "num_cold", 1)?,
        num_query: parse_num(raw.take("num_query"), "num_query", 0)?,
    };

    let retention_compare = match raw.take("retention_compare") {
        Some(list) => parse_modes(&list, checkpoint_interval)?,
        None => vec![
            RetentionMode::Archive,
            RetentionMode::Full {
                checkpoint_interval,
            },
            RetentionMode::Rolling {
                checkpoint_interval,
            },
            RetentionMode::SegmentedCompute,
            RetentionMode::SegmentedCold,
        ],
    };

    let join_events = match raw.take("join_events") {
        Some(list) => parse_join_events(&list)?,
        None => Vec::new(),
    };

    let config = ScenarioConfig {
        topology,
        chain,
        workload,
        retention_compare,
        total_payload_blocks: parse_num(
            raw.take("total_payload_blocks"),
            "total_payload_blocks",
            100,
        )?,
        sample_every: parse_num(raw.take("sample_every"), "sample_every", 1)?,
        join_events,
        output_dir: PathBuf::from(raw.take("output_dir").unwrap_or_else(|| "out".to_string())),
        latency_ticks: parse_num(raw.take("latency_ticks"), "latency_ticks", 1)?,
        max_ops_per_block: parse_num(
            raw.take("max_ops_per_block"),
            "max_ops_per_block",
            crate::protocol::DEFAULT_MAX_OPS_PER_BLOCK,
        )?,
        settle_budget_ticks: match raw.take("settle_budget_ticks") {
            Some(s) => Some(
                s.parse()
                    .map_err(|_| value_err("settle_budget_ticks", format!("bad number {s:?}")))?,
            ),
            None => None,
        },
    };

    if let Some((line, key, _)) = raw.entries.first() {
        return Err(ConfigError::Parse {
            line: *line,
            reason: format!("unknown key {key:?}"),
        });
    }
    Ok(config)
}
