//! Deterministic in-process network for DHT experiments.
//!
//! Single-threaded virtual time: the clock only moves by popping the
//! earliest queued event, so a run is a pure function of its
//! [`SimConfig`] and workload.

mod config;
mod sim;
mod trace;

use thiserror::Error;

pub use config::{ChurnAction, ChurnEvent, ClientAction, LatencyRange, PartitionEvent, Scenario, SimConfig, WorkloadItem};
pub use sim::{inject_partition, run_scenario, seeded_dataset, seeded_identity, ClientOutcome, RequestId, SimReport, Simulation};
pub use trace::{to_ndjson, ClientResult, DropReason, LookupMetric, MessageStats, Metrics, TraceEvent, TraceRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
}
