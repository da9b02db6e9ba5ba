use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::ChurnAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Loss,
    Partition,
}

/// Final state of a client request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum ClientResult {
    Nodes { ids: Vec<String> },
    Stored { holders: Vec<String> },
    Found { guid: String, version: u64, jwt: String },
    NotFound,
    IntegrityError,
    Rejected { reason: String },
    Aborted { reason: String },
}

impl ClientResult {
    pub fn is_success(&self) -> bool {
        matches!(self, ClientResult::Nodes { .. } | ClientResult::Stored { .. } | ClientResult::Found { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Send { from: usize, to: usize, rpc_id: u64, kind: String },
    /// `handled` is false when the destination was not running.
    Deliver { from: usize, to: usize, rpc_id: u64, kind: String, handled: bool },
    Drop { from: usize, to: usize, rpc_id: u64, kind: String, reason: DropReason },
    Churn { node: usize, action: ChurnAction },
    Joined { node: usize, id: String },
    Partition { groups: Vec<Vec<usize>> },
    PartitionLifted,
    /// A node accepted a record.
    Stored { node: usize, key: String, version: u64 },
    OpStart { request: u64, node: usize, op: String },
    OpDone { request: u64, node: usize, rounds: u32, rpcs: u32, #[serde(flatten)] result: ClientResult },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_partition: u64,
    /// Sent but not yet resolved when the run stopped.
    pub in_flight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupMetric {
    pub request: u64,
    pub op: String,
    pub rounds: u32,
    pub rpcs: u32,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub messages: MessageStats,
    pub lookups: Vec<LookupMetric>,
    pub mean_rounds: f64,
    pub max_rounds: u32,
    /// Live nodes holding a record, per GUID.
    pub replica_counts: BTreeMap<String, usize>,
    pub ops_succeeded: usize,
    pub ops_failed: usize,
    pub final_time_ms: u64,
}

/// Serializes a trace as newline-delimited JSON.
pub fn to_ndjson(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for record in trace {
        out.push_str(&serde_json::to_string(record).expect("trace serializes"));
        out.push('\n');
    }
    out
}
