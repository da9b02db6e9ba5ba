use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::dataset::UserIdEntry;
use crate::dht::{DhtConfig, NodeId};

fn default_join_spacing() -> u64 {
    20
}

fn default_settle() -> u64 {
    5_000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyRange {
    pub min_ms: u64,
    pub max_ms: u64,
}

impl Default for LatencyRange {
    fn default() -> Self {
        LatencyRange { min_ms: 10, max_ms: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnAction {
    /// Start a node: revive a stopped one, or add a new one when
    /// `node_index` equals the current node count.
    Join,
    /// Graceful: contacts are told to drop the node from their buckets.
    Leave,
    /// Silent stop.
    Crash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub time_ms: u64,
    pub action: ChurnAction,
    pub node_index: usize,
}

/// Splits the network into groups that cannot reach each other. Nodes not
/// listed in any group form one more implicit group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionEvent {
    pub time_ms: u64,
    pub groups: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift_ms: Option<u64>,
}

/// Simulation parameters. All `time_ms` values in churn, partition and
/// workload entries count from the end of the bootstrap phase
/// ([`SimConfig::epoch_ms`]); trace timestamps are absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub node_count: usize,
    #[serde(default)]
    pub latency: LatencyRange,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub churn_events: Vec<ChurnEvent>,
    #[serde(default)]
    pub partitions: Vec<PartitionEvent>,
    #[serde(default)]
    pub dht: DhtConfig,
    /// Gap between successive node joins during bootstrap.
    #[serde(default = "default_join_spacing")]
    pub join_spacing_ms: u64,
    /// Quiet period after the last bootstrap join.
    #[serde(default = "default_settle")]
    pub settle_ms: u64,
    /// Stop time relative to the epoch. Defaults to the last scheduled event
    /// plus two minutes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_ms: Option<u64>,
}

impl SimConfig {
    pub fn new(seed: u64, node_count: usize) -> Self {
        SimConfig {
            seed,
            node_count,
            latency: LatencyRange::default(),
            loss_rate: 0.0,
            churn_events: Vec::new(),
            partitions: Vec::new(),
            dht: DhtConfig::default(),
            join_spacing_ms: default_join_spacing(),
            settle_ms: default_settle(),
            horizon_ms: None,
        }
    }

    /// Absolute virtual time at which the bootstrap phase ends.
    pub fn epoch_ms(&self) -> u64 {
        self.node_count.saturating_sub(1) as u64 * self.join_spacing_ms + self.settle_ms
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        if self.node_count == 0 {
            return err("node_count must be at least 1".into());
        }
        if self.latency.min_ms > self.latency.max_ms {
            return err("latency.min_ms exceeds latency.max_ms".into());
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return err(format!("loss_rate {} outside [0, 1]", self.loss_rate));
        }
        if self.dht.k == 0 || self.dht.alpha == 0 {
            return err("dht.k and dht.alpha must be positive".into());
        }
        check_sorted(self.churn_events.iter().map(|e| e.time_ms), "churn_events")?;
        check_sorted(self.partitions.iter().map(|e| e.time_ms), "partitions")?;
        let mut count = self.node_count;
        for event in &self.churn_events {
            match event.action {
                ChurnAction::Join if event.node_index == count => count += 1,
                _ if event.node_index < count => {}
                _ => return err(format!("churn event references unknown node {}", event.node_index)),
            }
        }
        for partition in &self.partitions {
            check_groups(&partition.groups, count)?;
            if partition.lift_ms.is_some_and(|lift| lift < partition.time_ms) {
                return err("partition lifted before it starts".into());
            }
        }
        Ok(())
    }
}

pub(crate) fn check_sorted(times: impl Iterator<Item = u64>, what: &str) -> Result<(), SimError> {
    let mut last = 0;
    for t in times {
        if t < last {
            return Err(SimError::Config(format!("{what} not sorted by time")));
        }
        last = t;
    }
    Ok(())
}

pub(crate) fn check_groups(groups: &[Vec<usize>], node_count: usize) -> Result<(), SimError> {
    let mut seen = BTreeSet::new();
    for &node in groups.iter().flatten() {
        if node >= node_count {
            return Err(SimError::Config(format!("partition references unknown node {node}")));
        }
        if !seen.insert(node) {
            return Err(SimError::Config(format!("partition groups overlap at node {node}")));
        }
    }
    Ok(())
}

/// Client requests issued at a node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ClientAction {
    Store {
        jwt: String,
    },
    /// Generate the identity for `seed` and publish a dataset at `version`.
    StoreSeeded {
        seed: u64,
        version: u64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        user_ids: Vec<UserIdEntry>,
    },
    Get {
        guid: String,
    },
    /// Get the GUID belonging to the identity for `seed`.
    GetSeeded {
        seed: u64,
    },
    FindNode {
        key: NodeId,
    },
}

impl ClientAction {
    pub fn name(&self) -> &'static str {
        match self {
            ClientAction::Store { .. } | ClientAction::StoreSeeded { .. } => "store",
            ClientAction::Get { .. } | ClientAction::GetSeeded { .. } => "get",
            ClientAction::FindNode { .. } => "find_node",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadItem {
    pub time_ms: u64,
    #[serde(default)]
    pub node_index: usize,
    #[serde(flatten)]
    pub action: ClientAction,
}

/// Scenario file contents: a [`SimConfig`] plus a timed workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(flatten)]
    pub config: SimConfig,
    #[serde(default)]
    pub workload: Vec<WorkloadItem>,
}

impl Scenario {
    pub fn new(config: SimConfig, workload: Vec<WorkloadItem>) -> Self {
        Scenario { config, workload }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.config.validate()?;
        check_sorted(self.workload.iter().map(|w| w.time_ms), "workload")
    }

    /// Adds a partition to the scenario.
    pub fn inject_partition(mut self, partition: PartitionEvent) -> Result<Scenario, SimError> {
        let node_count = self.config.node_count
            + self.config.churn_events.iter().filter(|e| e.action == ChurnAction::Join && e.node_index >= self.config.node_count).count();
        check_groups(&partition.groups, node_count)?;
        let at = self.config.partitions.partition_point(|p| p.time_ms <= partition.time_ms);
        self.config.partitions.insert(at, partition);
        Ok(self)
    }
}
