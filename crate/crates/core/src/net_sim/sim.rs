use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

use super::config::{ChurnAction, ChurnEvent, ClientAction, PartitionEvent, Scenario, SimConfig};
use super::trace::{ClientResult, DropReason, LookupMetric, MessageStats, Metrics, TraceEvent, TraceRecord};
use super::SimError;
use crate::dataset::{sign_dataset, GlobalDataset, SignedDataset, UserIdEntry};
use crate::dht::message::{self, Body};
use crate::dht::{Contact, DhtNode, Key, NodeId, OpId, OpResult, Output, Timer};
use crate::guid::{generate_identity, GuidIdentity, GuidParams};

pub type RequestId = u64;

#[derive(Debug, Clone)]
enum Event {
    Deliver { from: usize, to: usize, rpc_id: u64, kind: &'static str, frame: Vec<u8> },
    Timer { node: usize, generation: u32, timer: Timer },
    Bootstrap { node: usize },
    Churn(ChurnEvent),
    Partition(Vec<Vec<usize>>),
    LiftPartition,
    Client { request: RequestId, node: usize, action: ClientAction },
}

#[derive(Debug, Clone)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Clone)]
struct SimNode {
    node: DhtNode,
    alive: bool,
    generation: u32,
}

/// Outcome of one client request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientOutcome {
    pub request: RequestId,
    pub node: usize,
    pub op: &'static str,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub rounds: u32,
    pub rpcs: u32,
    pub result: ClientResult,
}

#[derive(Clone)]
struct Running {
    request: RequestId,
    op: &'static str,
    started_ms: u64,
}

/// Deterministic discrete-event network of [`DhtNode`]s in virtual time.
///
/// Every message is encoded to its wire frame on send and decoded on
/// delivery. Loss and latency are drawn from a generator keyed by
/// `(seed, sender, rpc_id, direction)` so adding or removing unrelated traffic
/// never changes the fate of a given message.
///
/// Cloning forks the run; each copy continues on its own, deterministically.
#[derive(Clone)]
pub struct Simulation {
    config: SimConfig,
    nodes: Vec<SimNode>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now: u64,
    id_rng: ChaCha8Rng,
    partition: Option<Vec<usize>>,
    trace: Vec<TraceRecord>,
    stats: MessageStats,
    running: BTreeMap<(usize, OpId), Running>,
    outcomes: BTreeMap<RequestId, ClientOutcome>,
    next_request: RequestId,
}

fn address(index: usize) -> String {
    format!("sim:{index}")
}

fn parse_address(address: &str) -> Option<usize> {
    address.strip_prefix("sim:")?.parse().ok()
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Identity used by seeded workload actions.
pub fn seeded_identity(seed: u64, params: &GuidParams) -> GuidIdentity {
    generate_identity(&mut ChaCha20Rng::seed_from_u64(seed), params).expect("seeded rng never runs dry")
}

/// Signed dataset used by seeded workload actions.
pub fn seeded_dataset(seed: u64, version: u64, user_ids: &[UserIdEntry], params: &GuidParams) -> SignedDataset {
    let identity = seeded_identity(seed, params);
    let user_ids = if user_ids.is_empty() {
        vec![UserIdEntry::new(format!("user://sim.example/u{seed}"), "http://registry.sim.example")]
    } else {
        user_ids.to_vec()
    };
    let dataset = GlobalDataset::new(&identity, user_ids, version, version).expect("well-formed entries");
    sign_dataset(&dataset, identity.signing_key(), params).expect("own key")
}

impl Simulation {
    /// Creates the network and schedules the bootstrap joins, churn and
    /// partitions from `config`. Node 0 starts alone; node `i` joins through
    /// node 0 at `i * join_spacing_ms`.
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut sim = Simulation {
            nodes: Vec::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            id_rng: ChaCha8Rng::seed_from_u64(config.seed),
            partition: None,
            trace: Vec::new(),
            stats: MessageStats::default(),
            running: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            next_request: 0,
            config,
        };
        for i in 0..sim.config.node_count {
            sim.spawn_node();
            if i > 0 {
                sim.schedule(i as u64 * sim.config.join_spacing_ms, Event::Bootstrap { node: i });
            }
        }
        let epoch = sim.config.epoch_ms();
        for event in sim.config.churn_events.clone() {
            sim.schedule(epoch + event.time_ms, Event::Churn(event));
        }
        for partition in sim.config.partitions.clone() {
            sim.schedule(epoch + partition.time_ms, Event::Partition(partition.groups));
            if let Some(lift) = partition.lift_ms {
                sim.schedule(epoch + lift, Event::LiftPartition);
            }
        }
        Ok(sim)
    }

    fn spawn_node(&mut self) -> usize {
        let index = self.nodes.len();
        let id = NodeId::random(&mut self.id_rng);
        let node = DhtNode::new(id, address(index), self.config.dht.clone());
        self.nodes.push(SimNode { node, alive: true, generation: 0 });
        index
    }

    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { at, seq: self.seq, event }));
    }

    fn record(&mut self, event: TraceEvent) {
        self.trace.push(TraceRecord { t: self.now, event });
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn epoch(&self) -> u64 {
        self.config.epoch_ms()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, index: usize) -> &DhtNode {
        &self.nodes[index].node
    }

    pub fn node_mut(&mut self, index: usize) -> &mut DhtNode {
        &mut self.nodes[index].node
    }

    pub fn is_alive(&self, index: usize) -> bool {
        self.nodes[index].alive
    }

    /// Ids of all running nodes, by index.
    pub fn live_nodes(&self) -> Vec<(usize, NodeId)> {
        self.nodes.iter().enumerate().filter(|(_, n)| n.alive).map(|(i, n)| (i, n.node.id())).collect()
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| n.node.id() == *id)
    }

    /// Running nodes currently holding an unexpired record under `key`.
    pub fn holders(&self, key: &Key) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.alive && n.node.records().get(key, self.now).is_some())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn outcome(&self, request: RequestId) -> Option<&ClientOutcome> {
        self.outcomes.get(&request)
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &ClientOutcome> {
        self.outcomes.values()
    }

    /// Queues a client request at absolute time `at` (clamped to now).
    pub fn submit_at(&mut self, at: u64, node: usize, action: ClientAction) -> RequestId {
        let request = self.next_request;
        self.next_request += 1;
        self.schedule(at.max(self.now), Event::Client { request, node, action });
        request
    }

    /// Stops `node` immediately without notifying anyone.
    pub fn crash(&mut self, node: usize) {
        self.apply_churn(ChurnEvent { time_ms: 0, action: ChurnAction::Crash, node_index: node });
    }

    /// Applies a churn event immediately.
    pub fn apply_churn(&mut self, event: ChurnEvent) {
        self.record(TraceEvent::Churn { node: event.node_index, action: event.action });
        match event.action {
            ChurnAction::Crash => self.stop(event.node_index),
            ChurnAction::Leave => {
                if self.nodes[event.node_index].alive {
                    let now = self.now;
                    self.nodes[event.node_index].node.leave(now);
                    self.flush(event.node_index);
                }
                self.stop(event.node_index);
            }
            ChurnAction::Join => {
                let index = event.node_index;
                if index == self.nodes.len() {
                    self.spawn_node();
                } else if !self.nodes[index].alive {
                    let id = self.nodes[index].node.id();
                    let generation = self.nodes[index].generation + 1;
                    self.nodes[index] = SimNode { node: DhtNode::new(id, address(index), self.config.dht.clone()), alive: true, generation };
                } else {
                    return;
                }
                self.bootstrap(index);
            }
        }
    }

    fn stop(&mut self, node: usize) {
        let sim_node = &mut self.nodes[node];
        if !sim_node.alive {
            return;
        }
        sim_node.alive = false;
        sim_node.generation += 1;
        let aborted: Vec<(usize, OpId)> = self.running.keys().filter(|(n, _)| *n == node).copied().collect();
        for key in aborted {
            let running = self.running.remove(&key).expect("present");
            self.finish_request(node, running, 0, 0, ClientResult::Aborted { reason: "node stopped".into() });
        }
    }

    /// Replaces the partition state immediately.
    pub fn set_partition(&mut self, groups: Option<Vec<Vec<usize>>>) {
        match groups {
            Some(groups) => {
                let mut assignment = vec![groups.len(); self.nodes.len()];
                for (g, members) in groups.iter().enumerate() {
                    for &m in members {
                        if m < assignment.len() {
                            assignment[m] = g;
                        }
                    }
                }
                self.record(TraceEvent::Partition { groups });
                self.partition = Some(assignment);
            }
            None => {
                self.record(TraceEvent::PartitionLifted);
                self.partition = None;
            }
        }
    }

    fn separated(&self, a: usize, b: usize) -> bool {
        match &self.partition {
            // nodes added after the partition started fall in the implicit group
            Some(groups) => {
                let implicit = groups.iter().copied().max().unwrap_or(0);
                groups.get(a).copied().unwrap_or(implicit) != groups.get(b).copied().unwrap_or(implicit)
            }
            None => false,
        }
    }

    fn bootstrap(&mut self, node: usize) {
        let via = (0..self.nodes.len()).find(|&i| i != node && self.nodes[i].alive);
        if let Some(via) = via {
            let contact = self.nodes[via].node.contact().clone();
            let now = self.now;
            self.nodes[node].node.join(now, contact);
            self.flush(node);
        }
    }

    /// Processes the next event. Returns false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(Reverse(next)) = self.queue.pop() else {
            return false;
        };
        debug_assert!(next.at >= self.now);
        self.now = next.at;
        match next.event {
            Event::Deliver { from, to, rpc_id, kind, frame } => self.deliver(from, to, rpc_id, kind, &frame),
            Event::Timer { node, generation, timer } => {
                let target = &mut self.nodes[node];
                if target.alive && target.generation == generation {
                    target.node.handle_timer(next.at, timer);
                    self.flush(node);
                }
            }
            Event::Bootstrap { node } => {
                if self.nodes[node].alive {
                    self.bootstrap(node);
                }
            }
            Event::Churn(event) => self.apply_churn(event),
            Event::Partition(groups) => self.set_partition(Some(groups)),
            Event::LiftPartition => self.set_partition(None),
            Event::Client { request, node, action } => self.start_request(request, node, action),
        }
        true
    }

    /// Processes every event scheduled at or before `t` and advances the
    /// clock to `t`.
    pub fn run_until(&mut self, t: u64) {
        while self.queue.peek().is_some_and(|Reverse(s)| s.at <= t) {
            self.step();
        }
        self.now = self.now.max(t);
    }

    /// Runs until `request` has an outcome.
    pub fn run_request(&mut self, request: RequestId) -> &ClientOutcome {
        while !self.outcomes.contains_key(&request) {
            assert!(self.step(), "queue drained before request {request} completed");
        }
        &self.outcomes[&request]
    }

    /// Submits `action` at the current time and runs until it completes.
    pub fn execute(&mut self, node: usize, action: ClientAction) -> ClientOutcome {
        let request = self.submit_at(self.now, node, action);
        self.run_request(request).clone()
    }

    fn deliver(&mut self, from: usize, to: usize, rpc_id: u64, kind: &'static str, frame: &[u8]) {
        self.stats.delivered += 1;
        let handled = self.nodes[to].alive;
        self.record(TraceEvent::Deliver { from, to, rpc_id, kind: kind.into(), handled });
        if !handled {
            return;
        }
        let (envelope, _) = message::decode(frame).expect("simulator frames are well formed");
        let stored = match &envelope.body {
            Body::Store { key, jwt, .. } => Some((*key, jwt.clone())),
            _ => None,
        };
        let now = self.now;
        self.nodes[to].node.handle_message(now, envelope);
        if let Some((key, jwt)) = stored {
            self.note_stored(to, &key, &jwt);
        }
        self.flush(to);
    }

    fn note_stored(&mut self, node: usize, key: &Key, jwt: &str) {
        let record = self.nodes[node].node.records().get(key, self.now);
        if let Some(record) = record.filter(|r| r.jwt == jwt) {
            let version = record.version;
            let key = crate::guid::Guid::from_digest(&key.0).to_string();
            self.record(TraceEvent::Stored { node, key, version });
        }
    }

    /// Routes everything `node` produced since the last flush.
    fn flush(&mut self, node: usize) {
        let generation = self.nodes[node].generation;
        for output in self.nodes[node].node.drain_outputs() {
            match output {
                Output::Send { to, envelope } => self.send(node, &to, envelope),
                Output::Timer { at_ms, timer } => self.schedule(at_ms, Event::Timer { node, generation, timer }),
                Output::Done(outcome) => {
                    let Some(running) = self.running.remove(&(node, outcome.op)) else {
                        if let OpResult::Joined = outcome.result {
                            let id = self.nodes[node].node.id().to_hex();
                            self.record(TraceEvent::Joined { node, id });
                        }
                        continue;
                    };
                    let result = match outcome.result {
                        OpResult::Nodes(contacts) => ClientResult::Nodes { ids: contacts.iter().map(|c| c.id.to_hex()).collect() },
                        OpResult::Stored { holders } => ClientResult::Stored { holders: holders.iter().map(NodeId::to_hex).collect() },
                        OpResult::Value(Ok(Some(signed))) => match signed.peek() {
                            Ok(ds) => ClientResult::Found { guid: ds.guid.to_string(), version: ds.version, jwt: signed.as_str().into() },
                            Err(_) => ClientResult::IntegrityError,
                        },
                        OpResult::Value(Ok(None)) => ClientResult::NotFound,
                        OpResult::Value(Err(_)) => ClientResult::IntegrityError,
                        OpResult::Joined => ClientResult::Stored { holders: Vec::new() },
                    };
                    self.finish_request(node, running, outcome.rounds, outcome.rpcs, result);
                }
            }
        }
    }

    fn send(&mut self, from: usize, to: &Contact, envelope: message::Envelope) {
        let Some(to) = parse_address(&to.address).filter(|&i| i < self.nodes.len()) else {
            return;
        };
        let rpc_id = envelope.rpc_id;
        let kind = envelope.body.kind();
        let direction = envelope.body.is_response() as u64;
        self.stats.sent += 1;
        self.record(TraceEvent::Send { from, to, rpc_id, kind: kind.into() });
        if self.separated(from, to) {
            self.stats.dropped_partition += 1;
            self.record(TraceEvent::Drop { from, to, rpc_id, kind: kind.into(), reason: DropReason::Partition });
            return;
        }
        let stream = mix(self.config.seed ^ mix((from as u64) << 1 | direction) ^ mix(rpc_id.wrapping_add(0x9e3779b97f4a7c15)));
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let lost = rng.gen_bool(self.config.loss_rate.clamp(0.0, 1.0));
        let latency = rng.gen_range(self.config.latency.min_ms..=self.config.latency.max_ms);
        if lost {
            self.stats.dropped_loss += 1;
            self.record(TraceEvent::Drop { from, to, rpc_id, kind: kind.into(), reason: DropReason::Loss });
            return;
        }
        let frame = message::encode(&envelope);
        self.schedule(self.now + latency, Event::Deliver { from, to, rpc_id, kind, frame });
    }

    fn start_request(&mut self, request: RequestId, node: usize, action: ClientAction) {
        let op = action.name();
        self.record(TraceEvent::OpStart { request, node, op: op.into() });
        let running = Running { request, op, started_ms: self.now };
        if node >= self.nodes.len() || !self.nodes[node].alive {
            self.finish_request(node, running, 0, 0, ClientResult::Aborted { reason: "node not running".into() });
            return;
        }
        let params = self.config.dht.guid;
        let now = self.now;
        let dht = &mut self.nodes[node].node;
        let started = match action {
            ClientAction::Store { jwt } => Self::start_store(dht, now, &jwt),
            ClientAction::StoreSeeded { seed, version, user_ids } => {
                let signed = seeded_dataset(seed, version, &user_ids, &params);
                Self::start_store(dht, now, signed.as_str())
            }
            ClientAction::Get { guid } => match crate::guid::Guid::parse(&guid) {
                Ok(guid) => Ok(dht.get(now, Key::from_guid(&guid))),
                Err(e) => Err(e.to_string()),
            },
            ClientAction::GetSeeded { seed } => Ok(dht.get(now, Key::from_guid(seeded_identity(seed, &params).guid()))),
            ClientAction::FindNode { key } => Ok(dht.find_node(now, key)),
        };
        match started {
            Ok(op_id) => {
                self.running.insert((node, op_id), running);
                self.flush(node);
            }
            Err(reason) => self.finish_request(node, running, 0, 0, ClientResult::Rejected { reason }),
        }
    }

    fn start_store(dht: &mut DhtNode, now: u64, jwt: &str) -> Result<OpId, String> {
        let signed = SignedDataset::parse(jwt).map_err(|e| e.to_string())?;
        let key = signed.peek().map(|ds| Key::from_guid(&ds.guid)).map_err(|e| e.to_string())?;
        dht.store(now, key, &signed).map_err(|e| e.to_string())
    }

    fn finish_request(&mut self, node: usize, running: Running, rounds: u32, rpcs: u32, result: ClientResult) {
        self.record(TraceEvent::OpDone { request: running.request, node, rounds, rpcs, result: result.clone() });
        let outcome = ClientOutcome {
            request: running.request,
            node,
            op: running.op,
            started_ms: running.started_ms,
            finished_ms: self.now,
            rounds,
            rpcs,
            result,
        };
        self.outcomes.insert(running.request, outcome);
    }

    /// Message counters, with anything still queued reported as in flight.
    pub fn message_stats(&self) -> MessageStats {
        let mut stats = self.stats.clone();
        stats.in_flight = stats.sent - stats.delivered - stats.dropped_loss - stats.dropped_partition;
        stats
    }

    pub fn metrics(&self) -> Metrics {
        let lookups: Vec<LookupMetric> = self
            .outcomes
            .values()
            .map(|o| LookupMetric { request: o.request, op: o.op.into(), rounds: o.rounds, rpcs: o.rpcs, success: o.result.is_success() })
            .collect();
        let mean_rounds =
            if lookups.is_empty() { 0.0 } else { lookups.iter().map(|l| l.rounds as f64).sum::<f64>() / lookups.len() as f64 };
        let mut replica_counts = BTreeMap::new();
        for sim_node in self.nodes.iter().filter(|n| n.alive) {
            for record in sim_node.node.records().records().filter(|r| r.expires_at > self.now) {
                *replica_counts.entry(crate::guid::Guid::from_digest(&record.key.0).to_string()).or_insert(0) += 1;
            }
        }
        let ops_succeeded = lookups.iter().filter(|l| l.success).count();
        Metrics {
            messages: self.message_stats(),
            max_rounds: lookups.iter().map(|l| l.rounds).max().unwrap_or(0),
            ops_failed: lookups.len() - ops_succeeded,
            ops_succeeded,
            mean_rounds,
            lookups,
            replica_counts,
            final_time_ms: self.now,
        }
    }
}

/// Result of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct SimReport {
    pub trace: Vec<TraceRecord>,
    pub metrics: Metrics,
    /// Outcome per workload item, in workload order.
    pub outcomes: Vec<ClientOutcome>,
}

/// Runs a scenario from bootstrap to its horizon.
pub fn run_scenario(scenario: &Scenario) -> Result<SimReport, SimError> {
    scenario.validate()?;
    let mut sim = Simulation::new(scenario.config.clone())?;
    let epoch = sim.epoch();
    let requests: Vec<RequestId> =
        scenario.workload.iter().map(|item| sim.submit_at(epoch + item.time_ms, item.node_index, item.action.clone())).collect();
    let last = scenario
        .workload
        .iter()
        .map(|w| w.time_ms)
        .chain(scenario.config.churn_events.iter().map(|c| c.time_ms))
        .chain(scenario.config.partitions.iter().map(|p| p.lift_ms.unwrap_or(p.time_ms)))
        .max()
        .unwrap_or(0);
    let horizon = epoch + scenario.config.horizon_ms.unwrap_or(last + 120_000);
    sim.run_until(horizon);
    let outcomes = requests
        .iter()
        .map(|r| {
            sim.outcome(*r).cloned().unwrap_or_else(|| ClientOutcome {
                request: *r,
                node: 0,
                op: "unfinished",
                started_ms: 0,
                finished_ms: horizon,
                rounds: 0,
                rpcs: 0,
                result: ClientResult::Aborted { reason: "horizon reached".into() },
            })
        })
        .collect();
    Ok(SimReport { metrics: sim.metrics(), trace: sim.trace, outcomes })
}

/// Convenience for [`Scenario::inject_partition`].
pub fn inject_partition(scenario: Scenario, partition: PartitionEvent) -> Result<Scenario, SimError> {
    scenario.inject_partition(partition)
}
