//! Sans-io Kademlia node.
//!
//! A [`DhtNode`] never touches a clock, a socket or an OS random source. The
//! driver feeds it inbound envelopes, fired timers and client requests
//! together with the current time, then drains [`Output`]s: messages to send,
//! timers to arm, and completed operations. Each node handles its inputs one
//! at a time; the simulator and the socket transport are both such drivers.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::id::{Distance, Key, NodeId, ID_BITS};
use super::message::{Body, Envelope};
use super::routing::{BucketUpdate, Contact, RoutingTable};
use super::store::{validate, RecordStore, StoreError};
use crate::dataset::{precedence, verify_dataset, SignedDataset};
use crate::guid::GuidParams;

pub type OpId = u64;

const HOUR_MS: u64 = 60 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DhtConfig {
    /// Bucket size and replication factor.
    pub k: usize,
    /// Parallel requests per lookup round.
    pub alpha: usize,
    pub rpc_timeout_ms: u64,
    pub record_ttl_ms: u64,
    /// Owners re-store what they published at this interval.
    pub republish_interval_ms: u64,
    /// Holders re-replicate what they hold at this interval.
    pub replicate_interval_ms: u64,
    pub guid: GuidParams,
}

impl Default for DhtConfig {
    fn default() -> Self {
        DhtConfig {
            k: 8,
            alpha: 3,
            rpc_timeout_ms: 500,
            record_ttl_ms: 24 * HOUR_MS,
            republish_interval_ms: 12 * HOUR_MS,
            replicate_interval_ms: HOUR_MS,
            guid: GuidParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "timer", content = "rpc_id", rename_all = "snake_case")]
pub enum Timer {
    RpcTimeout(u64),
    Republish,
    Replicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GetError {
    /// Values were found but none of them verified.
    Integrity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpResult {
    /// Closest responsive contacts, ascending distance; may include the node itself.
    Nodes(Vec<Contact>),
    /// Nodes that accepted the record.
    Stored { holders: Vec<NodeId> },
    /// Highest-precedence valid dataset among the closest nodes.
    Value(Result<Option<SignedDataset>, GetError>),
    Joined,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpOutcome {
    pub op: OpId,
    pub result: OpResult,
    /// Lookup rounds (request waves) used.
    pub rounds: u32,
    /// Requests sent on behalf of this operation.
    pub rpcs: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Send { to: Contact, envelope: Envelope },
    Timer { at_ms: u64, timer: Timer },
    Done(OpOutcome),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Probe {
    Fresh,
    InFlight,
    Responded,
    Failed,
}

#[derive(Debug, Clone)]
struct Candidate {
    contact: Contact,
    probe: Probe,
}

#[derive(Debug, Clone)]
enum Purpose {
    FindNode,
    Join,
    Refresh,
    Store { jwt: String, replica: bool },
    Get,
}

#[derive(Debug, Clone)]
struct Lookup {
    key: Key,
    find_value: bool,
    purpose: Purpose,
    report: bool,
    candidates: BTreeMap<Distance, Candidate>,
    in_flight: usize,
    rounds: u32,
    rpcs: u32,
    snapshot: Vec<NodeId>,
    values: Vec<String>,
}

#[derive(Debug, Clone)]
struct StorePhase {
    report: bool,
    pending: usize,
    holders: Vec<NodeId>,
    rounds: u32,
    rpcs: u32,
}

#[derive(Debug, Clone)]
enum Op {
    Lookup(Lookup),
    Store(StorePhase),
}

#[derive(Debug, Clone)]
enum RpcPurpose {
    Lookup(OpId),
    Store(OpId),
    EvictionCheck { bucket: usize, candidate: Contact },
}

#[derive(Debug, Clone)]
struct PendingRpc {
    to: Contact,
    purpose: RpcPurpose,
}

#[derive(Debug, Clone)]
pub struct DhtNode {
    me: Contact,
    config: DhtConfig,
    table: RoutingTable,
    records: RecordStore,
    /// Latest JWT this node published as owner, per key.
    owned: BTreeMap<Key, String>,
    pending: BTreeMap<u64, PendingRpc>,
    ops: BTreeMap<OpId, Op>,
    evicting: BTreeSet<usize>,
    next_rpc: u64,
    next_op: OpId,
    rng: ChaCha8Rng,
    republish_armed: bool,
    replicate_armed: bool,
    outputs: Vec<Output>,
}

impl DhtNode {
    pub fn new(id: NodeId, address: impl Into<String>, config: DhtConfig) -> Self {
        assert!(config.k > 0 && config.alpha > 0, "k and alpha must be positive");
        DhtNode {
            me: Contact::new(id, address),
            table: RoutingTable::new(id, config.k),
            records: RecordStore::new(),
            owned: BTreeMap::new(),
            pending: BTreeMap::new(),
            ops: BTreeMap::new(),
            evicting: BTreeSet::new(),
            next_rpc: 1,
            next_op: 1,
            rng: ChaCha8Rng::from_seed(id.0),
            republish_armed: false,
            replicate_armed: false,
            outputs: Vec::new(),
            config,
        }
    }

    pub fn id(&self) -> NodeId {
        self.me.id
    }

    pub fn contact(&self) -> &Contact {
        &self.me
    }

    pub fn config(&self) -> &DhtConfig {
        &self.config
    }

    pub fn routing_table(&self) -> &RoutingTable {
        &self.table
    }

    pub fn records(&self) -> &RecordStore {
        &self.records
    }

    pub fn records_mut(&mut self) -> &mut RecordStore {
        &mut self.records
    }

    pub fn drain_outputs(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.outputs)
    }

    pub fn has_pending_ops(&self) -> bool {
        !self.ops.is_empty()
    }

    fn alloc_op(&mut self) -> OpId {
        let op = self.next_op;
        self.next_op += 1;
        op
    }

    fn send(&mut self, now: u64, to: Contact, body: Body, purpose: Option<RpcPurpose>) -> u64 {
        let rpc_id = self.next_rpc;
        self.next_rpc += 1;
        if let Some(purpose) = purpose {
            self.pending.insert(rpc_id, PendingRpc { to: to.clone(), purpose });
            self.outputs.push(Output::Timer { at_ms: now + self.config.rpc_timeout_ms, timer: Timer::RpcTimeout(rpc_id) });
        }
        let envelope = Envelope { sender_node_id: self.me.id, sender_address: self.me.address.clone(), rpc_id, body };
        self.outputs.push(Output::Send { to, envelope });
        rpc_id
    }

    fn reply(&mut self, to: Contact, rpc_id: u64, body: Body) {
        let envelope = Envelope { sender_node_id: self.me.id, sender_address: self.me.address.clone(), rpc_id, body };
        self.outputs.push(Output::Send { to, envelope });
    }

    /// Routing-table maintenance for any message heard from `contact`.
    fn observe(&mut self, now: u64, contact: Contact) {
        if contact.id == self.me.id {
            return;
        }
        if let BucketUpdate::Full { least_recent } = self.table.update(contact.clone(), now) {
            let bucket = self.me.id.distance(&contact.id).bucket_index().expect("not self");
            if self.evicting.insert(bucket) {
                self.send(now, least_recent, Body::Ping, Some(RpcPurpose::EvictionCheck { bucket, candidate: contact }));
            }
        }
    }

    /// Processes one inbound message.
    pub fn handle_message(&mut self, now: u64, envelope: Envelope) {
        let sender = envelope.sender();
        if sender.id == self.me.id {
            return;
        }
        if envelope.body == Body::Leave {
            self.table.remove(&sender.id);
            return;
        }
        self.observe(now, sender.clone());
        let rpc_id = envelope.rpc_id;
        match envelope.body {
            Body::Ping => self.reply(sender, rpc_id, Body::Pong),
            Body::Store { key, jwt, replica } => {
                let accepted = self.accept_store(now, key, &jwt, replica);
                self.reply(sender, rpc_id, Body::StoreAck { accepted });
            }
            Body::FindNode { key } => {
                let contacts = self.closest_excluding(&key, &sender.id);
                self.reply(sender, rpc_id, Body::Nodes { contacts });
            }
            Body::FindValue { key } => {
                let jwt = self.records.get(&key, now).map(|r| r.jwt.clone());
                let contacts = self.closest_excluding(&key, &sender.id);
                self.reply(sender, rpc_id, Body::Value { jwt, contacts });
            }
            Body::Leave => unreachable!(),
            response => self.handle_response(now, sender, rpc_id, response),
        }
    }

    fn closest_excluding(&self, key: &Key, exclude: &NodeId) -> Vec<Contact> {
        let mut contacts = self.table.closest(key, self.config.k + 1);
        contacts.retain(|c| c.id != *exclude);
        contacts.truncate(self.config.k);
        contacts
    }

    fn accept_store(&mut self, now: u64, key: Key, jwt: &str, replica: bool) -> bool {
        match self.records.put(key, jwt, now, self.config.record_ttl_ms, replica, &self.config.guid) {
            Ok(outcome) => {
                if outcome.accepted() && !self.replicate_armed {
                    self.replicate_armed = true;
                    self.outputs.push(Output::Timer { at_ms: now + self.config.replicate_interval_ms, timer: Timer::Replicate });
                }
                outcome.accepted()
            }
            Err(_) => false,
        }
    }

    fn handle_response(&mut self, now: u64, from: Contact, rpc_id: u64, body: Body) {
        let Some(pending) = self.pending.get(&rpc_id) else {
            return;
        };
        if pending.to.id != from.id {
            return;
        }
        let pending = self.pending.remove(&rpc_id).expect("checked");
        match (pending.purpose, body) {
            (RpcPurpose::EvictionCheck { bucket, .. }, Body::Pong) => {
                // still alive: it was refreshed by observe(); the newcomer is dropped
                self.evicting.remove(&bucket);
            }
            (RpcPurpose::Lookup(op), Body::Nodes { contacts }) => self.lookup_response(now, op, &from, contacts, None),
            (RpcPurpose::Lookup(op), Body::Value { jwt, contacts }) => self.lookup_response(now, op, &from, contacts, jwt),
            (RpcPurpose::Store(op), Body::StoreAck { accepted }) => self.store_response(op, &from, accepted),
            (purpose, _) => self.rpc_failed(now, &from, purpose),
        }
    }

    /// Processes a fired timer.
    pub fn handle_timer(&mut self, now: u64, timer: Timer) {
        match timer {
            Timer::RpcTimeout(rpc_id) => {
                if let Some(pending) = self.pending.remove(&rpc_id) {
                    self.rpc_failed(now, &pending.to, pending.purpose);
                }
            }
            Timer::Republish => {
                let owned: Vec<(Key, String)> = self.owned.iter().map(|(k, v)| (*k, v.clone())).collect();
                for (key, jwt) in owned {
                    self.start_lookup(now, key, false, Purpose::Store { jwt, replica: false }, false);
                }
                self.outputs.push(Output::Timer { at_ms: now + self.config.republish_interval_ms, timer: Timer::Republish });
            }
            Timer::Replicate => {
                self.records.expire(now);
                let held: Vec<(Key, String)> = self
                    .records
                    .records()
                    .filter(|r| !self.owned.contains_key(&r.key))
                    .map(|r| (r.key, r.jwt.clone()))
                    .collect();
                for (key, jwt) in held {
                    self.start_lookup(now, key, false, Purpose::Store { jwt, replica: true }, false);
                }
                if self.records.is_empty() {
                    self.replicate_armed = false;
                } else {
                    self.outputs.push(Output::Timer { at_ms: now + self.config.replicate_interval_ms, timer: Timer::Replicate });
                }
            }
        }
    }

    fn rpc_failed(&mut self, now: u64, to: &Contact, purpose: RpcPurpose) {
        match purpose {
            RpcPurpose::EvictionCheck { bucket, candidate } => {
                self.evicting.remove(&bucket);
                self.table.evict_and_insert(&to.id, candidate, now);
            }
            RpcPurpose::Lookup(op) => {
                self.table.remove(&to.id);
                self.lookup_failure(now, op, to);
            }
            RpcPurpose::Store(op) => {
                self.table.remove(&to.id);
                self.store_response(op, to, false);
            }
        }
    }

    /// Starts an iterative FIND_NODE for `key`; completes with [`OpResult::Nodes`].
    pub fn find_node(&mut self, now: u64, key: Key) -> OpId {
        self.start_lookup(now, key, false, Purpose::FindNode, true)
    }

    /// Validates `signed` and stores it on the k closest nodes to `key`.
    /// Invalid input is rejected before any message is sent.
    pub fn store(&mut self, now: u64, key: Key, signed: &SignedDataset) -> Result<OpId, StoreError> {
        let dataset = validate(&key, signed, &self.config.guid)?;
        let newer = match self.owned.get(&key).and_then(|jwt| SignedDataset::parse(jwt).ok()) {
            Some(prev) => match verify_dataset(&prev, &self.config.guid) {
                Ok(prev_ds) => precedence((&dataset, signed), (&prev_ds, &prev)).is_ge(),
                Err(_) => true,
            },
            None => true,
        };
        if newer {
            self.owned.insert(key, signed.as_str().to_string());
        }
        if !self.republish_armed {
            self.republish_armed = true;
            self.outputs.push(Output::Timer { at_ms: now + self.config.republish_interval_ms, timer: Timer::Republish });
        }
        Ok(self.start_lookup(now, key, false, Purpose::Store { jwt: signed.as_str().to_string(), replica: false }, true))
    }

    /// Looks up `key` on the k closest nodes; completes with [`OpResult::Value`].
    pub fn get(&mut self, now: u64, key: Key) -> OpId {
        self.start_lookup(now, key, true, Purpose::Get, true)
    }

    /// Joins through `bootstrap`: self-lookup, then refresh of the buckets
    /// beyond the nearest neighbour.
    pub fn join(&mut self, now: u64, bootstrap: Contact) -> OpId {
        self.table.update(bootstrap, now);
        self.start_lookup(now, self.me.id, false, Purpose::Join, true)
    }

    /// Announces a graceful departure to every known contact and drops all
    /// in-progress work.
    pub fn leave(&mut self, now: u64) {
        let contacts: Vec<Contact> = self.table.contacts().cloned().collect();
        for contact in contacts {
            self.send(now, contact, Body::Leave, None);
        }
        self.ops.clear();
        self.pending.clear();
    }

    fn start_lookup(&mut self, now: u64, key: Key, find_value: bool, purpose: Purpose, report: bool) -> OpId {
        let op = self.alloc_op();
        let mut candidates = BTreeMap::new();
        for contact in self.table.closest(&key, self.config.k) {
            candidates.insert(contact.id.distance(&key), Candidate { contact, probe: Probe::Fresh });
        }
        candidates.insert(self.me.id.distance(&key), Candidate { contact: self.me.clone(), probe: Probe::Responded });
        let mut values = Vec::new();
        if find_value {
            if let Some(record) = self.records.get(&key, now) {
                values.push(record.jwt.clone());
            }
        }
        let lookup = Lookup { key, find_value, purpose, report, candidates, in_flight: 0, rounds: 0, rpcs: 0, snapshot: Vec::new(), values };
        self.ops.insert(op, Op::Lookup(lookup));
        self.advance(now, op);
        op
    }

    fn top_k(lookup: &Lookup, k: usize) -> impl Iterator<Item = &Candidate> {
        lookup.candidates.values().filter(|c| c.probe != Probe::Failed).take(k)
    }

    fn advance(&mut self, now: u64, op: OpId) {
        let k = self.config.k;
        let alpha = self.config.alpha;
        let Some(Op::Lookup(lookup)) = self.ops.get_mut(&op) else {
            return;
        };
        if lookup.in_flight > 0 {
            return;
        }
        let top: Vec<NodeId> = Self::top_k(lookup, k).map(|c| c.contact.id).collect();
        let improved = lookup.rounds == 0 || top != lookup.snapshot;
        let fresh: Vec<Distance> =
            lookup.candidates.iter().filter(|(_, c)| c.probe != Probe::Failed).take(k).filter(|(_, c)| c.probe == Probe::Fresh).map(|(d, _)| *d).collect();
        if fresh.is_empty() {
            self.finish(now, op);
            return;
        }
        // improving rounds query alpha contacts; a stalled round queries every
        // unqueried contact among the k closest before giving up
        let batch: Vec<Distance> = if improved { fresh.into_iter().take(alpha).collect() } else { fresh };
        lookup.snapshot = top;
        lookup.rounds += 1;
        let body = if lookup.find_value { Body::FindValue { key: lookup.key } } else { Body::FindNode { key: lookup.key } };
        let mut targets = Vec::with_capacity(batch.len());
        for d in batch {
            let candidate = lookup.candidates.get_mut(&d).expect("present");
            candidate.probe = Probe::InFlight;
            targets.push(candidate.contact.clone());
        }
        lookup.in_flight += targets.len();
        lookup.rpcs += targets.len() as u32;
        for to in targets {
            self.send(now, to, body.clone(), Some(RpcPurpose::Lookup(op)));
        }
    }

    fn lookup_response(&mut self, now: u64, op: OpId, from: &Contact, contacts: Vec<Contact>, jwt: Option<String>) {
        let me = self.me.id;
        let Some(Op::Lookup(lookup)) = self.ops.get_mut(&op) else {
            return;
        };
        let key = lookup.key;
        if let Some(c) = lookup.candidates.get_mut(&from.id.distance(&key)) {
            c.probe = Probe::Responded;
        }
        lookup.in_flight -= 1;
        if let Some(jwt) = jwt {
            lookup.values.push(jwt);
        }
        for contact in contacts {
            if contact.id == me {
                continue;
            }
            lookup.candidates.entry(contact.id.distance(&key)).or_insert(Candidate { contact, probe: Probe::Fresh });
        }
        if lookup.in_flight == 0 {
            self.advance(now, op);
        }
    }

    fn lookup_failure(&mut self, now: u64, op: OpId, to: &Contact) {
        let Some(Op::Lookup(lookup)) = self.ops.get_mut(&op) else {
            return;
        };
        if let Some(c) = lookup.candidates.get_mut(&to.id.distance(&lookup.key)) {
            c.probe = Probe::Failed;
        }
        lookup.in_flight -= 1;
        if lookup.in_flight == 0 {
            self.advance(now, op);
        }
    }

    fn finish(&mut self, now: u64, op: OpId) {
        let Some(Op::Lookup(lookup)) = self.ops.remove(&op) else {
            return;
        };
        let k = self.config.k;
        let closest: Vec<Contact> = Self::top_k(&lookup, k).map(|c| c.contact.clone()).collect();
        let (rounds, rpcs, report) = (lookup.rounds, lookup.rpcs, lookup.report);
        match lookup.purpose {
            Purpose::FindNode => self.done(report, op, OpResult::Nodes(closest), rounds, rpcs),
            Purpose::Refresh => {}
            Purpose::Join => {
                self.refresh_buckets(now);
                self.done(report, op, OpResult::Joined, rounds, rpcs);
            }
            Purpose::Get => {
                let result = self.pick_value(&lookup.key, &lookup.values);
                self.done(report, op, OpResult::Value(result), rounds, rpcs);
            }
            Purpose::Store { jwt, replica } => {
                let mut phase = StorePhase { report, pending: 0, holders: Vec::new(), rounds, rpcs };
                for contact in closest {
                    if contact.id == self.me.id {
                        if self.accept_store(now, lookup.key, &jwt, replica) {
                            phase.holders.push(self.me.id);
                        }
                    } else {
                        phase.pending += 1;
                        phase.rpcs += 1;
                        self.send(now, contact, Body::Store { key: lookup.key, jwt: jwt.clone(), replica }, Some(RpcPurpose::Store(op)));
                    }
                }
                if phase.pending == 0 {
                    self.done(phase.report, op, OpResult::Stored { holders: phase.holders }, phase.rounds, phase.rpcs);
                } else {
                    self.ops.insert(op, Op::Store(phase));
                }
            }
        }
    }

    fn store_response(&mut self, op: OpId, from: &Contact, accepted: bool) {
        let Some(Op::Store(phase)) = self.ops.get_mut(&op) else {
            return;
        };
        if accepted {
            phase.holders.push(from.id);
        }
        phase.pending -= 1;
        if phase.pending == 0 {
            let Some(Op::Store(phase)) = self.ops.remove(&op) else { unreachable!() };
            self.done(phase.report, op, OpResult::Stored { holders: phase.holders }, phase.rounds, phase.rpcs);
        }
    }

    fn done(&mut self, report: bool, op: OpId, result: OpResult, rounds: u32, rpcs: u32) {
        if report {
            self.outputs.push(Output::Done(OpOutcome { op, result, rounds, rpcs }));
        }
    }

    fn pick_value(&self, key: &Key, values: &[String]) -> Result<Option<SignedDataset>, GetError> {
        if values.is_empty() {
            return Ok(None);
        }
        let mut best: Option<(crate::dataset::GlobalDataset, SignedDataset)> = None;
        for jwt in values {
            let Ok(signed) = SignedDataset::parse(jwt) else { continue };
            let Ok(dataset) = verify_dataset(&signed, &self.config.guid) else { continue };
            if dataset.guid.digest() != key.0 {
                continue;
            }
            let better = match &best {
                Some((bd, bs)) => precedence((&dataset, &signed), (bd, bs)).is_gt(),
                None => true,
            };
            if better {
                best = Some((dataset, signed));
            }
        }
        match best {
            Some((_, signed)) => Ok(Some(signed)),
            None => Err(GetError::Integrity),
        }
    }

    fn refresh_buckets(&mut self, now: u64) {
        let Some(nearest) = self.table.nearest_bucket() else {
            return;
        };
        for bucket in nearest + 1..ID_BITS {
            let target = self.me.id.random_in_bucket(bucket, &mut self.rng);
            self.start_lookup(now, target, false, Purpose::Refresh, false);
        }
    }
}
