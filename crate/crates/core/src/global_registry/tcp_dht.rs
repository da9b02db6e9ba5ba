use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::{self, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use super::{DhtError, DhtHandle};
use crate::dataset::SignedDataset;
use crate::dht::message::{decode, encode, frame_len};
use crate::dht::{Body, DhtConfig, DhtNode, Envelope, GetError, Key, NodeId, OpId, OpResult, Output, StoreError, Timer};

const CONNECT_TIMEOUT: Duration = Duration::from_millis(500);
const BOOTSTRAP_RETRY: Duration = Duration::from_secs(2);
/// Bootstrap pings use rpc ids from the top of the range, which the node's
/// own counter never reaches.
const PROBE_RPC_BASE: u64 = u64::MAX - (1 << 16);

#[derive(Debug, Clone)]
pub struct TcpDhtConfig {
    pub bind: SocketAddr,
    /// Address other nodes should dial; defaults to the bound address.
    pub advertise: Option<String>,
    /// `host:port` of nodes already in the network.
    pub bootstrap: Vec<String>,
    pub dht: DhtConfig,
    /// Random when absent.
    pub id: Option<NodeId>,
    /// How long a store or get may take end to end.
    pub request_timeout: Duration,
}

impl TcpDhtConfig {
    pub fn new(bind: SocketAddr) -> Self {
        TcpDhtConfig { bind, advertise: None, bootstrap: Vec::new(), dht: DhtConfig::default(), id: None, request_timeout: Duration::from_secs(30) }
    }
}

enum Event {
    Inbound(Envelope),
    Find { key: Key, reply: mpsc::Sender<OpResult> },
    Store { key: Key, signed: SignedDataset, reply: mpsc::Sender<Result<OpResult, StoreError>> },
    Get { key: Key, reply: mpsc::Sender<OpResult> },
    Inspect { f: Box<dyn FnOnce(&DhtNode) + Send> },
    Shutdown,
}

/// One DHT node speaking the frame protocol over TCP.
///
/// The node logic is the same [`DhtNode`] the simulator drives; this type
/// supplies sockets, a wall clock and timers. Each peer gets its own writer
/// thread and connection, so a slow peer never stalls the node.
pub struct TcpDht {
    tx: Mutex<mpsc::Sender<Event>>,
    id: NodeId,
    address: String,
    local_addr: SocketAddr,
    request_timeout: Duration,
    stopping: Arc<AtomicBool>,
    inbound: Arc<Mutex<Vec<TcpStream>>>,
    node_thread: Option<JoinHandle<()>>,
    accept_thread: Option<JoinHandle<()>>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl TcpDht {
    pub fn start(config: TcpDhtConfig) -> io::Result<TcpDht> {
        let listener = TcpListener::bind(config.bind)?;
        let local_addr = listener.local_addr()?;
        let address = config.advertise.clone().unwrap_or_else(|| local_addr.to_string());
        let id = config.id.unwrap_or_else(|| NodeId::random(&mut rand::thread_rng()));
        let node = DhtNode::new(id, address.clone(), config.dht.clone());

        let (tx, rx) = mpsc::channel();
        let stopping = Arc::new(AtomicBool::new(false));
        let inbound = Arc::new(Mutex::new(Vec::new()));

        let accept_thread = {
            let (tx, stopping, inbound) = (tx.clone(), stopping.clone(), inbound.clone());
            std::thread::Builder::new().name(format!("dht-accept-{local_addr}")).spawn(move || accept(listener, tx, stopping, inbound))?
        };
        let bootstrap = config.bootstrap.clone();
        let node_thread = std::thread::Builder::new().name(format!("dht-node-{local_addr}")).spawn(move || Driver::new(node, bootstrap).run(rx))?;

        Ok(TcpDht {
            tx: Mutex::new(tx),
            id,
            address,
            local_addr,
            request_timeout: config.request_timeout,
            stopping,
            inbound,
            node_thread: Some(node_thread),
            accept_thread: Some(accept_thread),
        })
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    /// The address advertised to peers.
    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    fn send(&self, event: Event) -> Result<(), DhtError> {
        let tx = self.tx.lock().unwrap_or_else(|p| p.into_inner());
        tx.send(event).map_err(|_| DhtError::Unavailable("node stopped".into()))
    }

    fn wait<T>(&self, rx: mpsc::Receiver<T>) -> Result<T, DhtError> {
        rx.recv_timeout(self.request_timeout).map_err(|e| match e {
            mpsc::RecvTimeoutError::Timeout => DhtError::Unavailable("request timed out".into()),
            mpsc::RecvTimeoutError::Disconnected => DhtError::Unavailable("node stopped".into()),
        })
    }

    /// Iterative FIND_NODE from this node.
    pub fn find_node(&self, key: Key) -> Result<Vec<NodeId>, DhtError> {
        let (reply, rx) = mpsc::channel();
        self.send(Event::Find { key, reply })?;
        match self.wait(rx)? {
            OpResult::Nodes(contacts) => Ok(contacts.into_iter().map(|c| c.id).collect()),
            other => Err(DhtError::Unavailable(format!("unexpected result {other:?}"))),
        }
    }

    /// Runs `f` against the node's current state.
    pub fn inspect<T: Send + 'static>(&self, f: impl FnOnce(&DhtNode) -> T + Send + 'static) -> Result<T, DhtError> {
        let (reply, rx) = mpsc::channel();
        self.send(Event::Inspect {
            f: Box::new(move |node| {
                let _ = reply.send(f(node));
            }),
        })?;
        self.wait(rx)
    }
}

impl Drop for TcpDht {
    fn drop(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        let _ = self.send(Event::Shutdown);
        // wake the accept loop
        let _ = TcpStream::connect_timeout(&self.local_addr, CONNECT_TIMEOUT);
        for stream in self.inbound.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            let _ = stream.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        if let Some(t) = self.node_thread.take() {
            let _ = t.join();
        }
    }
}

impl DhtHandle for TcpDht {
    fn store(&self, key: Key, signed: &SignedDataset) -> Result<Vec<String>, DhtError> {
        let (reply, rx) = mpsc::channel();
        self.send(Event::Store { key, signed: signed.clone(), reply })?;
        match self.wait(rx)? {
            Ok(OpResult::Stored { holders }) => Ok(holders.iter().map(NodeId::to_hex).collect()),
            Ok(other) => Err(DhtError::Unavailable(format!("unexpected result {other:?}"))),
            Err(e) => Err(DhtError::Rejected(e.to_string())),
        }
    }

    fn get(&self, key: Key) -> Result<Option<SignedDataset>, DhtError> {
        let (reply, rx) = mpsc::channel();
        self.send(Event::Get { key, reply })?;
        match self.wait(rx)? {
            OpResult::Value(Ok(found)) => Ok(found),
            OpResult::Value(Err(GetError::Integrity)) => Err(DhtError::Integrity),
            other => Err(DhtError::Unavailable(format!("unexpected result {other:?}"))),
        }
    }
}

fn accept(listener: TcpListener, tx: mpsc::Sender<Event>, stopping: Arc<AtomicBool>, inbound: Arc<Mutex<Vec<TcpStream>>>) {
    for stream in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            return;
        }
        let Ok(stream) = stream else { continue };
        if let Ok(clone) = stream.try_clone() {
            let mut open = inbound.lock().unwrap_or_else(|p| p.into_inner());
            open.retain(|s| s.peer_addr().is_ok());
            open.push(clone);
        }
        let tx = tx.clone();
        let _ = std::thread::Builder::new().name("dht-read".into()).spawn(move || read_frames(stream, tx));
    }
}

/// Feeds frames from one connection to the node until it closes or sends garbage.
fn read_frames(stream: TcpStream, tx: mpsc::Sender<Event>) {
    let mut reader = BufReader::new(stream);
    let mut frame = Vec::new();
    loop {
        let mut header = [0u8; 4];
        if reader.read_exact(&mut header).is_err() {
            return;
        }
        let Ok(Some(len)) = frame_len(&header) else { return };
        frame.clear();
        frame.extend_from_slice(&header);
        frame.resize(4 + len, 0);
        if reader.read_exact(&mut frame[4..]).is_err() {
            return;
        }
        let Ok((envelope, _)) = decode(&frame) else { return };
        if tx.send(Event::Inbound(envelope)).is_err() {
            return;
        }
    }
}

/// Writes frames to one peer, reconnecting once per frame on failure.
/// Frames that cannot be delivered are dropped; the node's rpc timeout
/// notices.
fn write_frames(address: String, rx: mpsc::Receiver<Vec<u8>>) {
    let mut conn: Option<TcpStream> = None;
    for frame in rx {
        for _ in 0..2 {
            if conn.is_none() {
                conn = dial(&address);
            }
            let Some(stream) = conn.as_mut() else { break };
            if stream.write_all(&frame).is_ok() {
                break;
            }
            conn = None;
        }
    }
}

fn dial(address: &str) -> Option<TcpStream> {
    let addr = address.to_socket_addrs().ok()?.next()?;
    let stream = TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT).ok()?;
    let _ = stream.set_nodelay(true);
    Some(stream)
}

enum Waiter {
    Find(mpsc::Sender<OpResult>),
    Store(mpsc::Sender<Result<OpResult, StoreError>>),
    Get(mpsc::Sender<OpResult>),
}

struct Driver {
    node: DhtNode,
    timers: BinaryHeap<Reverse<(u64, u64, TimerKey)>>,
    timer_seq: u64,
    writers: BTreeMap<String, mpsc::Sender<Vec<u8>>>,
    waiting: BTreeMap<OpId, Waiter>,
    bootstrap: Vec<String>,
    joined: bool,
    next_probe: u64,
}

/// `Timer` with an ordering, for the heap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum TimerKey {
    RpcTimeout(u64),
    Republish,
    Replicate,
}

impl From<Timer> for TimerKey {
    fn from(t: Timer) -> Self {
        match t {
            Timer::RpcTimeout(id) => TimerKey::RpcTimeout(id),
            Timer::Republish => TimerKey::Republish,
            Timer::Replicate => TimerKey::Replicate,
        }
    }
}

impl From<TimerKey> for Timer {
    fn from(t: TimerKey) -> Self {
        match t {
            TimerKey::RpcTimeout(id) => Timer::RpcTimeout(id),
            TimerKey::Republish => Timer::Republish,
            TimerKey::Replicate => Timer::Replicate,
        }
    }
}

impl Driver {
    fn new(node: DhtNode, bootstrap: Vec<String>) -> Self {
        let joined = bootstrap.is_empty();
        Driver { node, timers: BinaryHeap::new(), timer_seq: 0, writers: BTreeMap::new(), waiting: BTreeMap::new(), bootstrap, joined, next_probe: 0 }
    }

    fn run(mut self, rx: mpsc::Receiver<Event>) {
        let mut next_bootstrap = now_ms();
        loop {
            let now = now_ms();
            if !self.joined && now >= next_bootstrap {
                self.probe_bootstrap();
                next_bootstrap = now + BOOTSTRAP_RETRY.as_millis() as u64;
            }
            self.fire_due(now);
            let mut deadline = self.timers.peek().map_or(now + 1_000, |Reverse((at, ..))| *at);
            if !self.joined {
                deadline = deadline.min(next_bootstrap);
            }
            let wait = Duration::from_millis(deadline.saturating_sub(now_ms()).max(1));
            let event = match rx.recv_timeout(wait) {
                Ok(e) => e,
                Err(mpsc::RecvTimeoutError::Timeout) => continue,
                Err(mpsc::RecvTimeoutError::Disconnected) => return,
            };
            let now = now_ms();
            match event {
                Event::Inbound(envelope) => {
                    if !self.joined && envelope.rpc_id >= PROBE_RPC_BASE && envelope.body == Body::Pong {
                        self.joined = true;
                        self.node.join(now, envelope.sender());
                    }
                    self.node.handle_message(now, envelope);
                }
                Event::Find { key, reply } => {
                    let op = self.node.find_node(now, key);
                    self.waiting.insert(op, Waiter::Find(reply));
                }
                Event::Store { key, signed, reply } => match self.node.store(now, key, &signed) {
                    Ok(op) => {
                        self.waiting.insert(op, Waiter::Store(reply));
                    }
                    Err(e) => {
                        let _ = reply.send(Err(e));
                    }
                },
                Event::Get { key, reply } => {
                    let op = self.node.get(now, key);
                    self.waiting.insert(op, Waiter::Get(reply));
                }
                Event::Inspect { f } => f(&self.node),
                Event::Shutdown => {
                    self.node.leave(now);
                    self.flush();
                    return;
                }
            }
            self.flush();
        }
    }

    fn probe_bootstrap(&mut self) {
        let me = self.node.contact().clone();
        for address in self.bootstrap.clone() {
            if address == me.address {
                continue;
            }
            let rpc_id = PROBE_RPC_BASE + self.next_probe % (1 << 16);
            self.next_probe += 1;
            let envelope = Envelope { sender_node_id: me.id, sender_address: me.address.clone(), rpc_id, body: Body::Ping };
            self.write(&address, encode(&envelope));
        }
    }

    fn fire_due(&mut self, now: u64) {
        while let Some(Reverse((at, _, timer))) = self.timers.peek().copied() {
            if at > now {
                break;
            }
            self.timers.pop();
            self.node.handle_timer(now, timer.into());
            self.flush();
        }
    }

    fn flush(&mut self) {
        for output in self.node.drain_outputs() {
            match output {
                Output::Send { to, envelope } => self.write(&to.address, encode(&envelope)),
                Output::Timer { at_ms, timer } => {
                    self.timer_seq += 1;
                    self.timers.push(Reverse((at_ms, self.timer_seq, timer.into())));
                }
                Output::Done(outcome) => match (self.waiting.remove(&outcome.op), outcome.result) {
                    (Some(Waiter::Find(reply)), result) | (Some(Waiter::Get(reply)), result) => {
                        let _ = reply.send(result);
                    }
                    (Some(Waiter::Store(reply)), result) => {
                        let _ = reply.send(Ok(result));
                    }
                    (None, _) => {}
                },
            }
        }
    }

    fn write(&mut self, address: &str, frame: Vec<u8>) {
        if let Some(tx) = self.writers.get(address) {
            if tx.send(frame.clone()).is_ok() {
                return;
            }
        }
        let (tx, rx) = mpsc::channel();
        let owned = address.to_string();
        if std::thread::Builder::new().name(format!("dht-write-{address}")).spawn(move || write_frames(owned, rx)).is_ok() {
            let _ = tx.send(frame);
            self.writers.insert(address.to_string(), tx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guid::tests::FAST;

    fn start(bootstrap: &[&TcpDht]) -> TcpDht {
        let mut config = TcpDhtConfig::new("127.0.0.1:0".parse().unwrap());
        config.dht.guid = FAST;
        config.bootstrap = bootstrap.iter().map(|n| n.address().to_string()).collect();
        config.request_timeout = Duration::from_secs(10);
        TcpDht::start(config).unwrap()
    }

    fn table_len(node: &TcpDht) -> usize {
        node.inspect(|n| n.routing_table().len()).unwrap()
    }

    fn eventually(mut f: impl FnMut() -> bool) -> bool {
        for _ in 0..200 {
            if f() {
                return true;
            }
            std::thread::sleep(Duration::from_millis(25));
        }
        false
    }

    #[test]
    fn lone_node_stores_and_reads_locally() {
        let node = start(&[]);
        let signed = crate::net_sim::seeded_dataset(1, 1, &[], &FAST);
        let key = Key::from_guid(&signed.peek().unwrap().guid);
        assert_eq!(node.store(key, &signed).unwrap(), vec![node.id().to_hex()]);
        assert_eq!(node.get(key).unwrap(), Some(signed));
        assert_eq!(node.get(Key::from_guid(crate::net_sim::seeded_identity(2, &FAST).guid())).unwrap(), None);
    }

    #[test]
    fn invalid_datasets_are_refused_before_the_network() {
        let node = start(&[]);
        let signed = crate::net_sim::seeded_dataset(1, 1, &[], &FAST);
        let wrong_key = Key::from_guid(crate::net_sim::seeded_identity(2, &FAST).guid());
        assert!(matches!(node.store(wrong_key, &signed), Err(DhtError::Rejected(_))));
    }

    #[test]
    fn bootstrap_by_address_learns_both_ways() {
        let a = start(&[]);
        let b = start(&[&a]);
        assert!(eventually(|| table_len(&a) == 1 && table_len(&b) == 1));
        let found = b.find_node(a.id()).unwrap();
        assert!(found.contains(&a.id()) && found.contains(&b.id()));
    }

    #[test]
    fn bootstrap_retries_until_the_peer_appears() {
        let placeholder = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = placeholder.local_addr().unwrap();
        drop(placeholder);
        let mut config = TcpDhtConfig::new("127.0.0.1:0".parse().unwrap());
        config.dht.guid = FAST;
        config.bootstrap = vec![addr.to_string()];
        let late = TcpDht::start(config).unwrap();
        std::thread::sleep(Duration::from_millis(200));
        let mut seed = TcpDhtConfig::new(addr);
        seed.dht.guid = FAST;
        let Ok(seed) = TcpDht::start(seed) else { return };
        assert!(eventually(|| table_len(&late) == 1 && table_len(&seed) == 1));
    }

    #[test]
    fn departed_peer_is_forgotten() {
        let a = start(&[]);
        let b = start(&[&a]);
        assert!(eventually(|| table_len(&b) == 1));
        drop(a);
        let signed = crate::net_sim::seeded_dataset(3, 1, &[], &FAST);
        let key = Key::from_guid(&signed.peek().unwrap().guid);
        assert_eq!(b.store(key, &signed).unwrap(), vec![b.id().to_hex()]);
        assert_eq!(table_len(&b), 0);
    }
}
