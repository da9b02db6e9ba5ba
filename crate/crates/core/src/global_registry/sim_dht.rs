use std::sync::mpsc;
use std::sync::Mutex;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{DhtError, DhtHandle};
use crate::dataset::SignedDataset;
use crate::dht::Key;
use crate::guid::Guid;
use crate::net_sim::{ClientAction, ClientResult, SimConfig, SimError, Simulation};

enum Command {
    Run { action: ClientAction, reply: mpsc::Sender<ClientResult> },
    Inspect { f: Box<dyn FnOnce(&mut Simulation) + Send> },
    Shutdown,
}

/// A simulated DHT running on its own thread.
///
/// Callers talk to it only through a channel. Virtual time follows the wall
/// clock while idle, so lease timers (republish, replication, expiry) fire
/// as they would on a real network; each request is then executed to
/// completion in virtual time.
pub struct SimDht {
    tx: Mutex<mpsc::Sender<Command>>,
    thread: Option<JoinHandle<()>>,
    node_count: usize,
}

impl SimDht {
    /// Boots `config.node_count` nodes and starts serving.
    pub fn start(config: SimConfig) -> Result<SimDht, SimError> {
        let node_count = config.node_count;
        let mut sim = Simulation::new(config)?;
        let epoch = sim.epoch();
        sim.run_until(epoch);
        let (tx, rx) = mpsc::channel();
        let thread = std::thread::Builder::new()
            .name("sim-dht".into())
            .spawn(move || drive(sim, rx, epoch))
            .map_err(|e| SimError::Config(e.to_string()))?;
        Ok(SimDht { tx: Mutex::new(tx), thread: Some(thread), node_count })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    fn send(&self, command: Command) -> Result<(), DhtError> {
        let tx = self.tx.lock().unwrap_or_else(|p| p.into_inner());
        tx.send(command).map_err(|_| DhtError::Unavailable("simulator stopped".into()))
    }

    fn run(&self, action: ClientAction) -> Result<ClientResult, DhtError> {
        let (reply, rx) = mpsc::channel();
        self.send(Command::Run { action, reply })?;
        rx.recv().map_err(|_| DhtError::Unavailable("simulator stopped".into()))
    }

    /// Runs `f` on the simulator thread, for fault injection and inspection.
    pub fn with_sim<T: Send + 'static>(&self, f: impl FnOnce(&mut Simulation) -> T + Send + 'static) -> Result<T, DhtError> {
        let (reply, rx) = mpsc::channel();
        self.send(Command::Inspect {
            f: Box::new(move |sim| {
                let _ = reply.send(f(sim));
            }),
        })?;
        rx.recv().map_err(|_| DhtError::Unavailable("simulator stopped".into()))
    }
}

fn drive(mut sim: Simulation, rx: mpsc::Receiver<Command>, epoch: u64) {
    let started = Instant::now();
    let mut next_entry = 0usize;
    let wall = |sim: &Simulation| sim.now().max(epoch + started.elapsed().as_millis() as u64);
    loop {
        let command = match rx.recv_timeout(Duration::from_millis(250)) {
            Ok(c) => c,
            Err(mpsc::RecvTimeoutError::Timeout) => {
                let t = wall(&sim);
                sim.run_until(t);
                continue;
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => return,
        };
        let t = wall(&sim);
        sim.run_until(t);
        match command {
            Command::Run { action, reply } => {
                let live = sim.live_nodes();
                let result = if live.is_empty() {
                    ClientResult::Aborted { reason: "no live nodes".into() }
                } else {
                    // spread entry points over the live nodes
                    let (node, _) = live[next_entry % live.len()];
                    next_entry += 1;
                    sim.execute(node, action).result
                };
                let _ = reply.send(result);
            }
            Command::Inspect { f } => f(&mut sim),
            Command::Shutdown => return,
        }
    }
}

impl Drop for SimDht {
    fn drop(&mut self) {
        let _ = self.send(Command::Shutdown);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl DhtHandle for SimDht {
    fn store(&self, _key: Key, signed: &SignedDataset) -> Result<Vec<String>, DhtError> {
        match self.run(ClientAction::Store { jwt: signed.as_str().to_string() })? {
            ClientResult::Stored { holders } => Ok(holders),
            ClientResult::Rejected { reason } => Err(DhtError::Rejected(reason)),
            other => Err(DhtError::Unavailable(format!("{other:?}"))),
        }
    }

    fn get(&self, key: Key) -> Result<Option<SignedDataset>, DhtError> {
        let guid = Guid::from_digest(&key.0).to_string();
        match self.run(ClientAction::Get { guid })? {
            ClientResult::Found { jwt, .. } => SignedDataset::parse(&jwt).map(Some).map_err(|e| DhtError::Unavailable(e.to_string())),
            ClientResult::NotFound => Ok(None),
            ClientResult::IntegrityError => Err(DhtError::Integrity),
            ClientResult::Rejected { reason } => Err(DhtError::Rejected(reason)),
            other => Err(DhtError::Unavailable(format!("{other:?}"))),
        }
    }
}
