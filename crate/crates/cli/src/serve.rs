use std::io::Write;
use std::net::SocketAddr;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Subcommand;
use imads_core::discovery::{DiscoveryService, ProfileDraft, Visibility};
use imads_core::domain_registry::{DomainRegistry, RegistryConfig, SystemClock};
use imads_core::global_registry::{GlobalRegistry, SimDht, TcpDht, TcpDhtConfig};
use imads_core::net_sim::SimConfig;
use imads_http::{discovery, domain, global, RunningServer};

use crate::config::Config;
use crate::parse_bind;

#[derive(Debug, Subcommand)]
pub enum ServeCommand {
    /// Soft-state registry of live endpoints for one provider.
    DomainRegistry {
        #[arg(long, default_value = "127.0.0.1:8100", value_parser = parse_bind)]
        bind: SocketAddr,
        /// Lease used when a registration names no ttl, in seconds.
        #[arg(long, default_value_t = 120)]
        default_ttl: u64,
    },
    /// GUID registry. Runs one DHT node over TCP when a peer address is
    /// given, otherwise an in-process simulated network.
    GlobalRegistry {
        #[arg(long, default_value = "127.0.0.1:8200", value_parser = parse_bind)]
        bind: SocketAddr,
        /// Listen for DHT peers here.
        #[arg(long, value_parser = parse_bind)]
        peer_bind: Option<SocketAddr>,
        /// Peer address to announce, if not the bound one.
        #[arg(long)]
        advertise: Option<String>,
        /// `host:port` of a running node; repeatable.
        #[arg(long)]
        bootstrap: Vec<String>,
        /// Simulated network size.
        #[arg(long, conflicts_with = "peer_bind")]
        nodes: Option<usize>,
        #[arg(long, conflicts_with = "peer_bind")]
        seed: Option<u64>,
    },
    /// Profile search.
    Discovery {
        #[arg(long, default_value = "127.0.0.1:8300", value_parser = parse_bind)]
        bind: SocketAddr,
        #[arg(long, default_value = "telekom1")]
        instance_id: String,
        /// Publish a demo profile for account `alice` and print its token.
        #[arg(long)]
        seed_demo: bool,
    },
}

fn announce(server: &RunningServer, what: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{what} listening on {}", server.url())?;
    out.flush()?;
    Ok(())
}

/// Serves until the process is killed.
fn forever(_server: RunningServer) -> ! {
    loop {
        std::thread::park();
    }
}

pub fn run(cmd: ServeCommand, config: &Config) -> Result<()> {
    match cmd {
        ServeCommand::DomainRegistry { bind, default_ttl } => {
            let settings = RegistryConfig { default_ttl_ms: default_ttl * 1000, ..Default::default() };
            let registry = Arc::new(DomainRegistry::in_memory(settings, Arc::new(SystemClock)));
            let server = domain::serve(registry, bind).with_context(|| format!("binding {bind}"))?;
            announce(&server, "domain registry")?;
            forever(server)
        }
        ServeCommand::GlobalRegistry { bind, peer_bind, advertise, bootstrap, nodes, seed } => {
            let params = config.guid_params();
            let peer_bind = match peer_bind {
                Some(addr) => Some(addr),
                None => config.dht.listen.as_deref().map(parse_bind).transpose().map_err(anyhow::Error::msg)?,
            };
            let server = match peer_bind {
                Some(peer_bind) => {
                    let mut tcp = TcpDhtConfig::new(peer_bind);
                    tcp.dht.guid = params;
                    tcp.advertise = advertise.or_else(|| config.dht.advertise.clone());
                    tcp.bootstrap = if bootstrap.is_empty() { config.dht.bootstrap.clone() } else { bootstrap };
                    let dht = TcpDht::start(tcp).with_context(|| format!("binding {peer_bind}"))?;
                    println!("dht node {} on {}", dht.id().to_hex(), dht.address());
                    global::serve(Arc::new(GlobalRegistry::new(dht, params)), bind)
                }
                None => {
                    let mut sim = SimConfig::new(seed.unwrap_or(config.dht.seed), nodes.unwrap_or(config.dht.nodes));
                    sim.dht.guid = params;
                    global::serve(Arc::new(GlobalRegistry::new(SimDht::start(sim)?, params)), bind)
                }
            }
            .with_context(|| format!("binding {bind}"))?;
            announce(&server, "global registry")?;
            forever(server)
        }
        ServeCommand::Discovery { bind, instance_id, seed_demo } => {
            let service = Arc::new(DiscoveryService::new(instance_id));
            if seed_demo {
                let token = service.create_account("alice");
                service.publish_profile("alice", demo_profile())?;
                println!("demo account alice, token {token}");
            }
            let server = discovery::serve(service, bind).with_context(|| format!("binding {bind}"))?;
            announce(&server, "discovery")?;
            forever(server)
        }
    }
}

fn demo_profile() -> ProfileDraft {
    ProfileDraft {
        headline: "Testprofile Alice".into(),
        description: "My profile".into(),
        hashtags: vec!["#reTHINK".into(), "#Telekom".into()],
        contacts: vec!["www.telekom.de".into()],
        guid: Some("WabRS8ZRswDNUIYtqF-j0nHQZmQVRLJimvqIGIYMz50".into()),
        visibility: Some(Visibility::Public),
        ..Default::default()
    }
}
