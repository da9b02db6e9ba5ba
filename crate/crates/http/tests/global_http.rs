use std::net::SocketAddr;
use std::sync::Arc;

use imads_core::client::{ClientError, GlobalRegistryApi};
use imads_core::dataset::{sign_dataset, verify_dataset, GlobalDataset, SignedDataset, UserIdEntry};
use imads_core::global_registry::{GlobalRegistry, SimDht};
use imads_core::guid::{generate_identity, GuidIdentity, GuidParams};
use imads_core::net_sim::SimConfig;
use imads_http::client::HttpGlobalRegistry;
use imads_http::{global, RunningServer};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const FAST: GuidParams = GuidParams { iterations: 1 };

fn start() -> (RunningServer, HttpGlobalRegistry) {
    let mut config = SimConfig::new(11, 8);
    config.dht.guid = FAST;
    let registry = Arc::new(GlobalRegistry::new(SimDht::start(config).unwrap(), FAST));
    let server = global::serve(registry, "127.0.0.1:0".parse::<SocketAddr>().unwrap()).unwrap();
    let client = HttpGlobalRegistry::new(server.url());
    (server, client)
}

fn identity(seed: u64) -> GuidIdentity {
    generate_identity(&mut ChaCha20Rng::seed_from_u64(seed), &FAST).unwrap()
}

fn signed(id: &GuidIdentity, version: u64) -> SignedDataset {
    let ds = GlobalDataset::new(id, vec![UserIdEntry::new("user://gmail.com/alice", "http://dr.gmail.example")], version, version).unwrap();
    sign_dataset(&ds, id.signing_key(), &FAST).unwrap()
}

#[test]
fn put_then_get_round_trips_the_jwt() {
    let (server, client) = start();
    let alice = identity(1);
    let ack = client.put(&signed(&alice, 1)).unwrap();
    assert_eq!(ack.version, 1);
    assert_eq!(ack.holders.len(), 8);
    let got = client.get_guid(alice.guid()).unwrap();
    assert_eq!(got, signed(&alice, 1));
    assert_eq!(verify_dataset(&got, &FAST).unwrap().guid, *alice.guid());

    let resp = reqwest::blocking::get(format!("{}/guid/{}", server.url(), alice.guid())).unwrap();
    assert_eq!(resp.headers()["content-type"], "application/jwt");
}

#[test]
fn statuses() {
    let (server, client) = start();
    let alice = identity(2);
    let bob = identity(3);
    assert_eq!(client.get_guid(alice.guid()), Err(ClientError::NotFound));
    client.put(&signed(&alice, 2)).unwrap();
    assert!(matches!(client.put(&signed(&alice, 1)), Err(ClientError::Rejected { status: 409, .. })));

    let http = reqwest::blocking::Client::new();
    let put = |path_guid: &str, body: String| http.put(format!("{}/guid/{path_guid}", server.url())).body(body).send().unwrap().status().as_u16();
    // body for one GUID under another's path
    assert_eq!(put(bob.guid().as_str(), signed(&alice, 3).as_str().to_string()), 400);
    assert_eq!(put(alice.guid().as_str(), "garbage".into()), 400);
    // bob's key signing a dataset that still carries alice's key
    let mut parts: Vec<String> = signed(&alice, 3).as_str().split('.').map(String::from).collect();
    parts[2] = signed(&bob, 3).as_str().split('.').nth(2).unwrap().to_string();
    assert_eq!(put(alice.guid().as_str(), parts.join(".")), 401);
    let short = http.get(format!("{}/guid/tooshort", server.url())).send().unwrap().status().as_u16();
    assert_eq!(short, 400);
}
