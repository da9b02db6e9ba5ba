use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use imads_core::client::ClientError;
use imads_core::domain_registry::{Clock, DomainRegistry, InstanceStatus, MockClock, RegistryConfig};
use imads_http::client::HttpDomainRegistry;
use imads_http::{domain, RunningServer};

const ALICE: &str = "user://gmail.com/alice";
const VIDEO: &str = "hyperty://gmail.com/0123456789abcdef0123456789abcdef";

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn start() -> (Arc<MockClock>, Arc<DomainRegistry>, RunningServer, HttpDomainRegistry) {
    let clock = Arc::new(MockClock::new(1_000_000));
    let registry = Arc::new(DomainRegistry::in_memory(RegistryConfig::default(), clock.clone()));
    let server = domain::serve(registry.clone(), local()).unwrap();
    let client = HttpDomainRegistry::new(server.url());
    (clock, registry, server, client)
}

fn caps(list: &[&str]) -> BTreeSet<String> {
    list.iter().map(|s| s.to_string()).collect()
}

#[test]
fn register_query_and_capability_filter() {
    let (_clock, registry, _server, client) = start();
    let lease = client.register(ALICE, VIDEO, &["video", "Voice"], "gmail.com", Some(60)).unwrap();
    assert_eq!(lease.ttl_ms, 60_000);
    assert_eq!(lease.lease_expiry, 1_060_000);
    client.register(ALICE, "hyperty://gmail.com/chat1", &["chat"], "gmail.com", None).unwrap();

    let video = client.query(ALICE, &caps(&["video"]), false).unwrap();
    assert_eq!(video.len(), 1);
    assert_eq!(video[0].url, VIDEO);
    assert_eq!(video[0].media, caps(&["video", "voice"]));
    assert_eq!(client.query(ALICE, &BTreeSet::new(), false).unwrap().len(), 2);
    assert!(client.query(ALICE, &caps(&["video", "chat"]), false).unwrap().is_empty());
    assert!(client.query("user://gmail.com/bob", &BTreeSet::new(), false).unwrap().is_empty());
    assert_eq!(registry.all_instances().len(), 2);
}

#[test]
fn instance_json_field_names() {
    let (_clock, _registry, server, client) = start();
    client.register(ALICE, VIDEO, &["video"], "gmail.com", None).unwrap();
    let body: serde_json::Value = reqwest::blocking::get(format!("{}/hyperty/user/user%3A%2F%2Fgmail.com%2Falice?cap=video", server.url()))
        .unwrap()
        .json()
        .unwrap();
    let instance = &body[0];
    for key in ["url", "userID", "media", "provider", "status", "leaseExpiry"] {
        assert!(instance.get(key).is_some(), "missing {key} in {instance}");
    }
    assert_eq!(instance["status"], "live");
    assert_eq!(instance["userID"], ALICE);
}

#[test]
fn status_expiry_and_refresh() {
    let (clock, _registry, _server, client) = start();
    client.register(ALICE, VIDEO, &["video"], "gmail.com", Some(10)).unwrap();
    assert_eq!(client.status(ALICE, VIDEO).unwrap(), InstanceStatus::Live);
    clock.advance(10_001);
    assert_eq!(client.status(ALICE, VIDEO).unwrap(), InstanceStatus::Disconnected);
    assert!(client.query(ALICE, &BTreeSet::new(), false).unwrap().is_empty());
    assert_eq!(client.query(ALICE, &BTreeSet::new(), true).unwrap().len(), 1);
    let lease = client.refresh(ALICE, VIDEO).unwrap();
    assert_eq!(lease.lease_expiry, clock.now_ms() + 10_000);
    assert_eq!(client.status(ALICE, VIDEO).unwrap(), InstanceStatus::Live);
    assert_eq!(client.status(ALICE, "hyperty://gmail.com/never").unwrap(), InstanceStatus::Unknown);
}

fn status<T: std::fmt::Debug>(r: Result<T, ClientError>) -> u16 {
    match r {
        Err(ClientError::Rejected { status, .. }) => status,
        other => panic!("{other:?}"),
    }
}

#[test]
fn errors_map_to_statuses() {
    let (_clock, _registry, _server, client) = start();
    assert_eq!(status(client.register(ALICE, VIDEO, &["video"], "gmail.com", Some(1))), 400);
    assert_eq!(status(client.register("alice", VIDEO, &["video"], "gmail.com", None)), 400);
    assert_eq!(status(client.register(ALICE, "http://not-a-hyperty", &["video"], "gmail.com", None)), 400);
    assert_eq!(status(client.refresh(ALICE, VIDEO)), 404);
    client.register(ALICE, VIDEO, &["video"], "gmail.com", None).unwrap();
    assert_eq!(status(client.register("user://gmail.com/bob", VIDEO, &["video"], "gmail.com", None)), 409);
    assert_eq!(status(client.watch(ALICE, "hyperty://gmail.com/never", Duration::from_secs(1))), 404);
}

#[test]
fn watch_long_poll_completes_on_reconnect() {
    let (clock, registry, server, client) = start();
    client.register(ALICE, VIDEO, &["video"], "gmail.com", Some(10)).unwrap();
    clock.advance(20_000);
    let url = server.url();
    let waiters: Vec<_> = (0..2)
        .map(|_| {
            let url = url.clone();
            std::thread::spawn(move || HttpDomainRegistry::new(url).watch(ALICE, VIDEO, Duration::from_secs(20)))
        })
        .collect();
    let deadline = Instant::now() + Duration::from_secs(10);
    while registry.watcher_count(VIDEO) < 2 {
        assert!(Instant::now() < deadline, "watchers never subscribed");
        std::thread::sleep(Duration::from_millis(10));
    }
    client.refresh(ALICE, VIDEO).unwrap();
    for w in waiters {
        let n = w.join().unwrap().unwrap().expect("notification");
        assert_eq!(n.instance.url, VIDEO);
        assert_eq!(n.instance.status, InstanceStatus::Live);
    }
}

#[test]
fn watch_times_out_without_transition() {
    let (_clock, _registry, _server, client) = start();
    client.register(ALICE, VIDEO, &["video"], "gmail.com", None).unwrap();
    assert_eq!(client.watch(ALICE, VIDEO, Duration::from_secs(1)).unwrap(), None);
}

#[test]
fn stopped_server_is_unreachable() {
    let (_clock, _registry, server, client) = start();
    server.stop();
    assert!(matches!(client.query(ALICE, &BTreeSet::new(), false), Err(ClientError::Unreachable(_))));
}
