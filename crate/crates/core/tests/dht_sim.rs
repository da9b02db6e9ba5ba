use std::collections::BTreeSet;

use imads_core::dht::{Key, NodeId};
use imads_core::guid::GuidParams;
use imads_core::net_sim::{
    run_scenario, seeded_dataset, seeded_identity, to_ndjson, ChurnAction, ChurnEvent, ClientAction, ClientResult, PartitionEvent,
    Scenario, SimConfig, Simulation, TraceEvent, WorkloadItem,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FAST: GuidParams = GuidParams { iterations: 1 };

fn config(seed: u64, nodes: usize) -> SimConfig {
    let mut config = SimConfig::new(seed, nodes);
    config.dht.guid = FAST;
    config
}

fn booted(seed: u64, nodes: usize) -> Simulation {
    let mut sim = Simulation::new(config(seed, nodes)).unwrap();
    let epoch = sim.epoch();
    sim.run_until(epoch);
    sim
}

fn key_for(seed: u64) -> Key {
    Key::from_guid(seeded_identity(seed, &FAST).guid())
}

fn store(sim: &mut Simulation, node: usize, seed: u64, version: u64) -> Vec<String> {
    match sim.execute(node, ClientAction::StoreSeeded { seed, version, user_ids: vec![] }).result {
        ClientResult::Stored { holders } => holders,
        other => panic!("store failed: {other:?}"),
    }
}

fn get_version(sim: &mut Simulation, node: usize, seed: u64) -> Option<u64> {
    match sim.execute(node, ClientAction::GetSeeded { seed }).result {
        ClientResult::Found { version, .. } => Some(version),
        ClientResult::NotFound => None,
        other => panic!("get failed: {other:?}"),
    }
}

/// Exhaustive oracle: the k live ids closest to `key`.
fn true_closest(sim: &Simulation, key: &Key, k: usize) -> Vec<String> {
    let mut ids: Vec<NodeId> = sim.live_nodes().into_iter().map(|(_, id)| id).collect();
    ids.sort_by_key(|id| id.distance(key));
    ids.into_iter().take(k).map(|id| id.to_hex()).collect()
}

#[test]
fn single_node_store_get_uses_no_network() {
    let workload = vec![
        WorkloadItem { time_ms: 0, node_index: 0, action: ClientAction::StoreSeeded { seed: 9, version: 1, user_ids: vec![] } },
        WorkloadItem { time_ms: 10, node_index: 0, action: ClientAction::GetSeeded { seed: 9 } },
    ];
    let report = run_scenario(&Scenario::new(config(1, 1), workload)).unwrap();
    assert!(matches!(report.outcomes[0].result, ClientResult::Stored { ref holders } if holders.len() == 1));
    assert!(matches!(report.outcomes[1].result, ClientResult::Found { version: 1, .. }));
    assert_eq!(report.metrics.messages.sent, 0);
    assert_eq!(report.outcomes[1].rounds, 0);
}

#[test]
fn single_node_find_node_is_self_only() {
    let mut sim = booted(3, 1);
    let me = sim.node(0).id();
    let outcome = sim.execute(0, ClientAction::FindNode { key: NodeId([7; 32]) });
    assert_eq!(outcome.result, ClientResult::Nodes { ids: vec![me.to_hex()] });
}

fn churny_scenario(seed: u64) -> Scenario {
    let mut config = config(seed, 24);
    config.loss_rate = 0.05;
    config.churn_events = vec![
        ChurnEvent { time_ms: 500, action: ChurnAction::Crash, node_index: 3 },
        ChurnEvent { time_ms: 900, action: ChurnAction::Leave, node_index: 7 },
        ChurnEvent { time_ms: 1500, action: ChurnAction::Join, node_index: 3 },
        ChurnEvent { time_ms: 1600, action: ChurnAction::Join, node_index: 24 },
    ];
    let mut workload = Vec::new();
    for i in 0..10u64 {
        workload.push(WorkloadItem { time_ms: i * 100, node_index: (i as usize * 5) % 24, action: ClientAction::StoreSeeded { seed: i, version: 1, user_ids: vec![] } });
    }
    for i in 0..10u64 {
        workload.push(WorkloadItem { time_ms: 2000 + i * 50, node_index: (i as usize * 7 + 1) % 24, action: ClientAction::GetSeeded { seed: i } });
    }
    Scenario::new(config, workload)
}

#[test]
fn identical_scenarios_produce_identical_traces() {
    let a = run_scenario(&churny_scenario(11)).unwrap();
    let b = run_scenario(&churny_scenario(11)).unwrap();
    let (ta, tb) = (to_ndjson(&a.trace), to_ndjson(&b.trace));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);
    let c = run_scenario(&churny_scenario(12)).unwrap();
    assert_ne!(ta, to_ndjson(&c.trace));
}

#[test]
fn every_message_is_accounted_for_and_time_never_runs_backwards() {
    let report = run_scenario(&churny_scenario(5)).unwrap();
    let (mut sent, mut delivered, mut lost, mut cut) = (0u64, 0u64, 0u64, 0u64);
    let mut last = 0;
    let mut fates = std::collections::BTreeMap::new();
    for record in &report.trace {
        assert!(record.t >= last);
        last = record.t;
        match &record.event {
            TraceEvent::Send { from, rpc_id, kind, .. } => {
                sent += 1;
                *fates.entry((*from, *rpc_id, kind.clone())).or_insert(0i32) += 1;
            }
            TraceEvent::Deliver { from, rpc_id, kind, .. } | TraceEvent::Drop { from, rpc_id, kind, .. } => {
                match &record.event {
                    TraceEvent::Deliver { .. } => delivered += 1,
                    TraceEvent::Drop { reason: imads_core::net_sim::DropReason::Loss, .. } => lost += 1,
                    _ => cut += 1,
                }
                *fates.entry((*from, *rpc_id, kind.clone())).or_insert(0) -= 1;
            }
            _ => {}
        }
    }
    let m = &report.metrics.messages;
    assert_eq!((m.sent, m.delivered, m.dropped_loss, m.dropped_partition), (sent, delivered, lost, cut));
    assert!(lost > 0, "loss rate should drop something");
    let unresolved: i32 = fates.values().sum();
    assert_eq!(unresolved as u64, m.in_flight);
    assert!(fates.values().all(|&n| n == 0 || n == 1));
}

#[test]
fn store_then_get_from_every_node() {
    let mut sim = booted(21, 32);
    let holders = store(&mut sim, 4, 100, 1);
    assert_eq!(holders.len(), 8);
    for node in 0..32 {
        assert_eq!(get_version(&mut sim, node, 100), Some(1), "node {node}");
    }
    assert_eq!(get_version(&mut sim, 0, 101), None);
}

#[test]
fn store_lands_on_the_true_k_closest() {
    let mut sim = booted(22, 64);
    for seed in 0..20 {
        let mut holders = store(&mut sim, seed as usize, seed, 1);
        holders.sort();
        let mut expected = true_closest(&sim, &key_for(seed), 8);
        expected.sort();
        assert_eq!(holders, expected, "seed {seed}");
    }
}

#[test]
fn find_node_matches_exhaustive_oracle_at_64() {
    let mut sim = booted(23, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = 0;
    let probes = 200;
    for _ in 0..probes {
        let key = NodeId::random(&mut rng);
        let from = rng.gen_range(0..64);
        let outcome = sim.execute(from, ClientAction::FindNode { key });
        let ClientResult::Nodes { ids } = outcome.result else { panic!("lookup failed") };
        hits += (ids == true_closest(&sim, &key, 8)) as usize;
        assert!(outcome.rounds <= 6 + 2, "rounds {}", outcome.rounds);
    }
    assert!(hits * 100 >= probes * 99, "{hits}/{probes}");
}

#[test]
fn lookup_rounds_stay_within_log_bound_at_64() {
    let mut sim = booted(24, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let key = NodeId::random(&mut rng);
        let outcome = sim.execute(rng.gen_range(0..64), ClientAction::FindNode { key });
        assert!(outcome.rounds <= 8, "rounds {}", outcome.rounds);
    }
}

#[test]
fn highest_version_replica_wins() {
    let mut sim = booted(25, 32);
    store(&mut sim, 0, 7, 3);
    let key = key_for(7);
    let holders = sim.holders(&key);
    assert_eq!(holders.len(), 8);
    // a newer version reaches only one holder directly
    let v4 = seeded_dataset(7, 4, &[], &FAST);
    let now = sim.now();
    sim.node_mut(holders[0]).records_mut().put(key, v4.as_str(), now, 86_400_000, true, &FAST).unwrap();
    for node in [1, 9, 17, 30] {
        assert_eq!(get_version(&mut sim, node, 7), Some(4));
    }
}

#[test]
fn tampered_replicas_are_skipped() {
    let mut sim = booted(26, 32);
    store(&mut sim, 0, 8, 2);
    let key = key_for(8);
    let holders = sim.holders(&key);
    for &h in &holders[..7] {
        assert!(sim.node_mut(h).records_mut().corrupt(&key, |jwt| {
            let mid = jwt.len() / 2;
            let c = if &jwt[mid..mid + 1] == "A" { "B" } else { "A" };
            jwt.replace_range(mid..mid + 1, c);
        }));
    }
    let querier = (0..32).find(|n| !holders.contains(n)).unwrap();
    assert_eq!(get_version(&mut sim, querier, 8), Some(2));

    let last = holders[7];
    sim.node_mut(last).records_mut().corrupt(&key, |jwt| jwt.push('x'));
    let outcome = sim.execute(querier, ClientAction::GetSeeded { seed: 8 });
    assert_eq!(outcome.result, ClientResult::IntegrityError);
}

#[test]
fn invalid_store_is_rejected_without_traffic() {
    let mut sim = booted(27, 8);
    let before = sim.message_stats().sent;
    let good = seeded_dataset(1, 1, &[], &FAST);
    let mut parts: Vec<String> = good.as_str().split('.').map(String::from).collect();
    parts[2] = parts[2].chars().rev().collect();
    let outcome = sim.execute(0, ClientAction::Store { jwt: parts.join(".") });
    assert!(matches!(outcome.result, ClientResult::Rejected { .. }));
    assert_eq!(sim.message_stats().sent, before);
}

#[test]
fn survives_crash_of_k_minus_one_holders() {
    let mut sim = booted(28, 32);
    store(&mut sim, 0, 55, 1);
    let holders = sim.holders(&key_for(55));
    for &h in &holders[..7] {
        sim.crash(h);
    }
    let querier = (0..32).find(|n| sim.is_alive(*n) && *n != holders[7]).unwrap();
    assert_eq!(get_version(&mut sim, querier, 55), Some(1));
}

#[test]
fn cloned_runs_diverge_independently_and_deterministically() {
    let mut sim = booted(36, 32);
    store(&mut sim, 0, 62, 1);
    let victim = sim.holders(&key_for(62))[0];
    let (mut a, mut b) = (sim.clone(), sim.clone());
    a.crash(victim);
    b.crash(victim);
    let out_a = a.execute(5, ClientAction::GetSeeded { seed: 62 });
    let out_b = b.execute(5, ClientAction::GetSeeded { seed: 62 });
    assert_eq!((out_a.result, out_a.rounds, out_a.rpcs), (out_b.result, out_b.rounds, out_b.rpcs));
    assert_eq!(a.message_stats().sent, b.message_stats().sent);
    // the original never saw the crash
    assert!(sim.is_alive(victim));
    assert_eq!(sim.holders(&key_for(62)).len(), 8);
}

#[test]
fn replication_restores_replica_count_after_crashes() {
    let mut sim = booted(29, 32);
    store(&mut sim, 0, 56, 1);
    let key = key_for(56);
    let holders = sim.holders(&key);
    for &h in &holders[..4] {
        sim.crash(h);
    }
    assert_eq!(sim.holders(&key).len(), 4);
    let t = sim.now() + 2 * 3_600_000;
    sim.run_until(t);
    assert_eq!(sim.holders(&key).len(), 8);
}

#[test]
fn update_reaches_every_replica_after_a_replication_cycle() {
    let mut sim = booted(30, 32);
    store(&mut sim, 0, 57, 1);
    let key = key_for(57);
    // v2 published while one holder is cut off
    let holders = sim.holders(&key);
    let groups = vec![vec![holders[0]]];
    sim.set_partition(Some(groups));
    store(&mut sim, 1.max(holders[0] + 1) % 32, 57, 2);
    sim.set_partition(None);
    let t = sim.now() + 3_600_000 + 60_000;
    sim.run_until(t);
    let versions: BTreeSet<u64> = sim.holders(&key).iter().map(|&h| sim.node(h).records().get(&key, sim.now()).unwrap().version).collect();
    assert_eq!(versions, BTreeSet::from([2]));
}

#[test]
fn records_expire_without_republish() {
    let mut sim = booted(31, 8);
    store(&mut sim, 0, 58, 1);
    let owner_republishes = sim.now() + 25 * 3_600_000;
    sim.crash(0);
    sim.run_until(owner_republishes);
    assert_eq!(get_version(&mut sim, 1, 58), None);
}

#[test]
fn owner_republish_keeps_records_alive() {
    let mut sim = booted(32, 8);
    store(&mut sim, 0, 59, 1);
    let t = sim.now() + 72 * 3_600_000;
    sim.run_until(t);
    assert_eq!(get_version(&mut sim, 5, 59), Some(1));
}

#[test]
fn full_bucket_evicts_unresponsive_oldest() {
    // k=1 makes every bucket full after a single contact
    let mut config = config(33, 12);
    config.dht.k = 1;
    let mut sim = Simulation::new(config).unwrap();
    let epoch = sim.epoch();
    sim.run_until(epoch);
    let table = sim.node(0).routing_table();
    let (bucket, occupant) = (0..256).rev().find_map(|b| table.bucket(b).front().map(|e| (b, e.contact.id))).unwrap();
    let occupant_index = sim.index_of(&occupant).unwrap();
    let newcomer = (0..12)
        .find(|&i| i != 0 && i != occupant_index && sim.node(0).id().distance(&sim.node(i).id()).bucket_index() == Some(bucket))
        .expect("another node in the same bucket");

    // occupant alive: newcomer is dropped
    sim.execute(newcomer, ClientAction::FindNode { key: sim.node(0).id() });
    let t = sim.now() + 2_000;
    sim.run_until(t);
    let ids: Vec<NodeId> = sim.node(0).routing_table().bucket(bucket).iter().map(|e| e.contact.id).collect();
    assert_eq!(ids, vec![occupant]);

    // occupant crashed: the ping times out and the newcomer takes its slot
    sim.crash(occupant_index);
    sim.execute(newcomer, ClientAction::FindNode { key: sim.node(0).id() });
    let t = sim.now() + 2_000;
    sim.run_until(t);
    let ids: Vec<NodeId> = sim.node(0).routing_table().bucket(bucket).iter().map(|e| e.contact.id).collect();
    assert_eq!(ids, vec![sim.node(newcomer).id()]);
}

#[test]
fn isolated_replicas_are_unreachable_until_the_partition_lifts() {
    let mut sim = booted(34, 32);
    store(&mut sim, 0, 60, 1);
    let holders = sim.holders(&key_for(60));
    let querier = (0..32).find(|n| !holders.contains(n)).unwrap();
    sim.set_partition(Some(vec![holders.clone()]));
    assert_eq!(get_version(&mut sim, querier, 60), None);
    sim.set_partition(None);
    assert_eq!(get_version(&mut sim, querier, 60), Some(1));
}

#[test]
fn split_network_heals_after_lift_and_republish() {
    let n = 32;
    let mut config = config(35, n);
    let side_a: Vec<usize> = (0..n / 2).collect();
    let side_b: Vec<usize> = (n / 2..n).collect();
    let epoch_relative_lift = 10_000;
    config.partitions = vec![PartitionEvent { time_ms: 0, groups: vec![side_a, side_b], lift_ms: Some(epoch_relative_lift) }];
    let mut sim = Simulation::new(config).unwrap();
    let epoch = sim.epoch();
    sim.run_until(epoch);
    store(&mut sim, 0, 61, 1);
    assert_eq!(get_version(&mut sim, n - 1, 61), None);
    assert_eq!(get_version(&mut sim, 1, 61), Some(1));
    // lift, then one full replication cycle
    sim.run_until(epoch + epoch_relative_lift + 3_600_000 + 60_000);
    assert_eq!(get_version(&mut sim, n - 1, 61), Some(1));
    // copies made inside side A linger until expiry; the true k closest must all hold it
    let holders: BTreeSet<String> = sim.holders(&key_for(61)).into_iter().map(|i| sim.node(i).id().to_hex()).collect();
    let expected: BTreeSet<String> = true_closest(&sim, &key_for(61), 8).into_iter().collect();
    assert!(expected.is_subset(&holders));
}

#[test]
fn inject_partition_rejects_overlapping_groups() {
    let scenario = Scenario::new(config(1, 4), vec![]);
    let bad = PartitionEvent { time_ms: 0, groups: vec![vec![0, 1], vec![1, 2]], lift_ms: None };
    assert!(scenario.clone().inject_partition(bad).is_err());
    let out_of_range = PartitionEvent { time_ms: 0, groups: vec![vec![0, 9]], lift_ms: None };
    assert!(scenario.clone().inject_partition(out_of_range).is_err());
    let ok = PartitionEvent { time_ms: 0, groups: vec![vec![0, 1], vec![2, 3]], lift_ms: Some(5) };
    assert_eq!(scenario.inject_partition(ok).unwrap().config.partitions.len(), 1);
}

#[test]
fn misordered_schedules_are_config_errors() {
    let mut config = config(1, 4);
    config.churn_events = vec![
        ChurnEvent { time_ms: 10, action: ChurnAction::Crash, node_index: 1 },
        ChurnEvent { time_ms: 5, action: ChurnAction::Crash, node_index: 2 },
    ];
    assert!(run_scenario(&Scenario::new(config, vec![])).is_err());
    let workload = vec![
        WorkloadItem { time_ms: 10, node_index: 0, action: ClientAction::GetSeeded { seed: 1 } },
        WorkloadItem { time_ms: 5, node_index: 0, action: ClientAction::GetSeeded { seed: 1 } },
    ];
    assert!(run_scenario(&Scenario::new(self::config(1, 4), workload)).is_err());
}

#[test]
fn scenario_json_round_trips() {
    let scenario = churny_scenario(3);
    let json = serde_json::to_string(&scenario).unwrap();
    let back: Scenario = serde_json::from_str(&json).unwrap();
    assert_eq!(back, scenario);
    let minimal: Scenario = serde_json::from_str(r#"{"seed":1,"node_count":2,"workload":[{"time_ms":0,"op":"get_seeded","seed":4}]}"#).unwrap();
    assert_eq!(minimal.config.latency.max_ms, 50);
    assert_eq!(minimal.workload[0].node_index, 0);
}
