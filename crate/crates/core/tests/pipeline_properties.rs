use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use assure_core::depgraph::{app_entities, build_graph, Relation};
use assure_core::harness::{
    random_single_fault, simulate, ClusterSpec, FaultKind, FaultSpec, GpuSlot, Scenario, SimOutput, WorkloadSpec,
};
use assure_core::ingest::{ingest_sources, SourceKind};
use assure_core::model::{Endpoint, EntityId, Layer, MetricRegistry, TelemetrySnapshot, Topology};
use assure_core::pathtrace::{trace, PathTrace};
use assure_core::rca::{run_rca, RcaConfig, TemplateClient};

fn ingest(out: &SimOutput) -> TelemetrySnapshot {
    ingest_sources(&out.sources(), &out.topology, &MetricRegistry::with_defaults()).unwrap().0
}

fn slots(hosts: std::ops::RangeInclusive<usize>) -> Vec<GpuSlot> {
    hosts.map(|h| GpuSlot { host: format!("node{h}"), gpu: 0 }).collect()
}

/// Two ring jobs split across the leaves, congestion on the first job's path.
fn two_app_scenario(seed: u64) -> Scenario {
    let mut a = WorkloadSpec::ring("aaaa0001", 300);
    a.placement = slots(1..=4);
    let mut b = WorkloadSpec::ring("bbbb0002", 300);
    b.placement = slots(5..=8);
    let mut s = Scenario::new(seed, ClusterSpec::testbed(), vec![a, b]);
    s.faults.push(FaultSpec {
        kind: FaultKind::LinkCongestion,
        target: "switch_port:leaf1/p2".into(),
        start_secs: 200,
        end_secs: 240,
    });
    s
}

fn linked(topology: &Topology, a: &EntityId, b: &EntityId) -> bool {
    let index = topology.index();
    let port_peer = |port: &EntityId| port.split_composite().and_then(|(s, p)| index.peer(s, p).cloned());
    match (a.layer, b.layer) {
        (Layer::Nic, Layer::SwitchPort) => matches!(port_peer(b), Some(Endpoint::Nic(n)) if n.entity() == *a),
        (Layer::SwitchPort, Layer::Nic) => matches!(port_peer(a), Some(Endpoint::Nic(n)) if n.entity() == *b),
        (Layer::SwitchPort, Layer::Switch) => a.split_composite().is_some_and(|(s, _)| s == b.key),
        (Layer::Switch, Layer::SwitchPort) => b.split_composite().is_some_and(|(s, _)| s == a.key),
        (Layer::SwitchPort, Layer::SwitchPort) => {
            matches!(port_peer(a), Some(Endpoint::Switch(p)) if p.entity() == *b)
        }
        _ => false,
    }
}

fn assert_valid_path(topology: &Topology, t: &PathTrace) {
    let unique: BTreeSet<&EntityId> = t.hops.iter().collect();
    assert_eq!(unique.len(), t.hops.len(), "qp {} repeats a hop", t.qp_id);
    for pair in t.hops.windows(2) {
        assert!(linked(topology, &pair[0], &pair[1]), "qp {}: {} -/- {}", t.qp_id, pair[0], pair[1]);
    }
}

#[test]
fn ingest_is_byte_deterministic() {
    let mut s = Scenario::preset("combined").unwrap();
    s.workloads[0].iterations = 120;
    s.faults.clear();
    let out = simulate(&s).unwrap();
    assert_eq!(ingest(&out).to_json(), ingest(&out).to_json());
    assert_eq!(simulate(&s).unwrap().files, out.files);
}

#[test]
fn foreign_entities_are_quarantined_not_dropped() {
    let mut s = Scenario::preset("healthy").unwrap();
    s.workloads[0].iterations = 30;
    let out = simulate(&s).unwrap();
    let mut sources = out.sources();
    for src in &mut sources {
        match src.kind {
            SourceKind::Metric => src.text.push_str("\n1736971210000000 gpu.temperature 70 gpu_uuid=GPU-deadbeef hostname=ghost"),
            SourceKind::NicCounter => src.text.push_str("\n1736971210000000 ghost nic9 rx_bytes 5"),
            SourceKind::Flow => src.text.push_str("\nleaf9,p1,p2,1736971210000000,10.9.9.9,10.9.9.8,udp,1,4791,77,1,100"),
            SourceKind::Collective => src.text.push_str(
                "\n2025-01-15T20:00:10.000000Z app=845b5514 op=AllReduce bytes=8 src_rank=0 dst_rank=1 channel=0 qp=123 host=ghost gpu=GPU-deadbeef",
            ),
        }
    }
    let (snap, report) = ingest_sources(&sources, &out.topology, &MetricRegistry::with_defaults()).unwrap();
    assert!(snap.check_invariants().is_empty(), "{:?}", snap.check_invariants());
    assert_eq!(report.total_accepted() + report.total_quarantined(), report.offered);
    assert!(report.total_quarantined() >= 3);
}

#[test]
fn conflicting_qp_owner_is_quarantined() {
    let mut s = Scenario::preset("healthy").unwrap();
    s.workloads[0].iterations = 10;
    let out = simulate(&s).unwrap();
    let qp = out.manifest.qps[0].qp_id;
    let truth = &out.manifest.placements[0];
    let mut sources = out.sources();
    let coll = sources.iter_mut().find(|s| s.kind == SourceKind::Collective).unwrap();
    coll.text.push_str(&format!(
        "\n2025-01-15T20:00:05.000000Z app=ffff0000 op=AllReduce bytes=8 src_rank=0 dst_rank=1 channel=0 qp={qp} host={} gpu={}",
        truth.host, truth.gpu
    ));
    let (snap, report) = ingest_sources(&sources, &out.topology, &MetricRegistry::with_defaults()).unwrap();
    assert_eq!(report.quarantined.get("qp-conflict"), Some(&1));
    assert_eq!(snap.app_for_qp(qp), Some(truth.app.as_str()));
    assert!(snap.check_invariants().is_empty());
}

#[test]
fn generated_topologies_are_bipartite() {
    for (hosts, gpus, leaves, spines) in [(8, 1, 2, 2), (16, 2, 4, 3), (6, 4, 3, 1)] {
        let t = assure_core::harness::generate_cluster(&ClusterSpec::new(hosts, gpus, leaves, spines), 3).unwrap();
        assert!(assure_core::model::validate_topology(&t).is_empty());
        let tier = |s: &str| t.switch(s).unwrap().tier;
        for link in &t.links {
            if let Endpoint::Switch(b) = &link.b {
                assert_ne!(tier(&link.a.switch), tier(&b.switch), "{link:?}");
            }
        }
    }
}

#[test]
fn graph_edges_respect_layers_and_evidence() {
    let out = simulate(&two_app_scenario(5)).unwrap();
    let snap = ingest(&out);
    let full = build_graph(&snap);
    full.check_invariants().unwrap();
    assert!(full.edges().all(|(e, _)| e.respects_signature()));

    // Dropping one app removes exactly its runs_on edges.
    let without = build_graph(&snap.without_app("bbbb0002"));
    let expected: BTreeSet<_> = full
        .edge_set()
        .into_iter()
        .filter(|e| !(e.relation == Relation::RunsOn && e.from == EntityId::app("bbbb0002")))
        .collect();
    assert_eq!(without.edge_set(), expected);

    // Any subset of the records yields a subgraph.
    let half = TelemetrySnapshot::from_parts(
        snap.topology().clone(),
        snap.collectives().iter().step_by(2).cloned().collect(),
        snap.flows().iter().step_by(3).cloned().collect(),
        snap.metrics().iter().step_by(2).cloned().collect(),
        snap.nic_counters().to_vec(),
        snap.quarantine().clone(),
    );
    assert!(build_graph(&half).edge_set().is_subset(&full.edge_set()));
}

#[test]
fn rca_ignores_unrelated_apps_and_is_reproducible() {
    let out = simulate(&two_app_scenario(9)).unwrap();
    let snap = ingest(&out);
    let graph = build_graph(&snap);
    let cfg = RcaConfig::default();
    let report = run_rca(&graph, &snap, "aaaa0001", None, &cfg, &TemplateClient).unwrap();
    assert_eq!(report.ranked_causes[0].located_at, EntityId::switch_port("leaf1", "p2"));
    let again = run_rca(&graph, &snap, "aaaa0001", None, &cfg, &TemplateClient).unwrap();
    assert_eq!(report.to_json(), again.to_json());

    let alone = snap.without_app("bbbb0002");
    let isolated = run_rca(&build_graph(&alone), &alone, "aaaa0001", None, &cfg, &TemplateClient).unwrap();
    assert_eq!(report.to_json(), isolated.to_json());
}

/// Every located cause is a dependency of the app or lies on one of its paths.
fn assert_reachable(out: &SimOutput, snap: &TelemetrySnapshot, app: &str) {
    let graph = build_graph(snap);
    let report = run_rca(&graph, snap, app, None, &RcaConfig::default(), &TemplateClient).unwrap();
    let id = EntityId::app(app);
    let mut reachable: BTreeSet<EntityId> = BTreeSet::from([id.clone()]);
    for layer in [Layer::Gpu, Layer::Host, Layer::Nic, Layer::SwitchPort, Layer::Switch] {
        reachable.extend(app_entities(&graph, &id, layer).unwrap());
    }
    let pairs: BTreeSet<(u32, u32)> =
        out.manifest.qps.iter().filter(|q| q.app == app).map(|q| (q.src_rank, q.dst_rank)).collect();
    for (src, dst) in pairs {
        for t in trace(&graph, snap, app, src, dst).unwrap() {
            reachable.extend(t.hops);
        }
    }
    for c in &report.ranked_causes {
        assert!(reachable.contains(&c.located_at), "{} not reachable from {app}", c.located_at);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_fault_reports_are_reachable(seed in 1_000u64..100_000) {
        let s = random_single_fault(seed).unwrap();
        let out = simulate(&s).unwrap();
        let snap = ingest(&out);
        assert_reachable(&out, &snap, &out.manifest.placements[0].app);
    }

    #[test]
    fn half_sampled_paths_are_exact_or_absent(seed in any::<u64>()) {
        let mut s = Scenario::preset("healthy").unwrap();
        s.seed = seed;
        s.sampling = 0.5;
        s.workloads[0].iterations = 3;
        let out = simulate(&s).unwrap();
        let snap = ingest(&out);
        let graph = build_graph(&snap);
        let mut seen: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
        for f in snap.flows() {
            if let Some(q) = f.qp_id {
                seen.entry(q).or_default().insert(f.switch_id.clone());
            }
        }
        let app = &out.manifest.placements[0].app;
        let pairs: BTreeSet<(u32, u32)> = out.manifest.qps.iter().map(|q| (q.src_rank, q.dst_rank)).collect();
        let mut checked = 0;
        for (src, dst) in pairs {
            for t in trace(&graph, &snap, app, src, dst).unwrap() {
                let truth = out.manifest.qp(t.qp_id).unwrap();
                let all_seen = truth
                    .hops
                    .iter()
                    .filter(|h| h.layer == Layer::Switch)
                    .all(|h| seen.get(&t.qp_id).is_some_and(|s| s.contains(&h.key)));
                if all_seen {
                    prop_assert_eq!(&t.hops, &truth.hops);
                    prop_assert!(t.complete);
                    checked += 1;
                }
                if !t.hops.is_empty() {
                    assert_valid_path(&out.topology, &t);
                }
            }
        }
        prop_assert!(checked > 0);
    }
}

#[test]
fn full_sampling_paths_are_valid() {
    let mut s = Scenario::preset("healthy").unwrap();
    s.workloads[0].iterations = 5;
    s.workloads[0].pattern = assure_core::harness::Pattern::AllToAll;
    let out = simulate(&s).unwrap();
    let snap = ingest(&out);
    let graph = build_graph(&snap);
    let app = &out.manifest.placements[0].app;
    for q in &out.manifest.qps {
        for t in trace(&graph, &snap, app, q.src_rank, q.dst_rank).unwrap() {
            assert_valid_path(&out.topology, &t);
            let owners: BTreeSet<&str> = snap.collectives().iter().filter(|r| r.qp_id == t.qp_id).map(|r| r.app_id.as_str()).collect();
            assert_eq!(owners, BTreeSet::from([app.as_str()]));
        }
    }
}
