use std::collections::BTreeMap;
use std::net::IpAddr;

use proptest::prelude::*;

use assure_core::harness::{generate_cluster, ClusterSpec};
use assure_core::ingest::{
    derive_rates, ingest_sources, parse_collective_log, parse_flow_record, parse_metric_record, parse_nic_counter,
    serialize_collective, serialize_flow, serialize_metric, serialize_nic_counter, LineError, Source, SourceKind,
};
use assure_core::model::{
    CollectiveLogRecord, EntityId, FlowRecord, L4Protocol, MetricRegistry, MetricSample, NicCounter,
    NicCounterRecord, OpKind, Timestamp, QP_ID_LIMIT, ROCEV2_PORT,
};

const CASES: u32 = 10_000;
const RESERVED_LABELS: [&str; 6] = ["gpu_uuid", "switch", "port", "hostname", "nic", "app"];

fn timestamp() -> impl Strategy<Value = Timestamp> {
    // Up to the year 2100.
    (1i64..4_102_444_800_000_000).prop_map(Timestamp)
}

fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9][a-zA-Z0-9_.-]{0,11}"
}

fn gpu_uuid() -> impl Strategy<Value = String> {
    "GPU-[0-9a-f]{8}(-[0-9a-f]{4}){0,3}"
}

fn label_value() -> impl Strategy<Value = String> {
    "[!-+\\--<>-~]{1,10}"
}

fn collective() -> impl Strategy<Value = CollectiveLogRecord> {
    (
        "[0-9a-f]{1,16}",
        timestamp(),
        prop::sample::select(OpKind::ALL.to_vec()),
        any::<u64>(),
        any::<u32>(),
        1..u32::MAX,
        gpu_uuid(),
        ident(),
        any::<u16>(),
        0..QP_ID_LIMIT,
    )
        .prop_map(|(app_id, timestamp, op_kind, bytes, src_rank, gap, src_gpu_uuid, hostname, channel, qp_id)| {
            CollectiveLogRecord {
                app_id,
                timestamp,
                op_kind,
                bytes,
                src_rank,
                dst_rank: src_rank.wrapping_add(gap),
                src_gpu_uuid,
                hostname,
                channel,
                qp_id,
            }
        })
}

fn flow() -> impl Strategy<Value = FlowRecord> {
    (
        (ident(), ident(), ident(), timestamp()),
        (any::<IpAddr>(), any::<IpAddr>()),
        prop::sample::select(vec![L4Protocol::Udp, L4Protocol::Tcp, L4Protocol::Icmp]),
        (any::<u16>(), any::<u16>(), prop::option::of(0..QP_ID_LIMIT)),
        (any::<u64>(), any::<u64>()),
    )
        .prop_filter("ingress differs from egress", |((_, i, e, _), ..)| i != e)
        .prop_map(|((switch_id, ingress_port, egress_port, timestamp), (src_ip, dst_ip), l4_protocol, ports, counts)| {
            let (src_port, mut dst_port, qp_id) = ports;
            if qp_id.is_none() && dst_port == ROCEV2_PORT {
                dst_port += 1;
            }
            FlowRecord {
                switch_id,
                ingress_port,
                egress_port,
                timestamp,
                src_ip,
                dst_ip,
                l4_protocol,
                src_port,
                dst_port,
                qp_id,
                sampled_packets: counts.0,
                sampled_bytes: counts.1,
            }
        })
}

fn registered_metric() -> impl Strategy<Value = String> {
    let names: Vec<String> = MetricRegistry::with_defaults().iter().map(|(n, _)| n.to_string()).collect();
    prop::sample::select(names)
}

/// Identifying labels and the entity they resolve to.
fn identity() -> impl Strategy<Value = (Vec<(String, String)>, EntityId)> {
    prop_oneof![
        gpu_uuid().prop_map(|u| (vec![("gpu_uuid".into(), u.clone())], EntityId::gpu(u))),
        (ident(), ident()).prop_map(|(s, p)| {
            (vec![("switch".into(), s.clone()), ("port".into(), p.clone())], EntityId::switch_port(&s, &p))
        }),
        ident().prop_map(|s| (vec![("switch".into(), s.clone())], EntityId::switch(s))),
        (ident(), ident()).prop_map(|(h, n)| {
            (vec![("hostname".into(), h.clone()), ("nic".into(), n.clone())], EntityId::nic(&h, &n))
        }),
        ident().prop_map(|h| (vec![("hostname".into(), h.clone())], EntityId::host(h))),
        "[0-9a-f]{1,12}".prop_map(|a| (vec![("app".into(), a.clone())], EntityId::app(a))),
    ]
}

fn metric() -> impl Strategy<Value = MetricSample> {
    let extra = prop::collection::btree_map(
        "[a-z][a-z_]{0,7}".prop_filter("not identifying", |k| !RESERVED_LABELS.contains(&k.as_str())),
        label_value(),
        0..4,
    );
    (timestamp(), registered_metric(), any::<f64>().prop_filter("finite", |v| v.is_finite()), identity(), extra)
        .prop_map(|(timestamp, metric, value, (ids, entity), extra)| {
            let mut labels: BTreeMap<String, String> = extra;
            labels.extend(ids);
            MetricSample { entity, metric, timestamp, value, labels }
        })
}

fn nic_counter() -> impl Strategy<Value = NicCounterRecord> {
    (ident(), ident(), timestamp(), prop::sample::select(NicCounter::ALL.to_vec()), any::<u64>()).prop_map(
        |(hostname, nic_id, timestamp, counter, value)| NicCounterRecord { hostname, nic_id, timestamp, counter, value },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn collective_round_trip(r in collective()) {
        prop_assert_eq!(parse_collective_log(&serialize_collective(&r)), Ok(r));
    }

    #[test]
    fn flow_round_trip(r in flow()) {
        prop_assert_eq!(parse_flow_record(&serialize_flow(&r)), Ok(r));
    }

    #[test]
    fn metric_round_trip(s in metric()) {
        let registry = MetricRegistry::with_defaults();
        prop_assert_eq!(parse_metric_record(&serialize_metric(&s), &registry), Ok(s));
    }

    #[test]
    fn nic_counter_round_trip(r in nic_counter()) {
        prop_assert_eq!(parse_nic_counter(&serialize_nic_counter(&r)), Ok(r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rocev2_flow_without_qp_is_quarantined(mut r in flow()) {
        r.qp_id = None;
        r.dst_port = ROCEV2_PORT;
        let quarantined = matches!(parse_flow_record(&serialize_flow(&r)), Err(LineError::Quarantined { .. }));
        prop_assert!(quarantined);
    }

    #[test]
    fn arbitrary_lines_never_panic(line in "[ -~]{0,80}") {
        let registry = MetricRegistry::with_defaults();
        let _ = parse_collective_log(&line);
        let _ = parse_flow_record(&line);
        let _ = parse_metric_record(&line, &registry);
        let _ = parse_nic_counter(&line);
    }

    #[test]
    fn accepted_plus_quarantined_equals_offered(
        collectives in prop::collection::vec(prop_oneof![collective().prop_map(|r| serialize_collective(&r)), "[ -~]{0,60}"], 0..30),
        flows in prop::collection::vec(prop_oneof![flow().prop_map(|r| serialize_flow(&r)), "[ -~]{0,60}"], 0..30),
        metrics in prop::collection::vec(prop_oneof![metric().prop_map(|s| serialize_metric(&s)), "[ -~]{0,60}"], 0..30),
        nics in prop::collection::vec(prop_oneof![nic_counter().prop_map(|r| serialize_nic_counter(&r)), "[ -~]{0,60}"], 0..30),
    ) {
        let topology = generate_cluster(&ClusterSpec::testbed(), 7).unwrap();
        let source = |kind, lines: Vec<String>| Source { kind, name: format!("{kind:?}"), text: lines.join("\n") };
        let sources = vec![
            source(SourceKind::Collective, collectives),
            source(SourceKind::Flow, flows),
            source(SourceKind::Metric, metrics),
            source(SourceKind::NicCounter, nics),
        ];
        let (_, report) = ingest_sources(&sources, &topology, &MetricRegistry::with_defaults()).unwrap();
        prop_assert_eq!(report.total_accepted() + report.total_quarantined(), report.offered);
    }

    #[test]
    fn rates_are_never_negative(
        steps in prop::collection::vec((1i64..5_000_000, any::<u32>(), any::<bool>()), 1..50),
    ) {
        let mut t = 1_700_000_000_000_000i64;
        let mut value = 0u64;
        let series: Vec<NicCounterRecord> = steps
            .into_iter()
            .map(|(dt, inc, reset)| {
                t += dt;
                value = if reset { u64::from(inc) } else { value.saturating_add(u64::from(inc)) };
                NicCounterRecord {
                    hostname: "node1".into(),
                    nic_id: "nic0".into(),
                    timestamp: Timestamp(t),
                    counter: NicCounter::Retransmits,
                    value,
                }
            })
            .collect();
        let rates = derive_rates(&series).unwrap();
        prop_assert_eq!(rates.len(), series.len() - 1);
        prop_assert!(rates.iter().all(|r| r.value >= 0.0 && r.value.is_finite()));
    }
}
