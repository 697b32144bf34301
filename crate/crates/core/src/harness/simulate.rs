//! Telemetry emission for a planned scenario.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cluster::{generate_cluster, hostname, nic_id, ClusterSpec};
use super::scenario::{FaultKind, FaultSpec, Pattern, Scenario, WorkloadSpec};
use super::{FaultTruth, HarnessError, Manifest, Placement, QpTruth, SimOutput};
use crate::ingest::lines::{serialize_collective, serialize_flow, serialize_metric, serialize_nic_counter};
use crate::model::{
    CollectiveLogRecord, Endpoint, EntityId, FlowRecord, L4Protocol, Layer, MetricSample, NicCounter,
    NicCounterRecord, NicRef, OpKind, Timestamp, Topology, QP_ID_LIMIT, ROCEV2_PORT,
};
use crate::rca::CauseKind;

/// Odd multiplier of the per-QP spine hash.
pub const ECMP_MULTIPLIER: u64 = 0x9E37_79B9_7F4A_7C15;

const STREAM_QP: u64 = 1;
const STREAM_METRICS: u64 = 2;
const STREAM_COUNTERS: u64 = 3;
const STREAM_SAMPLING: u64 = 4;
const STREAM_RANDOM_FAULT: u64 = 5;

const PACKET_BYTES: u64 = 4096;
const NOISY_COUNTER_MAX: u64 = 20;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("positive standard deviation")
}

#[derive(Debug, Clone)]
struct Rank {
    host: String,
    gpu: String,
    nic: NicRef,
}

#[derive(Debug, Clone)]
struct SwitchHop {
    switch: String,
    ingress: String,
    egress: String,
}

#[derive(Debug, Clone)]
struct PlannedQp {
    workload: usize,
    truth: QpTruth,
    src_nic: NicRef,
    dst_nic: NicRef,
    switch_hops: Vec<SwitchHop>,
}

#[derive(Debug, Clone)]
struct PlannedFault {
    truth: FaultTruth,
    start_secs: u64,
    end_secs: u64,
    nics: BTreeSet<NicRef>,
}

/// Everything decided before any telemetry is drawn.
#[derive(Debug, Clone)]
pub struct Plan {
    pub topology: Topology,
    pub start: Timestamp,
    pub duration_secs: u64,
    pub placements: Vec<Placement>,
    pub qps: Vec<QpTruth>,
    pub faults: Vec<FaultTruth>,
    pub warnings: Vec<String>,
    scenario: Scenario,
    ranks: Vec<Vec<Rank>>,
    planned_qps: Vec<PlannedQp>,
    planned_faults: Vec<PlannedFault>,
}

fn pairs(pattern: Pattern, n: u32) -> Vec<(u32, u32)> {
    match pattern {
        Pattern::RingAllreduce if n >= 2 => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        Pattern::AllToAll => (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect(),
        Pattern::Broadcast => (1..n).map(|j| (0, j)).collect(),
        _ => Vec::new(),
    }
}

fn op_for(pattern: Pattern) -> OpKind {
    match pattern {
        Pattern::RingAllreduce => OpKind::AllReduce,
        Pattern::AllToAll => OpKind::SendRecv,
        Pattern::Broadcast => OpKind::Broadcast,
    }
}

/// Spine (1-based) carrying an inter-leaf QP.
fn ecmp_spine(qp: u32, spines: usize) -> usize {
    ((qp as u64).wrapping_mul(ECMP_MULTIPLIER) % spines as u64) as usize + 1
}

fn route(topology: &Topology, spines: usize, qp: u32, src: &NicRef, dst: &NicRef) -> Vec<SwitchHop> {
    let ix = topology.index();
    let a = &ix.nic_attachment[src];
    let b = &ix.nic_attachment[dst];
    if a.switch == b.switch {
        return vec![SwitchHop { switch: a.switch.clone(), ingress: a.port.clone(), egress: b.port.clone() }];
    }
    let s = ecmp_spine(qp, spines);
    let up = format!("up{s}");
    let spine = format!("spine{s}");
    let spine_port_for = |leaf: &str| match ix.peer(leaf, &up) {
        Some(Endpoint::Switch(p)) => p.port.clone(),
        _ => unreachable!("every leaf uplinks to every spine"),
    };
    vec![
        SwitchHop { switch: a.switch.clone(), ingress: a.port.clone(), egress: up.clone() },
        SwitchHop { switch: spine, ingress: spine_port_for(&a.switch), egress: spine_port_for(&b.switch) },
        SwitchHop { switch: b.switch.clone(), ingress: up, egress: b.port.clone() },
    ]
}

fn hop_entities(src: &NicRef, dst: &NicRef, hops: &[SwitchHop]) -> Vec<EntityId> {
    let mut out = vec![EntityId::nic(&src.host, &src.nic)];
    for h in hops {
        out.push(EntityId::switch_port(&h.switch, &h.ingress));
        out.push(EntityId::switch(&h.switch));
        out.push(EntityId::switch_port(&h.switch, &h.egress));
    }
    out.push(EntityId::nic(&dst.host, &dst.nic));
    out
}

fn resolve_target(topology: &Topology, spec: &FaultSpec) -> Result<EntityId, HarnessError> {
    let invalid = |m: String| HarnessError::InvalidSpec(m);
    let positional = spec.target.strip_prefix("gpu:").and_then(|rest| {
        let (host, idx) = rest.split_once('/')?;
        let idx: usize = idx.parse().ok()?;
        Some(topology.host(host).and_then(|h| h.gpus.get(idx)).map(|g| EntityId::gpu(&g.uuid)))
    });
    let target = match positional {
        Some(Some(id)) => id,
        Some(None) => return Err(invalid(format!("fault target {} does not exist", spec.target))),
        None => spec.target.parse().map_err(|e| invalid(format!("fault target {}: {e}", spec.target)))?,
    };
    let wanted = match spec.kind {
        FaultKind::LinkCongestion => Layer::SwitchPort,
        FaultKind::GpuThrottle => Layer::Gpu,
        FaultKind::PacketLoss => Layer::Nic,
    };
    if target.layer != wanted {
        return Err(invalid(format!("{:?} fault needs a {} target, got {target}", spec.kind, wanted)));
    }
    if !topology.index().has_entity(&target) {
        return Err(invalid(format!("fault target {target} does not exist")));
    }
    Ok(target)
}

fn expected_cause(kind: FaultKind) -> CauseKind {
    match kind {
        FaultKind::LinkCongestion => CauseKind::NetworkCongestion,
        FaultKind::GpuThrottle => CauseKind::GpuThermalThrottle,
        FaultKind::PacketLoss => CauseKind::PacketLoss,
    }
}

fn validate_workload(w: &WorkloadSpec, cluster: &ClusterSpec) -> Result<(), HarnessError> {
    let invalid = |m: String| Err(HarnessError::InvalidSpec(m));
    if w.app_id.is_empty() || !w.app_id.chars().all(|c| c.is_ascii_hexdigit()) {
        return invalid(format!("app_id {:?} must be hexadecimal", w.app_id));
    }
    if w.iterations == 0 {
        return invalid(format!("workload {} needs at least one iteration", w.app_id));
    }
    if w.channels == 0 || w.sample_interval_secs == 0 {
        return invalid(format!("workload {} needs channels and sample_interval_secs >= 1", w.app_id));
    }
    for slot in &w.placement {
        let known = (0..cluster.hosts).any(|h| hostname(h) == slot.host);
        if !known || slot.gpu >= cluster.gpus_per_host {
            return invalid(format!("workload {} places a rank on missing gpu {}/{}", w.app_id, slot.host, slot.gpu));
        }
    }
    let distinct: BTreeSet<_> = w.placement.iter().map(|s| (&s.host, s.gpu)).collect();
    if distinct.len() != w.placement.len() {
        return invalid(format!("workload {} places two ranks on one gpu", w.app_id));
    }
    Ok(())
}

/// Builds the topology, placements, QP paths and fault schedule.
pub fn plan(scenario: &Scenario) -> Result<Plan, HarnessError> {
    let cluster = &scenario.cluster;
    let topology = generate_cluster(cluster, scenario.seed)?;
    let start = Timestamp::parse_iso(&scenario.start)
        .ok_or_else(|| HarnessError::InvalidSpec(format!("start {:?} is not a timestamp", scenario.start)))?;
    if !(scenario.sampling > 0.0 && scenario.sampling <= 1.0) {
        return Err(HarnessError::InvalidSpec("sampling must be in (0, 1]".into()));
    }
    let duration_secs = scenario.duration();
    let apps: BTreeSet<&str> = scenario.workloads.iter().map(|w| w.app_id.as_str()).collect();
    if apps.len() != scenario.workloads.len() {
        return Err(HarnessError::InvalidSpec("duplicate app_id".into()));
    }

    let mut placements = Vec::new();
    let mut ranks = Vec::new();
    for w in &scenario.workloads {
        validate_workload(w, cluster)?;
        let slots: Vec<(String, usize)> = if w.placement.is_empty() {
            (0..cluster.hosts).flat_map(|h| (0..cluster.gpus_per_host).map(move |g| (hostname(h), g))).collect()
        } else {
            w.placement.iter().map(|s| (s.host.clone(), s.gpu)).collect()
        };
        let mut rs = Vec::new();
        for (rank, (host, g)) in slots.into_iter().enumerate() {
            let gpu = topology.host(&host).expect("validated host").gpus[g].uuid.clone();
            let nic = NicRef { host: host.clone(), nic: nic_id(g) };
            placements.push(Placement {
                app: w.app_id.clone(),
                rank: rank as u32,
                host: host.clone(),
                gpu: gpu.clone(),
                nic: format!("{}/{}", nic.host, nic.nic),
            });
            rs.push(Rank { host, gpu, nic });
        }
        ranks.push(rs);
    }

    let mut qp_rng = rng(scenario.seed, STREAM_QP);
    let mut used = BTreeSet::new();
    let mut planned_qps = Vec::new();
    for (wi, w) in scenario.workloads.iter().enumerate() {
        let rs = &ranks[wi];
        for (src, dst) in pairs(w.pattern, rs.len() as u32) {
            for channel in 0..w.channels {
                let qp = loop {
                    let q = qp_rng.random_range(1..QP_ID_LIMIT);
                    if used.insert(q) {
                        break q;
                    }
                };
                let (s, d) = (&rs[src as usize], &rs[dst as usize]);
                let switch_hops = route(&topology, cluster.spines, qp, &s.nic, &d.nic);
                planned_qps.push(PlannedQp {
                    workload: wi,
                    truth: QpTruth {
                        qp_id: qp,
                        app: w.app_id.clone(),
                        op: op_for(w.pattern),
                        src_rank: src,
                        dst_rank: dst,
                        channel,
                        src_gpu: s.gpu.clone(),
                        dst_gpu: d.gpu.clone(),
                        hops: hop_entities(&s.nic, &d.nic, &switch_hops),
                        bytes: w.iterations * w.bytes_per_op,
                        emitted_first_hop_bytes: 0,
                    },
                    src_nic: s.nic.clone(),
                    dst_nic: d.nic.clone(),
                    switch_hops,
                });
            }
        }
    }

    let mut warnings = Vec::new();
    let mut planned_faults = Vec::new();
    for f in &scenario.faults {
        let target = resolve_target(&topology, f)?;
        if f.start_secs >= f.end_secs || f.end_secs > duration_secs {
            return Err(HarnessError::InvalidSpec(format!(
                "fault on {target} has interval [{}, {}) outside [0, {duration_secs})",
                f.start_secs, f.end_secs
            )));
        }
        let mut apps = BTreeSet::new();
        let mut nics = BTreeSet::new();
        match f.kind {
            FaultKind::GpuThrottle => {
                for (wi, rs) in ranks.iter().enumerate() {
                    if rs.iter().any(|r| r.gpu == target.key) {
                        apps.insert(scenario.workloads[wi].app_id.clone());
                    }
                }
            }
            FaultKind::LinkCongestion | FaultKind::PacketLoss => {
                for q in planned_qps.iter().filter(|q| q.truth.hops.contains(&target)) {
                    apps.insert(q.truth.app.clone());
                    if f.kind == FaultKind::LinkCongestion {
                        nics.insert(q.src_nic.clone());
                        nics.insert(q.dst_nic.clone());
                    }
                }
                if f.kind == FaultKind::PacketLoss {
                    let (h, n) = target.split_composite().expect("nic target");
                    nics.insert(NicRef { host: h.into(), nic: n.into() });
                }
            }
        }
        if apps.is_empty() {
            warnings.push(format!("fault target {target} is not on any active path"));
        }
        planned_faults.push(PlannedFault {
            truth: FaultTruth {
                kind: f.kind,
                target,
                start: start.plus_micros(f.start_secs as i64 * 1_000_000),
                end: start.plus_micros(f.end_secs as i64 * 1_000_000),
                expected_cause: expected_cause(f.kind),
                affected_apps: apps.into_iter().collect(),
            },
            start_secs: f.start_secs,
            end_secs: f.end_secs,
            nics,
        });
    }

    Ok(Plan {
        qps: planned_qps.iter().map(|q| q.truth.clone()).collect(),
        faults: planned_faults.iter().map(|f| f.truth.clone()).collect(),
        topology,
        start,
        duration_secs,
        placements,
        warnings,
        scenario: scenario.clone(),
        ranks,
        planned_qps,
        planned_faults,
    })
}

struct Lines {
    lines: Vec<(Timestamp, String)>,
}

impl Lines {
    fn new() -> Self {
        Lines { lines: Vec::new() }
    }

    fn push(&mut self, ts: Timestamp, line: String) {
        self.lines.push((ts, line));
    }

    fn finish(mut self, header: Option<&str>) -> (String, usize) {
        self.lines.sort_by_key(|(ts, _)| *ts);
        let mut out = String::new();
        if let Some(h) = header {
            out.push_str(h);
            out.push('\n');
        }
        for (_, l) in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        (out, self.lines.len())
    }
}

fn sample(entity: EntityId, metric: &str, ts: Timestamp, value: f64, labels: &[(&str, &str)]) -> MetricSample {
    MetricSample {
        entity,
        metric: metric.to_string(),
        timestamp: ts,
        value,
        labels: labels.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Runs a scenario and returns its telemetry files and manifest.
pub fn simulate(scenario: &Scenario) -> Result<SimOutput, HarnessError> {
    let mut plan = plan(scenario)?;
    let s = &plan.scenario;
    let fx = &s.effects;
    let start = plan.start;
    let at = |secs: u64, micros: i64| start.plus_micros(secs as i64 * 1_000_000 + micros);
    let active = |f: &PlannedFault, t: u64| f.start_secs <= t && t < f.end_secs;

    // Collectives and flows.
    let mut collective = Lines::new();
    let mut flows = Lines::new();
    let mut sampling = rng(s.seed, STREAM_SAMPLING);
    let mut first_hop_bytes: BTreeMap<u32, u64> = BTreeMap::new();
    for (qi, q) in plan.planned_qps.iter().enumerate() {
        let w = &s.workloads[q.workload];
        let src = &plan.ranks[q.workload][q.truth.src_rank as usize];
        let ix = plan.topology.index();
        let (src_ip, dst_ip) = (ix.ip_by_nic[&q.src_nic], ix.ip_by_nic[&q.dst_nic]);
        for k in 0..w.iterations {
            let ts = at(k * w.sample_interval_secs, 100_000 + qi as i64 * 20);
            let rec = CollectiveLogRecord {
                app_id: w.app_id.clone(),
                timestamp: ts,
                op_kind: q.truth.op,
                bytes: w.bytes_per_op,
                src_rank: q.truth.src_rank,
                dst_rank: q.truth.dst_rank,
                src_gpu_uuid: src.gpu.clone(),
                hostname: src.host.clone(),
                channel: q.truth.channel,
                qp_id: q.truth.qp_id,
            };
            collective.push(ts, serialize_collective(&rec));
            for (hi, hop) in q.switch_hops.iter().enumerate() {
                if s.sampling < 1.0 && !sampling.random_bool(s.sampling) {
                    continue;
                }
                let fts = ts.plus_micros(5 * (hi as i64 + 1));
                let fr = FlowRecord {
                    switch_id: hop.switch.clone(),
                    ingress_port: hop.ingress.clone(),
                    egress_port: hop.egress.clone(),
                    timestamp: fts,
                    src_ip,
                    dst_ip,
                    l4_protocol: L4Protocol::Udp,
                    src_port: 49152 + (q.truth.qp_id % 16384) as u16,
                    dst_port: ROCEV2_PORT,
                    qp_id: Some(q.truth.qp_id),
                    sampled_packets: w.bytes_per_op.div_ceil(PACKET_BYTES).max(1),
                    sampled_bytes: w.bytes_per_op,
                };
                if hi == 0 {
                    *first_hop_bytes.entry(q.truth.qp_id).or_default() += w.bytes_per_op;
                }
                flows.push(fts, serialize_flow(&fr));
            }
        }
    }
    for q in &mut plan.qps {
        q.emitted_first_hop_bytes = first_hop_bytes.get(&q.qp_id).copied().unwrap_or(0);
    }

    // Metrics.
    let mut noise = rng(s.seed, STREAM_METRICS);
    let jitter = |r: &mut ChaCha8Rng| r.random_range(0..200_000i64);
    let mut app_lines = Lines::new();
    let mut gpu_lines = Lines::new();
    let mut switch_lines = Lines::new();
    let linked_ports: Vec<(String, String)> = {
        let ix = plan.topology.index();
        ix.peers.keys().map(|p| (p.switch.clone(), p.port.clone())).collect()
    };
    let gpus: Vec<(String, String)> = plan
        .topology
        .hosts
        .iter()
        .flat_map(|h| h.gpus.iter().map(move |g| (h.hostname.clone(), g.uuid.clone())))
        .collect();
    let rate_dist = normal(10.0, 0.2);
    let util_dist = normal(85.0, 2.0);
    let temp_dist = normal(65.0, 1.5);
    let mem_dist = normal(60.0, 1.0);
    let queue_dist = normal(20_000.0, 1_000.0);

    for t in 0..plan.duration_secs {
        for w in &s.workloads {
            if t >= w.span_secs() {
                continue;
            }
            let mut factor = 1.0;
            for f in plan.planned_faults.iter().filter(|f| active(f, t)) {
                if f.truth.affected_apps.contains(&w.app_id) {
                    factor *= match f.truth.kind {
                        FaultKind::LinkCongestion => fx.congestion_iteration_factor,
                        FaultKind::GpuThrottle => fx.throttle_iteration_factor,
                        FaultKind::PacketLoss => fx.loss_iteration_factor,
                    };
                }
            }
            let ts = at(t, jitter(&mut noise));
            let v = round3(rate_dist.sample(&mut noise).max(0.0) * factor);
            app_lines.push(
                ts,
                serialize_metric(&sample(EntityId::app(&w.app_id), "app.iteration_rate", ts, v, &[("app", &w.app_id)])),
            );
        }
        for (host, uuid) in &gpus {
            let throttled = plan
                .planned_faults
                .iter()
                .any(|f| f.truth.kind == FaultKind::GpuThrottle && f.truth.target.key == *uuid && active(f, t));
            let ts = at(t, jitter(&mut noise));
            let (util, temp) = if throttled {
                (fx.throttle_utilization + normal(0.0, 1.0).sample(&mut noise), fx.throttle_temperature + normal(0.0, 0.5).sample(&mut noise))
            } else {
                (util_dist.sample(&mut noise), temp_dist.sample(&mut noise))
            };
            let mem = mem_dist.sample(&mut noise);
            let labels = [("gpu_uuid", uuid.as_str()), ("hostname", host.as_str())];
            for (metric, v) in [
                ("gpu.utilization", util.clamp(0.0, 100.0)),
                ("gpu.temperature", temp),
                ("gpu.memory_used", mem.clamp(0.0, 100.0)),
            ] {
                gpu_lines.push(ts, serialize_metric(&sample(EntityId::gpu(uuid), metric, ts, round3(v), &labels)));
            }
        }
        for (sw, port) in &linked_ports {
            let entity = EntityId::switch_port(sw, port);
            let congested = plan
                .planned_faults
                .iter()
                .any(|f| f.truth.kind == FaultKind::LinkCongestion && f.truth.target == entity && active(f, t));
            let mut v = queue_dist.sample(&mut noise).max(0.0);
            if congested {
                v *= fx.congestion_queue_multiplier;
            }
            let ts = at(t, jitter(&mut noise));
            let labels = [("switch", sw.as_str()), ("port", port.as_str())];
            switch_lines.push(ts, serialize_metric(&sample(entity, "switch.queue_depth", ts, v.round(), &labels)));
        }
    }

    // NIC counters.
    let mut counters_rng = rng(s.seed, STREAM_COUNTERS);
    let mut nic_lines = Lines::new();
    let nics: Vec<NicRef> = plan
        .topology
        .hosts
        .iter()
        .flat_map(|h| h.nics.iter().map(move |n| NicRef { host: h.hostname.clone(), nic: n.nic_id.clone() }))
        .collect();
    for nic in &nics {
        let mut values: Vec<u64> = NicCounter::ALL.iter().map(|_| counters_rng.random_range(0..1_000_000)).collect();
        for t in 0..plan.duration_secs {
            let ts = at(t, counters_rng.random_range(0..1_000));
            for (ci, counter) in NicCounter::ALL.iter().enumerate() {
                let mut inc = match counter {
                    NicCounter::RxBytes | NicCounter::TxBytes => counters_rng.random_range(500_000_000..510_000_000),
                    _ => counters_rng.random_range(0..=NOISY_COUNTER_MAX),
                };
                for f in plan.planned_faults.iter().filter(|f| active(f, t) && f.nics.contains(nic)) {
                    inc += match (f.truth.kind, counter) {
                        (FaultKind::LinkCongestion, NicCounter::CnpReceived) => fx.congestion_cnp_rate,
                        (FaultKind::PacketLoss, NicCounter::OutOfSequence | NicCounter::Retransmits) => {
                            fx.loss_retransmit_rate
                        }
                        _ => 0,
                    };
                }
                if t > 0 {
                    values[ci] += inc;
                }
                let rec = NicCounterRecord {
                    hostname: nic.host.clone(),
                    nic_id: nic.nic.clone(),
                    timestamp: ts,
                    counter: *counter,
                    value: values[ci],
                };
                nic_lines.push(ts, serialize_nic_counter(&rec));
            }
        }
    }

    let mut files = Vec::new();
    let mut line_counts = BTreeMap::new();
    for (name, lines, header) in [
        ("collective.log", collective, None),
        (
            "flows.csv",
            flows,
            Some("# switch,ingress,egress,ts_us,src_ip,dst_ip,proto,src_port,dst_port,qp,packets,bytes"),
        ),
        ("gpu_metrics.log", gpu_lines, None),
        ("app_metrics.log", app_lines, None),
        ("switch_metrics.log", switch_lines, None),
        ("nic_counters.log", nic_lines, None),
    ] {
        let (text, n) = lines.finish(header);
        line_counts.insert(name.to_string(), n);
        files.push((name.to_string(), text));
    }

    let manifest = Manifest {
        seed: s.seed,
        start,
        duration_secs: plan.duration_secs,
        sampling: s.sampling,
        ecmp_multiplier: ECMP_MULTIPLIER,
        placements: plan.placements.clone(),
        qps: plan.qps.clone(),
        faults: plan.faults.clone(),
        warnings: plan.warnings.clone(),
        line_counts,
    };
    Ok(SimOutput { topology: plan.topology, manifest, files })
}

/// A testbed ring job with one fault of random kind on a random entity the
/// job depends on. Faults last 30 s and start between 150 s and 240 s into
/// a 300 s run.
pub fn random_single_fault(seed: u64) -> Result<Scenario, HarnessError> {
    let mut r = rng(seed, STREAM_RANDOM_FAULT);
    let app = format!("{:08x}", r.random::<u32>());
    let mut scenario = Scenario::new(seed, ClusterSpec::testbed(), vec![WorkloadSpec::ring(app, 300)]);
    let p = plan(&scenario)?;
    let kind = *[FaultKind::LinkCongestion, FaultKind::GpuThrottle, FaultKind::PacketLoss]
        .choose(&mut r)
        .expect("non-empty");
    let on_paths = |layer: Layer| -> Vec<EntityId> {
        let set: BTreeSet<EntityId> =
            p.qps.iter().flat_map(|q| q.hops.iter()).filter(|h| h.layer == layer).cloned().collect();
        set.into_iter().collect()
    };
    let candidates = match kind {
        FaultKind::LinkCongestion => on_paths(Layer::SwitchPort),
        FaultKind::PacketLoss => on_paths(Layer::Nic),
        FaultKind::GpuThrottle => p.placements.iter().map(|pl| EntityId::gpu(&pl.gpu)).collect(),
    };
    let target = candidates.choose(&mut r).expect("ring job has paths").to_string();
    let start_secs = r.random_range(150..=240);
    scenario.faults.push(FaultSpec { kind, target, start_secs, end_secs: start_secs + 30 });
    Ok(scenario)
}
