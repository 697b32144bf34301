//! GPU-to-GPU fabric path reconstruction per queue pair.
//!
//! Collective records give the QPs a rank pair uses; flow records sampled at
//! switches give (ingress, egress) per hop. The walk starts at the source
//! NIC's attachment and follows observed egress ports. An unobserved switch
//! is crossed only when exactly one topology-consistent egress exists.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgraph::{DependencyGraph, Relation};
use crate::model::{
    Endpoint, EntityId, FlowRecord, Layer, NicRef, PortRef, TelemetrySnapshot, Topology, TopologyIndex,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("unknown nic {0}")]
    UnknownNic(String),
    #[error("cannot resolve gpu for rank {rank} of {app}")]
    UnresolvedRank { app: String, rank: u32 },
    #[error("inconsistent flows for qp {qp}: {detail}")]
    Inconsistent { qp: u32, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopBytes {
    pub switch: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathTrace {
    pub app: String,
    pub src_gpu: EntityId,
    pub dst_gpu: EntityId,
    pub qp_id: u32,
    /// Source NIC, then (ingress port, switch, egress port) per switch, then
    /// destination NIC.
    pub hops: Vec<EntityId>,
    /// Forward bytes sampled at each switch on the path, in path order.
    pub per_hop_bytes: Vec<HopBytes>,
    /// Switches crossed without a flow record.
    pub inferred: Vec<EntityId>,
    pub complete: bool,
}

impl PathTrace {
    pub fn switches(&self) -> impl Iterator<Item = &EntityId> {
        self.hops.iter().filter(|h| h.layer == Layer::Switch)
    }

    pub fn reached_destination(&self) -> bool {
        self.hops.len() > 1 && self.hops.last().is_some_and(|h| h.layer == Layer::Nic)
    }
}

/// Result of [`assemble_path`] before app and GPU labels are attached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledPath {
    pub hops: Vec<EntityId>,
    pub per_hop_bytes: Vec<HopBytes>,
    pub inferred: Vec<EntityId>,
    pub complete: bool,
}

/// All QPs the app used from `src_rank` to `dst_rank`, ascending.
pub fn qps_for_pair(
    snapshot: &TelemetrySnapshot,
    app: &str,
    src_rank: u32,
    dst_rank: u32,
) -> Result<Vec<u32>, PathError> {
    if !snapshot.has_app(app) {
        return Err(PathError::UnknownApp(app.to_string()));
    }
    let qps: BTreeSet<u32> = snapshot
        .collectives_for_app(app)
        .filter(|r| r.src_rank == src_rank && r.dst_rank == dst_rank)
        .map(|r| r.qp_id)
        .collect();
    Ok(qps.into_iter().collect())
}

struct Observation {
    ingress: String,
    egress: String,
    bytes: u64,
}

/// Switch hop counts to `target` over switch-to-switch links.
fn switch_distances(ix: &TopologyIndex, target: &str) -> BTreeMap<String, usize> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (p, peer) in &ix.peers {
        if let Endpoint::Switch(q) = peer {
            adj.entry(p.switch.as_str()).or_default().push(q.switch.as_str());
        }
    }
    let mut dist = BTreeMap::from([(target.to_string(), 0usize)]);
    let mut queue = VecDeque::from([target]);
    while let Some(s) = queue.pop_front() {
        let d = dist[s];
        for &n in adj.get(s).map(Vec::as_slice).unwrap_or(&[]) {
            if !dist.contains_key(n) {
                dist.insert(n.to_string(), d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

fn nic_entity(n: &NicRef) -> EntityId {
    EntityId::nic(&n.host, &n.nic)
}

/// Reconstructs the hop chain of one QP from `src_nic` to `dst_nic`.
///
/// Only forward records (source and destination IPs of the two NICs) take
/// part. With no forward records the result has empty hops.
pub fn assemble_path(
    topology: &Topology,
    flows: &[&FlowRecord],
    src_nic: &NicRef,
    dst_nic: &NicRef,
) -> Result<AssembledPath, PathError> {
    let ix = topology.index();
    assemble_with_index(&ix, flows, src_nic, dst_nic)
}

fn assemble_with_index(
    ix: &TopologyIndex,
    flows: &[&FlowRecord],
    src_nic: &NicRef,
    dst_nic: &NicRef,
) -> Result<AssembledPath, PathError> {
    let unknown = |n: &NicRef| PathError::UnknownNic(format!("{}/{}", n.host, n.nic));
    let start = ix.nic_attachment.get(src_nic).ok_or_else(|| unknown(src_nic))?.clone();
    let end = ix.nic_attachment.get(dst_nic).ok_or_else(|| unknown(dst_nic))?.clone();
    let src_ip = ix.ip_by_nic[src_nic];
    let dst_ip = ix.ip_by_nic[dst_nic];

    let forward: Vec<&FlowRecord> =
        flows.iter().copied().filter(|f| f.src_ip == src_ip && f.dst_ip == dst_ip).collect();
    if forward.is_empty() {
        return Ok(AssembledPath { hops: Vec::new(), per_hop_bytes: Vec::new(), inferred: Vec::new(), complete: false });
    }
    let qp = forward[0].qp_id.unwrap_or(0);
    let inconsistent = |detail: String| PathError::Inconsistent { qp, detail };

    let mut observed: BTreeMap<&str, Observation> = BTreeMap::new();
    for f in &forward {
        let o = observed.entry(f.switch_id.as_str()).or_insert_with(|| Observation {
            ingress: f.ingress_port.clone(),
            egress: f.egress_port.clone(),
            bytes: 0,
        });
        if o.egress != f.egress_port || o.ingress != f.ingress_port {
            return Err(inconsistent(format!(
                "switch {} seen with {}->{} and {}->{}",
                f.switch_id, o.ingress, o.egress, f.ingress_port, f.egress_port
            )));
        }
        o.bytes += f.sampled_bytes;
    }

    let dist = switch_distances(ix, &end.switch);
    let mut hops = vec![nic_entity(src_nic)];
    let mut per_hop_bytes = Vec::new();
    let mut inferred = Vec::new();
    let mut visited = BTreeSet::new();
    let (mut switch, mut ingress) = (start.switch, start.port);
    let mut reached = false;

    loop {
        if !visited.insert(switch.clone()) {
            return Err(inconsistent(format!("path revisits switch {switch}")));
        }
        hops.push(EntityId::switch_port(&switch, &ingress));
        hops.push(EntityId::switch(&switch));
        let egress = match observed.get(switch.as_str()) {
            Some(o) => {
                if o.ingress != ingress {
                    return Err(inconsistent(format!(
                        "switch {switch} recorded ingress {} but path arrives on {ingress}",
                        o.ingress
                    )));
                }
                per_hop_bytes.push(HopBytes { switch: switch.clone(), bytes: o.bytes });
                o.egress.clone()
            }
            None => {
                let Some(choice) = infer_egress(ix, &dist, &observed, &switch, &ingress, dst_nic) else {
                    break;
                };
                inferred.push(EntityId::switch(&switch));
                per_hop_bytes.push(HopBytes { switch: switch.clone(), bytes: 0 });
                choice
            }
        };
        hops.push(EntityId::switch_port(&switch, &egress));
        match ix.peer(&switch, &egress) {
            Some(Endpoint::Nic(n)) if n == dst_nic => {
                hops.push(nic_entity(dst_nic));
                reached = true;
                break;
            }
            Some(Endpoint::Nic(n)) => {
                return Err(inconsistent(format!("egress {switch}/{egress} leads to {}/{}", n.host, n.nic)));
            }
            Some(Endpoint::Switch(next)) => {
                switch = next.switch.clone();
                ingress = next.port.clone();
            }
            None => return Err(inconsistent(format!("egress {switch}/{egress} has no link"))),
        }
    }

    if let Some(stray) = observed.keys().find(|s| reached && !visited.contains(**s)) {
        return Err(inconsistent(format!("switch {stray} observed off the reconstructed path")));
    }
    let complete = reached && inferred.is_empty();
    Ok(AssembledPath { hops, per_hop_bytes, inferred, complete })
}

/// Egress port for an unobserved switch: the unique port moving one step
/// closer to the destination, or among several, the unique one whose next
/// switch was observed.
fn infer_egress(
    ix: &TopologyIndex,
    dist: &BTreeMap<String, usize>,
    observed: &BTreeMap<&str, Observation>,
    switch: &str,
    ingress: &str,
    dst_nic: &NicRef,
) -> Option<String> {
    let here = *dist.get(switch)?;
    let ports = ix.switch_ports.get(switch)?;
    let mut candidates: Vec<(&String, Option<&PortRef>)> = Vec::new();
    for p in ports.iter().filter(|p| p.as_str() != ingress) {
        match ix.peer(switch, p) {
            Some(Endpoint::Nic(n)) if n == dst_nic && here == 0 => candidates.push((p, None)),
            Some(Endpoint::Switch(next)) if here > 0 && dist.get(&next.switch) == Some(&(here - 1)) => {
                candidates.push((p, Some(next)))
            }
            _ => {}
        }
    }
    if candidates.len() == 1 {
        return Some(candidates[0].0.clone());
    }
    let seen: Vec<&String> = candidates
        .iter()
        .filter(|(_, next)| next.is_some_and(|n| observed.contains_key(n.switch.as_str())))
        .map(|(p, _)| *p)
        .collect();
    (seen.len() == 1).then(|| seen[0].clone())
}

struct RankInfo {
    gpu: String,
    host: String,
}

fn rank_table(snapshot: &TelemetrySnapshot, app: &str) -> BTreeMap<u32, RankInfo> {
    let mut out = BTreeMap::new();
    for r in snapshot.collectives_for_app(app) {
        out.entry(r.src_rank).or_insert_with(|| RankInfo { gpu: r.src_gpu_uuid.clone(), host: r.hostname.clone() });
    }
    out
}

/// NICs of the GPU's host according to the dependency graph.
fn nics_via_graph(graph: &DependencyGraph, gpu: &EntityId) -> Vec<NicRef> {
    let mut nics = Vec::new();
    for (host, rel) in graph.neighbours(gpu) {
        if *rel != Relation::HostedBy {
            continue;
        }
        for (nic, rel) in graph.neighbours(host) {
            if *rel == Relation::AttachedTo {
                if let Some((h, n)) = nic.split_composite() {
                    nics.push(NicRef { host: h.to_string(), nic: n.to_string() });
                }
            }
        }
    }
    nics
}

fn pick_nic(ix: &TopologyIndex, nics: &[NicRef], seen_ips: &BTreeSet<IpAddr>) -> Option<NicRef> {
    nics.iter()
        .find(|n| ix.ip_by_nic.get(*n).is_some_and(|ip| seen_ips.contains(ip)))
        .or_else(|| nics.first())
        .cloned()
}

/// Paths for every QP the app used from `src_rank` to `dst_rank`. A QP
/// with no sampled flows whose destination GPU cannot be resolved is left out.
pub fn trace(
    graph: &DependencyGraph,
    snapshot: &TelemetrySnapshot,
    app: &str,
    src_rank: u32,
    dst_rank: u32,
) -> Result<Vec<PathTrace>, PathError> {
    if !graph.contains(&EntityId::app(app)) {
        return Err(PathError::UnknownApp(app.to_string()));
    }
    let qps = qps_for_pair(snapshot, app, src_rank, dst_rank)?;
    if qps.is_empty() {
        return Ok(Vec::new());
    }
    let ix = snapshot.topology_index();
    let ranks = rank_table(snapshot, app);
    let unresolved = |rank| PathError::UnresolvedRank { app: app.to_string(), rank };
    let src = ranks.get(&src_rank).ok_or_else(|| unresolved(src_rank))?;
    let src_gpu = EntityId::gpu(&src.gpu);

    let pair_dst_ips: BTreeSet<IpAddr> = qps.iter().flat_map(|q| snapshot.flows_for_qp(*q)).map(|f| f.dst_ip).collect();
    let mut out = Vec::with_capacity(qps.len());
    for qp in qps {
        let flows: Vec<&FlowRecord> = snapshot.flows_for_qp(qp).collect();
        let src_ips: BTreeSet<IpAddr> = flows.iter().map(|f| f.src_ip).collect();
        let dst_ips: BTreeSet<IpAddr> = flows.iter().map(|f| f.dst_ip).collect();

        let dst_gpu = match ranks.get(&dst_rank) {
            Some(d) => EntityId::gpu(&d.gpu),
            None => match gpu_behind_ip(ix, &dst_ips).or_else(|| gpu_behind_ip(ix, &pair_dst_ips)) {
                Some(g) => g,
                // Nothing sampled for this QP or its siblings: no evidence to trace.
                None if flows.is_empty() => continue,
                None => return Err(unresolved(dst_rank)),
            },
        };
        let src_nic = pick_nic(ix, &nics_via_graph(graph, &src_gpu), &src_ips)
            .or_else(|| pick_nic(ix, &host_nics(ix, &src.host), &src_ips));
        let dst_host = ix.gpu_host.get(&dst_gpu.key).cloned().unwrap_or_default();
        let dst_nic = pick_nic(ix, &nics_via_graph(graph, &dst_gpu), &dst_ips)
            .or_else(|| pick_nic(ix, &host_nics(ix, &dst_host), &dst_ips));

        let assembled = match (src_nic, dst_nic) {
            (Some(s), Some(d)) => assemble_with_index(ix, &flows, &s, &d)?,
            _ => AssembledPath { hops: Vec::new(), per_hop_bytes: Vec::new(), inferred: Vec::new(), complete: false },
        };
        out.push(PathTrace {
            app: app.to_string(),
            src_gpu: src_gpu.clone(),
            dst_gpu,
            qp_id: qp,
            hops: assembled.hops,
            per_hop_bytes: assembled.per_hop_bytes,
            inferred: assembled.inferred,
            complete: assembled.complete,
        });
    }
    Ok(out)
}

fn host_nics(ix: &TopologyIndex, host: &str) -> Vec<NicRef> {
    ix.host_nics
        .get(host)
        .into_iter()
        .flatten()
        .map(|n| NicRef { host: host.to_string(), nic: n.clone() })
        .collect()
}

/// GPU behind the NIC owning one of `ips`. A single-GPU host resolves
/// directly; otherwise GPUs and NICs are paired by position when the host
/// has as many of one as the other.
fn gpu_behind_ip(ix: &TopologyIndex, ips: &BTreeSet<IpAddr>) -> Option<EntityId> {
    ips.iter().find_map(|ip| {
        let nic = ix.nic_by_ip.get(ip)?;
        let gpus = ix.host_gpus.get(&nic.host)?;
        if let [only] = gpus.as_slice() {
            return Some(EntityId::gpu(only));
        }
        let nics = ix.host_nics.get(&nic.host)?;
        if nics.len() != gpus.len() {
            return None;
        }
        let pos = nics.iter().position(|n| *n == nic.nic)?;
        Some(EntityId::gpu(&gpus[pos]))
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub qp_id: u32,
    pub src_rank: u32,
    pub dst_rank: u32,
    /// Largest per-switch sum, i.e. the volume seen by the best-observed hop.
    pub total_bytes: u64,
    /// Bytes per observing switch, by switch name.
    pub per_hop: Vec<HopBytes>,
}

/// Sampled bytes per QP of the app, by qp_id. Reverse traffic counts here.
pub fn volume_breakdown(snapshot: &TelemetrySnapshot, app: &str) -> Vec<VolumeRow> {
    let mut pairs: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    for r in snapshot.collectives_for_app(app) {
        pairs.entry(r.qp_id).or_insert((r.src_rank, r.dst_rank));
    }
    pairs
        .into_iter()
        .filter(|(qp, _)| snapshot.app_for_qp(*qp) == Some(app))
        .filter_map(|(qp, (src_rank, dst_rank))| {
            let mut by_switch: BTreeMap<&str, u64> = BTreeMap::new();
            for f in snapshot.flows_for_qp(qp) {
                *by_switch.entry(f.switch_id.as_str()).or_default() += f.sampled_bytes;
            }
            if by_switch.is_empty() {
                return None;
            }
            let total_bytes = by_switch.values().copied().max().unwrap_or(0);
            let per_hop = by_switch.into_iter().map(|(s, b)| HopBytes { switch: s.to_string(), bytes: b }).collect();
            Some(VolumeRow { qp_id: qp, src_rank, dst_rank, total_bytes, per_hop })
        })
        .collect()
}

/// Topology in dot form with the traced hops highlighted.
pub fn path_dot(topology: &Topology, trace: &PathTrace) -> String {
    let on_path: BTreeSet<String> = trace
        .hops
        .iter()
        .filter(|h| matches!(h.layer, Layer::Switch | Layer::Nic))
        .map(|h| h.key.clone())
        .collect();
    let mut out = format!("graph qp_{} {{\n", trace.qp_id);
    let style = |key: &str| if on_path.contains(key) { " [color=red, penwidth=2]" } else { "" };
    for s in &topology.switches {
        let _ = writeln!(out, "  \"{}\"{};", s.switch_id, style(&s.switch_id));
    }
    for h in &topology.hosts {
        for n in &h.nics {
            let key = format!("{}/{}", h.hostname, n.nic_id);
            let _ = writeln!(out, "  \"{key}\"{};", style(&key));
        }
    }
    let ports: BTreeSet<String> =
        trace.hops.iter().filter(|h| h.layer == Layer::SwitchPort).map(|h| h.key.clone()).collect();
    for l in &topology.links {
        let (b_node, b_port) = match &l.b {
            Endpoint::Switch(p) => (p.switch.clone(), Some(p.to_string())),
            Endpoint::Nic(n) => (format!("{}/{}", n.host, n.nic), None),
        };
        let used = ports.contains(&l.a.to_string()) && b_port.as_ref().is_none_or(|p| ports.contains(p));
        let attr = if used { " [color=red, penwidth=2]" } else { "" };
        let _ = writeln!(out, "  \"{}\" -- \"{}\" [label=\"{}\"]{attr};", l.a.switch, b_node, l.a.port);
    }
    out.push_str("}\n");
    out
}
