//! Cross-layer dependency graph: application -> GPU -> host -> NIC -> switch
//! port -> switch, plus switch-to-switch fabric links.
//!
//! Every edge records the evidence that produced it, either an index range
//! into the snapshot or a topology element.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Endpoint, EntityId, Layer, TelemetrySnapshot, TimeRange};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("graph document: {0}")]
    Import(String),
    #[error("edge {0} violates its relation signature")]
    LayerViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    RunsOn,
    HostedBy,
    AttachedTo,
    UplinksTo,
    PortOf,
    FabricLink,
}

impl Relation {
    /// (from-layer, to-layer) this relation may connect.
    pub fn signature(self) -> (Layer, Layer) {
        match self {
            Relation::RunsOn => (Layer::Application, Layer::Gpu),
            Relation::HostedBy => (Layer::Gpu, Layer::Host),
            Relation::AttachedTo => (Layer::Host, Layer::Nic),
            Relation::UplinksTo => (Layer::Nic, Layer::SwitchPort),
            Relation::PortOf => (Layer::SwitchPort, Layer::Switch),
            Relation::FabricLink => (Layer::SwitchPort, Layer::SwitchPort),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::RunsOn => "runs_on",
            Relation::HostedBy => "hosted_by",
            Relation::AttachedTo => "attached_to",
            Relation::UplinksTo => "uplinks_to",
            Relation::PortOf => "port_of",
            Relation::FabricLink => "fabric_link",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: EntityId,
    pub to: EntityId,
    pub relation: Relation,
}

impl Edge {
    fn new(from: EntityId, to: EntityId, relation: Relation) -> Self {
        Edge { from, to, relation }
    }

    pub fn respects_signature(&self) -> bool {
        let (a, b) = self.relation.signature();
        self.from.layer == a && self.to.layer == b
    }
}

/// What justified an edge. Record references give the first matching record
/// index in the snapshot sequence and how many records matched.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Evidence {
    Collective { first: usize, count: usize },
    Metric { first: usize, count: usize },
    NicCounter { first: usize, count: usize },
    Topology { element: String },
}

impl Evidence {
    fn bump(&mut self, index: usize) {
        match self {
            Evidence::Collective { first, count }
            | Evidence::Metric { first, count }
            | Evidence::NicCounter { first, count } => {
                *first = (*first).min(index);
                *count += 1;
            }
            Evidence::Topology { .. } => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Dot,
    Structured,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub apps: usize,
    pub runs_on_edges: usize,
    pub collective_records_used: usize,
    pub collective_records_outside_horizon: usize,
    pub gpus_without_app: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GraphOptions {
    /// Only evidence with timestamps inside this range creates app edges.
    /// `None` means the snapshot's whole time range.
    pub evidence_horizon: Option<TimeRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphDocument {
    nodes: Vec<EntityId>,
    edges: Vec<EdgeDocument>,
    coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EdgeDocument {
    from: EntityId,
    to: EntityId,
    relation: Relation,
    evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, Default)]
pub struct DependencyGraph {
    nodes: BTreeSet<EntityId>,
    edges: BTreeMap<Edge, Vec<Evidence>>,
    coverage: Coverage,
    adjacency: BTreeMap<EntityId, Vec<(EntityId, Relation)>>,
}

impl PartialEq for DependencyGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges && self.coverage == other.coverage
    }
}

impl DependencyGraph {
    pub fn nodes(&self) -> &BTreeSet<EntityId> {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (&Edge, &[Evidence])> {
        self.edges.iter().map(|(e, ev)| (e, ev.as_slice()))
    }

    pub fn edge_set(&self) -> BTreeSet<Edge> {
        self.edges.keys().cloned().collect()
    }

    pub fn coverage(&self) -> &Coverage {
        &self.coverage
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.nodes.contains(id)
    }

    pub fn apps(&self) -> Vec<EntityId> {
        self.nodes.iter().filter(|n| n.layer == Layer::Application).cloned().collect()
    }

    /// Outgoing neighbours (fabric links are listed in both directions).
    pub fn neighbours(&self, id: &EntityId) -> &[(EntityId, Relation)] {
        self.adjacency.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    fn add_edge(&mut self, from: EntityId, to: EntityId, relation: Relation, evidence: Evidence) {
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        let (from, to) = if relation == Relation::FabricLink && to < from { (to, from) } else { (from, to) };
        let list = self.edges.entry(Edge::new(from, to, relation)).or_default();
        let same_kind = list
            .iter_mut()
            .find(|e| std::mem::discriminant(*e) == std::mem::discriminant(&evidence));
        match (&evidence, same_kind) {
            (Evidence::Topology { .. }, _) | (_, None) => {
                if !list.contains(&evidence) {
                    list.push(evidence);
                }
            }
            (
                Evidence::Collective { first, .. } | Evidence::Metric { first, .. } | Evidence::NicCounter { first, .. },
                Some(existing),
            ) => existing.bump(*first),
        }
        list.sort();
    }

    fn finish(mut self) -> Self {
        let mut adj: BTreeMap<EntityId, Vec<(EntityId, Relation)>> = BTreeMap::new();
        for e in self.edges.keys() {
            adj.entry(e.from.clone()).or_default().push((e.to.clone(), e.relation));
            if e.relation == Relation::FabricLink {
                adj.entry(e.to.clone()).or_default().push((e.from.clone(), e.relation));
            }
        }
        self.adjacency = adj;
        self
    }

    /// Checks relation signatures and acyclicity of the layered subgraph.
    pub fn check_invariants(&self) -> Result<(), GraphError> {
        for (e, ev) in &self.edges {
            if !e.respects_signature() || ev.is_empty() {
                return Err(GraphError::LayerViolation(format!("{} -{}-> {}", e.from, e.relation.as_str(), e.to)));
            }
        }
        // Layered relations strictly increase the layer rank, so any cycle
        // would have to be made of fabric links, which are excluded.
        Ok(())
    }
}

pub fn build_graph(snapshot: &TelemetrySnapshot) -> DependencyGraph {
    build_graph_with(snapshot, &GraphOptions::default())
}

pub fn build_graph_with(snapshot: &TelemetrySnapshot, options: &GraphOptions) -> DependencyGraph {
    let topo = snapshot.topology();
    let mut g = DependencyGraph::default();

    for s in &topo.switches {
        let sw = EntityId::switch(&s.switch_id);
        g.nodes.insert(sw.clone());
        for p in &s.ports {
            g.add_edge(
                EntityId::switch_port(&s.switch_id, p),
                sw.clone(),
                Relation::PortOf,
                Evidence::Topology { element: format!("switch {}", s.switch_id) },
            );
        }
    }
    for h in &topo.hosts {
        let host = EntityId::host(&h.hostname);
        g.nodes.insert(host.clone());
        for gpu in &h.gpus {
            g.add_edge(
                EntityId::gpu(&gpu.uuid),
                host.clone(),
                Relation::HostedBy,
                Evidence::Topology { element: format!("host {}", h.hostname) },
            );
        }
        for n in &h.nics {
            g.add_edge(
                host.clone(),
                EntityId::nic(&h.hostname, &n.nic_id),
                Relation::AttachedTo,
                Evidence::Topology { element: format!("host {}", h.hostname) },
            );
        }
    }
    for l in &topo.links {
        let element = format!("link {} <-> {}", l.a, l.b);
        match &l.b {
            Endpoint::Nic(nr) => {
                g.add_edge(nr.entity(), l.a.entity(), Relation::UplinksTo, Evidence::Topology { element })
            }
            Endpoint::Switch(pr) => {
                g.add_edge(l.a.entity(), pr.entity(), Relation::FabricLink, Evidence::Topology { element })
            }
        }
    }

    for (i, m) in snapshot.metrics().iter().enumerate() {
        match m.entity.layer {
            Layer::Gpu => {
                if let Some(h) = m.labels.get("hostname") {
                    let edge = Edge::new(m.entity.clone(), EntityId::host(h), Relation::HostedBy);
                    if g.edges.contains_key(&edge) {
                        g.add_edge(edge.from, edge.to, edge.relation, Evidence::Metric { first: i, count: 1 });
                    }
                }
            }
            Layer::Nic => {
                if let Some((host, _)) = m.entity.split_composite() {
                    let edge = Edge::new(EntityId::host(host), m.entity.clone(), Relation::AttachedTo);
                    if g.edges.contains_key(&edge) {
                        g.add_edge(edge.from, edge.to, edge.relation, Evidence::Metric { first: i, count: 1 });
                    }
                }
            }
            _ => {}
        }
    }
    for (i, c) in snapshot.nic_counters().iter().enumerate() {
        let edge = Edge::new(EntityId::host(&c.hostname), c.entity(), Relation::AttachedTo);
        if g.edges.contains_key(&edge) {
            g.add_edge(edge.from, edge.to, edge.relation, Evidence::NicCounter { first: i, count: 1 });
        }
    }

    let horizon = options.evidence_horizon.unwrap_or_else(TimeRange::everything);
    let mut used = 0;
    for (i, r) in snapshot.collectives().iter().enumerate() {
        if !horizon.contains(r.timestamp) {
            g.coverage.collective_records_outside_horizon += 1;
            continue;
        }
        used += 1;
        let gpu = EntityId::gpu(&r.src_gpu_uuid);
        g.add_edge(EntityId::app(&r.app_id), gpu.clone(), Relation::RunsOn, Evidence::Collective { first: i, count: 1 });
        let hosted = Edge::new(gpu, EntityId::host(&r.hostname), Relation::HostedBy);
        if g.edges.contains_key(&hosted) {
            g.add_edge(hosted.from, hosted.to, hosted.relation, Evidence::Collective { first: i, count: 1 });
        }
    }

    let gpus_with_app: BTreeSet<&EntityId> =
        g.edges.keys().filter(|e| e.relation == Relation::RunsOn).map(|e| &e.to).collect();
    g.coverage.apps = g.nodes.iter().filter(|n| n.layer == Layer::Application).count();
    g.coverage.runs_on_edges = g.edges.keys().filter(|e| e.relation == Relation::RunsOn).count();
    g.coverage.collective_records_used = used;
    g.coverage.gpus_without_app =
        g.nodes.iter().filter(|n| n.layer == Layer::Gpu && !gpus_with_app.contains(n)).count();
    g.finish()
}

/// Entities of `layer` that `app` depends on.
///
/// Walks layered edges downward from the application. For switch-port and
/// switch queries the walk additionally crosses one fabric link from each
/// reached switch, so a leaf's spines (and the ports on both ends) count as
/// dependencies.
pub fn app_entities(g: &DependencyGraph, app: &EntityId, layer: Layer) -> Result<BTreeSet<EntityId>, GraphError> {
    if app.layer != Layer::Application || !g.contains(app) {
        return Err(GraphError::UnknownApp(app.key.clone()));
    }
    if layer == Layer::Application {
        return Ok(BTreeSet::from([app.clone()]));
    }
    let mut seen = BTreeSet::from([app.clone()]);
    let mut queue = VecDeque::from([app.clone()]);
    while let Some(n) = queue.pop_front() {
        for (next, rel) in g.neighbours(&n) {
            if *rel != Relation::FabricLink && seen.insert(next.clone()) {
                queue.push_back(next.clone());
            }
        }
    }
    if layer.is_fabric() {
        let reached_switches: Vec<EntityId> = seen.iter().filter(|n| n.layer == Layer::Switch).cloned().collect();
        for sw in reached_switches {
            let sw_id = sw.key.as_str();
            let ports: Vec<EntityId> = g
                .nodes
                .range(EntityId::switch_port(sw_id, "")..)
                .take_while(|n| n.layer == Layer::SwitchPort && n.key.starts_with(&format!("{sw_id}/")))
                .cloned()
                .collect();
            for port in ports {
                let peers: Vec<EntityId> = g
                    .neighbours(&port)
                    .iter()
                    .filter(|(_, r)| *r == Relation::FabricLink)
                    .map(|(p, _)| p.clone())
                    .collect();
                if peers.is_empty() {
                    continue;
                }
                seen.insert(port.clone());
                for peer in peers {
                    if let Some((peer_switch, _)) = peer.split_composite() {
                        seen.insert(EntityId::switch(peer_switch));
                    }
                    seen.insert(peer);
                }
            }
        }
    }
    Ok(seen.into_iter().filter(|n| n.layer == layer).collect())
}

/// Restriction of `g` to `app` and everything it depends on.
pub fn app_subgraph(g: &DependencyGraph, app: &EntityId) -> Result<DependencyGraph, GraphError> {
    let mut keep = BTreeSet::new();
    for layer in Layer::ALL {
        keep.extend(app_entities(g, app, layer)?);
    }
    let mut sub = DependencyGraph { nodes: keep.clone(), ..Default::default() };
    for (e, ev) in &g.edges {
        if keep.contains(&e.from) && keep.contains(&e.to) {
            if e.relation == Relation::RunsOn && &e.from != app {
                continue;
            }
            sub.edges.insert(e.clone(), ev.clone());
        }
    }
    sub.coverage = Coverage {
        apps: 1,
        runs_on_edges: sub.edges.keys().filter(|e| e.relation == Relation::RunsOn).count(),
        ..Default::default()
    };
    Ok(sub.finish())
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn export_graph(g: &DependencyGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::Structured => {
            let doc = GraphDocument {
                nodes: g.nodes.iter().cloned().collect(),
                edges: g
                    .edges
                    .iter()
                    .map(|(e, ev)| EdgeDocument {
                        from: e.from.clone(),
                        to: e.to.clone(),
                        relation: e.relation,
                        evidence: ev.clone(),
                    })
                    .collect(),
                coverage: g.coverage.clone(),
            };
            serde_json::to_string_pretty(&doc).expect("graph serialization cannot fail")
        }
        GraphFormat::Dot => {
            let mut out = String::from("digraph dependency {\n  rankdir=TB;\n");
            for n in &g.nodes {
                let _ = writeln!(
                    out,
                    "  \"{}\" [label=\"{}\", layer=\"{}\"];",
                    dot_escape(&n.to_string()),
                    dot_escape(&n.key),
                    n.layer
                );
            }
            for e in g.edges.keys() {
                let style = if e.relation == Relation::FabricLink { ", dir=none" } else { "" };
                let _ = writeln!(
                    out,
                    "  \"{}\" -> \"{}\" [label=\"{}\"{style}];",
                    dot_escape(&e.from.to_string()),
                    dot_escape(&e.to.to_string()),
                    e.relation.as_str()
                );
            }
            out.push_str("}\n");
            out
        }
    }
}

/// Reads the structured form produced by [`export_graph`].
pub fn import_graph(text: &str) -> Result<DependencyGraph, GraphError> {
    let doc: GraphDocument = serde_json::from_str(text).map_err(|e| GraphError::Import(e.to_string()))?;
    let mut g = DependencyGraph { nodes: doc.nodes.into_iter().collect(), coverage: doc.coverage, ..Default::default() };
    for e in doc.edges {
        if !g.nodes.contains(&e.from) || !g.nodes.contains(&e.to) {
            return Err(GraphError::Import(format!("edge {} -> {} references unknown node", e.from, e.to)));
        }
        g.edges.insert(Edge::new(e.from, e.to, e.relation), e.evidence);
    }
    let g = g.finish();
    g.check_invariants()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_exports() {
        let g = DependencyGraph::default();
        let s = export_graph(&g, GraphFormat::Structured);
        assert_eq!(import_graph(&s).unwrap(), g);
        assert_eq!(export_graph(&g, GraphFormat::Dot), "digraph dependency {\n  rankdir=TB;\n}\n");
    }

    #[test]
    fn signatures() {
        for r in [
            Relation::RunsOn,
            Relation::HostedBy,
            Relation::AttachedTo,
            Relation::UplinksTo,
            Relation::PortOf,
            Relation::FabricLink,
        ] {
            let (a, b) = r.signature();
            assert!(a <= b, "{r:?} must point down the stack");
        }
    }

    #[test]
    fn import_rejects_dangling_edges() {
        let doc = r#"{"nodes":["host:h"],"edges":[{"from":"gpu:GPU-00000001","to":"host:h","relation":"hosted_by","evidence":[]}],"coverage":{"apps":0,"runs_on_edges":0,"collective_records_used":0,"collective_records_outside_horizon":0,"gpus_without_app":0}}"#;
        assert!(import_graph(doc).is_err());
    }
}
