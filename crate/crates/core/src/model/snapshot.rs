//! Time-ordered store of everything ingested, plus lookup indexes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::entity::{EntityId, Layer};
use super::records::{CollectiveLogRecord, FlowRecord, MetricSample, NicCounterRecord};
use super::time::{TimeRange, Timestamp};
use super::topology::{Topology, TopologyIndex};

const ARCHIVE_FORMAT: &str = "assure-snapshot";
const ARCHIVE_VERSION: u32 = 1;

/// Entities and metric names seen in telemetry but unknown to the
/// topology or registry, with occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantine {
    pub entities: BTreeMap<String, usize>,
    pub metrics: BTreeMap<String, usize>,
}

impl Quarantine {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.metrics.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
struct SnapshotIndex {
    topo: TopologyIndex,
    by_app: BTreeMap<String, Vec<usize>>,
    qp_app: BTreeMap<u32, String>,
    flows_by_qp: BTreeMap<u32, Vec<usize>>,
    metrics_by_entity: BTreeMap<EntityId, BTreeMap<String, Vec<usize>>>,
}

#[derive(Debug, Clone)]
pub struct TelemetrySnapshot {
    topology: Topology,
    collectives: Vec<CollectiveLogRecord>,
    flows: Vec<FlowRecord>,
    metrics: Vec<MetricSample>,
    nic_counters: Vec<NicCounterRecord>,
    quarantine: Quarantine,
    index: SnapshotIndex,
}

impl PartialEq for TelemetrySnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.topology == other.topology
            && self.collectives == other.collectives
            && self.flows == other.flows
            && self.metrics == other.metrics
            && self.nic_counters == other.nic_counters
            && self.quarantine == other.quarantine
    }
}

#[derive(Serialize)]
struct ArchiveRef<'a> {
    format: &'static str,
    version: u32,
    topology: &'a Topology,
    collectives: &'a [CollectiveLogRecord],
    flows: &'a [FlowRecord],
    metrics: &'a [MetricSample],
    nic_counters: &'a [NicCounterRecord],
    quarantine: &'a Quarantine,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveOwned {
    format: String,
    version: u32,
    topology: Topology,
    collectives: Vec<CollectiveLogRecord>,
    flows: Vec<FlowRecord>,
    metrics: Vec<MetricSample>,
    nic_counters: Vec<NicCounterRecord>,
    quarantine: Quarantine,
}

impl TelemetrySnapshot {
    /// Assembles a snapshot. Each sequence is stably sorted by timestamp,
    /// so already-ordered input is left untouched.
    pub fn from_parts(
        topology: Topology,
        mut collectives: Vec<CollectiveLogRecord>,
        mut flows: Vec<FlowRecord>,
        mut metrics: Vec<MetricSample>,
        mut nic_counters: Vec<NicCounterRecord>,
        quarantine: Quarantine,
    ) -> Self {
        collectives.sort_by_key(|r| r.timestamp);
        flows.sort_by_key(|r| r.timestamp);
        metrics.sort_by_key(|r| r.timestamp);
        nic_counters.sort_by_key(|r| r.timestamp);
        let mut snap = TelemetrySnapshot {
            topology,
            collectives,
            flows,
            metrics,
            nic_counters,
            quarantine,
            index: SnapshotIndex::default(),
        };
        snap.reindex();
        snap
    }

    pub fn empty(topology: Topology) -> Self {
        Self::from_parts(topology, vec![], vec![], vec![], vec![], Quarantine::default())
    }

    fn reindex(&mut self) {
        let mut ix = SnapshotIndex { topo: self.topology.index(), ..Default::default() };
        for (i, r) in self.collectives.iter().enumerate() {
            ix.by_app.entry(r.app_id.clone()).or_default().push(i);
            ix.qp_app.entry(r.qp_id).or_insert_with(|| r.app_id.clone());
        }
        for (i, f) in self.flows.iter().enumerate() {
            if let Some(qp) = f.qp_id {
                ix.flows_by_qp.entry(qp).or_default().push(i);
            }
        }
        for (i, m) in self.metrics.iter().enumerate() {
            ix.metrics_by_entity
                .entry(m.entity.clone())
                .or_default()
                .entry(m.metric.clone())
                .or_default()
                .push(i);
        }
        self.index = ix;
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn topology_index(&self) -> &TopologyIndex {
        &self.index.topo
    }

    pub fn collectives(&self) -> &[CollectiveLogRecord] {
        &self.collectives
    }

    pub fn flows(&self) -> &[FlowRecord] {
        &self.flows
    }

    pub fn metrics(&self) -> &[MetricSample] {
        &self.metrics
    }

    pub fn nic_counters(&self) -> &[NicCounterRecord] {
        &self.nic_counters
    }

    pub fn quarantine(&self) -> &Quarantine {
        &self.quarantine
    }

    /// Application ids with at least one collective record, ascending.
    pub fn apps(&self) -> Vec<String> {
        self.index.by_app.keys().cloned().collect()
    }

    pub fn has_app(&self, app: &str) -> bool {
        self.index.by_app.contains_key(app)
    }

    pub fn collectives_for_app(&self, app: &str) -> impl Iterator<Item = &CollectiveLogRecord> {
        self.index.by_app.get(app).into_iter().flatten().map(|&i| &self.collectives[i])
    }

    pub fn app_for_qp(&self, qp: u32) -> Option<&str> {
        self.index.qp_app.get(&qp).map(String::as_str)
    }

    pub fn qp_app_map(&self) -> &BTreeMap<u32, String> {
        &self.index.qp_app
    }

    pub fn flows_for_qp(&self, qp: u32) -> impl Iterator<Item = &FlowRecord> {
        self.index.flows_by_qp.get(&qp).into_iter().flatten().map(|&i| &self.flows[i])
    }

    /// Samples of one metric on one entity, in time order.
    pub fn series(&self, entity: &EntityId, metric: &str) -> Vec<&MetricSample> {
        self.index
            .metrics_by_entity
            .get(entity)
            .and_then(|m| m.get(metric))
            .into_iter()
            .flatten()
            .map(|&i| &self.metrics[i])
            .collect()
    }

    pub fn metric_names(&self, entity: &EntityId) -> Vec<&str> {
        self.index
            .metrics_by_entity
            .get(entity)
            .map(|m| m.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn metric_entities(&self) -> impl Iterator<Item = &EntityId> {
        self.index.metrics_by_entity.keys()
    }

    /// Earliest and latest timestamp across all record kinds, as a closed pair.
    pub fn time_bounds(&self) -> Option<(Timestamp, Timestamp)> {
        let firsts = [
            self.collectives.first().map(|r| r.timestamp),
            self.flows.first().map(|r| r.timestamp),
            self.metrics.first().map(|r| r.timestamp),
            self.nic_counters.first().map(|r| r.timestamp),
        ];
        let lasts = [
            self.collectives.last().map(|r| r.timestamp),
            self.flows.last().map(|r| r.timestamp),
            self.metrics.last().map(|r| r.timestamp),
            self.nic_counters.last().map(|r| r.timestamp),
        ];
        let lo = firsts.into_iter().flatten().min()?;
        let hi = lasts.into_iter().flatten().max()?;
        Some((lo, hi))
    }

    /// Half-open range covering every record.
    pub fn time_range(&self) -> Option<TimeRange> {
        self.time_bounds().map(|(lo, hi)| TimeRange::new(lo, hi.plus_micros(1)))
    }

    /// A copy with every trace of `app` removed: its collective records,
    /// its application-layer metrics, and flows on its queue pairs.
    pub fn without_app(&self, app: &str) -> TelemetrySnapshot {
        let qps: BTreeSet<u32> = self.collectives_for_app(app).map(|r| r.qp_id).collect();
        let app_entity = EntityId::app(app);
        TelemetrySnapshot::from_parts(
            self.topology.clone(),
            self.collectives.iter().filter(|r| r.app_id != app).cloned().collect(),
            self.flows.iter().filter(|f| f.qp_id.is_none_or(|q| !qps.contains(&q))).cloned().collect(),
            self.metrics.iter().filter(|m| m.entity != app_entity).cloned().collect(),
            self.nic_counters.clone(),
            self.quarantine.clone(),
        )
    }

    /// Checks the structural invariants; returns human-readable problems.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut problems = Vec::new();
        fn ordered<T>(items: &[T], key: impl Fn(&T) -> Timestamp) -> bool {
            items.windows(2).all(|w| key(&w[0]) <= key(&w[1]))
        }
        if !ordered(&self.collectives, |r| r.timestamp) {
            problems.push("collective records out of order".to_string());
        }
        if !ordered(&self.flows, |r| r.timestamp) {
            problems.push("flow records out of order".to_string());
        }
        if !ordered(&self.metrics, |r| r.timestamp) {
            problems.push("metric samples out of order".to_string());
        }
        if !ordered(&self.nic_counters, |r| r.timestamp) {
            problems.push("nic counters out of order".to_string());
        }
        let mut qp_app: BTreeMap<u32, &str> = BTreeMap::new();
        for r in &self.collectives {
            if let Some(prev) = qp_app.insert(r.qp_id, &r.app_id) {
                if prev != r.app_id {
                    problems.push(format!("qp {} maps to apps {prev} and {}", r.qp_id, r.app_id));
                }
            }
        }
        let topo = &self.index.topo;
        let mut known = |id: EntityId| {
            if !topo.has_entity(&id) && !self.quarantine.entities.contains_key(&id.to_string()) {
                problems.push(format!("{id} neither in topology nor quarantined"));
            }
        };
        for r in &self.collectives {
            known(EntityId::gpu(&r.src_gpu_uuid));
            known(EntityId::host(&r.hostname));
        }
        for m in &self.metrics {
            if m.entity.layer != Layer::Application {
                known(m.entity.clone());
            }
        }
        for f in &self.flows {
            known(EntityId::switch_port(&f.switch_id, &f.ingress_port));
            known(EntityId::switch_port(&f.switch_id, &f.egress_port));
        }
        for c in &self.nic_counters {
            known(c.entity());
        }
        problems
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ArchiveRef {
            format: ARCHIVE_FORMAT,
            version: ARCHIVE_VERSION,
            topology: &self.topology,
            collectives: &self.collectives,
            flows: &self.flows,
            metrics: &self.metrics,
            nic_counters: &self.nic_counters,
            quarantine: &self.quarantine,
        })
        .expect("snapshot serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<TelemetrySnapshot, crate::error::ModelError> {
        let a: ArchiveOwned =
            serde_json::from_str(text).map_err(|e| crate::error::ModelError::SnapshotFormat(e.to_string()))?;
        if a.format != ARCHIVE_FORMAT || a.version != ARCHIVE_VERSION {
            return Err(crate::error::ModelError::SnapshotFormat(format!(
                "unsupported archive {} v{}",
                a.format, a.version
            )));
        }
        Ok(Self::from_parts(a.topology, a.collectives, a.flows, a.metrics, a.nic_counters, a.quarantine))
    }
}
