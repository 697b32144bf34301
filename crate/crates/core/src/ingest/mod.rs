//! Parsing, normalization and snapshot assembly.

pub mod lines;
pub mod rates;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lines::{
    parse_collective_log, parse_flow_record, parse_metric_record, parse_nic_counter, serialize_collective,
    serialize_flow, serialize_metric, serialize_nic_counter, LineError, QuarantineReason,
};
pub use rates::{derive_rates, RateError};

use crate::model::{
    validate_topology, CollectiveLogRecord, EntityId, FlowRecord, Layer, MetricRegistry, MetricSample,
    NicCounterRecord, Quarantine, TelemetrySnapshot, Timestamp, Topology, TopologyIndex, Violation,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot tell which telemetry format {0} holds")]
    UnknownSource(PathBuf),
    #[error("topology invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    TopologyInvalid(Vec<Violation>),
    #[error(transparent)]
    Rate(#[from] RateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Collective,
    Flow,
    Metric,
    NicCounter,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Collective => "collective",
            SourceKind::Flow => "flow",
            SourceKind::Metric => "metric",
            SourceKind::NicCounter => "nic_counter",
        }
    }

    /// Infers the format from a file name: `collective*`, `flow*`, `nic*`,
    /// or anything containing `metric`.
    pub fn from_path(path: &Path) -> Option<SourceKind> {
        let name = path.file_name()?.to_str()?.to_ascii_lowercase();
        if name.starts_with("collective") || name.starts_with("nccl") {
            Some(SourceKind::Collective)
        } else if name.starts_with("flow") {
            Some(SourceKind::Flow)
        } else if name.starts_with("nic") {
            Some(SourceKind::NicCounter)
        } else if name.contains("metric") {
            Some(SourceKind::Metric)
        } else {
            None
        }
    }
}

/// In-memory telemetry source.
#[derive(Debug, Clone)]
pub struct Source {
    pub kind: SourceKind,
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Non-blank, non-comment lines seen.
    pub offered: usize,
    pub accepted: BTreeMap<String, usize>,
    pub quarantined: BTreeMap<String, usize>,
    /// Rate samples derived from NIC counters (not counted as offered).
    pub derived_samples: usize,
    pub time_range: Option<(Timestamp, Timestamp)>,
}

impl IngestReport {
    pub fn total_accepted(&self) -> usize {
        self.accepted.values().sum()
    }

    pub fn total_quarantined(&self) -> usize {
        self.quarantined.values().sum()
    }

    pub fn accepted_of(&self, kind: SourceKind) -> usize {
        self.accepted.get(kind.as_str()).copied().unwrap_or(0)
    }
}

enum Parsed {
    Collective(CollectiveLogRecord),
    Flow(FlowRecord),
    Metric(MetricSample),
    Nic(NicCounterRecord),
}

impl Parsed {
    fn timestamp(&self) -> Timestamp {
        match self {
            Parsed::Collective(r) => r.timestamp,
            Parsed::Flow(r) => r.timestamp,
            Parsed::Metric(r) => r.timestamp,
            Parsed::Nic(r) => r.timestamp,
        }
    }
}

struct Rejected {
    reason: QuarantineReason,
    entity: Option<String>,
    metric: Option<String>,
}

struct ParsedSource {
    offered: usize,
    records: Vec<Parsed>,
    rejected: Vec<Rejected>,
}

fn check_entity(topo: &TopologyIndex, id: EntityId) -> Result<(), Rejected> {
    if topo.has_entity(&id) {
        Ok(())
    } else {
        Err(Rejected { reason: QuarantineReason::UnknownEntity, entity: Some(id.to_string()), metric: None })
    }
}

fn mismatch(detail: String) -> Rejected {
    Rejected { reason: QuarantineReason::LabelMismatch, entity: Some(detail), metric: None }
}

fn resolve(topo: &TopologyIndex, parsed: Parsed) -> Result<Parsed, Rejected> {
    match &parsed {
        Parsed::Collective(r) => {
            check_entity(topo, EntityId::host(&r.hostname))?;
            check_entity(topo, EntityId::gpu(&r.src_gpu_uuid))?;
            if topo.gpu_host.get(&r.src_gpu_uuid) != Some(&r.hostname) {
                return Err(mismatch(EntityId::gpu(&r.src_gpu_uuid).to_string()));
            }
        }
        Parsed::Flow(f) => {
            check_entity(topo, EntityId::switch_port(&f.switch_id, &f.ingress_port))?;
            check_entity(topo, EntityId::switch_port(&f.switch_id, &f.egress_port))?;
        }
        Parsed::Metric(m) => {
            if m.entity.layer != Layer::Application {
                check_entity(topo, m.entity.clone())?;
            }
            if m.entity.layer == Layer::Gpu {
                if let Some(host) = m.labels.get("hostname") {
                    if topo.gpu_host.get(&m.entity.key) != Some(host) {
                        return Err(mismatch(m.entity.to_string()));
                    }
                }
            }
        }
        Parsed::Nic(c) => check_entity(topo, c.entity())?,
    }
    Ok(parsed)
}

fn parse_source(source: &Source, registry: &MetricRegistry, topo: &TopologyIndex) -> ParsedSource {
    let mut out = ParsedSource { offered: 0, records: Vec::new(), rejected: Vec::new() };
    for (lineno, raw) in source.text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.offered += 1;
        let parsed = match source.kind {
            SourceKind::Collective => parse_collective_log(line).map(Parsed::Collective),
            SourceKind::Flow => parse_flow_record(line).map(Parsed::Flow),
            SourceKind::Metric => parse_metric_record(line, registry).map(Parsed::Metric),
            SourceKind::NicCounter => parse_nic_counter(line).map(Parsed::Nic),
        };
        match parsed {
            Ok(p) => match resolve(topo, p) {
                Ok(p) => out.records.push(p),
                Err(rej) => out.rejected.push(rej),
            },
            Err(e) => {
                log::debug!("{}:{}: {e}", source.name, lineno + 1);
                let metric = match (&e, source.kind) {
                    (LineError::Quarantined { reason: QuarantineReason::UnregisteredMetric, detail }, _) => {
                        Some(detail.clone())
                    }
                    _ => None,
                };
                out.rejected.push(Rejected { reason: e.quarantine_reason(), entity: None, metric });
            }
        }
    }
    out
}

/// Ingests in-memory sources. Sources are merged in the given order; ties
/// on timestamp keep source order, then line order.
pub fn ingest_sources(
    sources: &[Source],
    topology: &Topology,
    registry: &MetricRegistry,
) -> Result<(TelemetrySnapshot, IngestReport), IngestError> {
    let violations = validate_topology(topology);
    if !violations.is_empty() {
        return Err(IngestError::TopologyInvalid(violations));
    }
    let topo = topology.index();

    let parsed: Vec<ParsedSource> = std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .iter()
            .map(|s| {
                let topo = &topo;
                scope.spawn(move || parse_source(s, registry, topo))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("parser thread panicked")).collect()
    });

    let mut report = IngestReport::default();
    let mut quarantine = Quarantine::default();
    let reject = |report: &mut IngestReport, q: &mut Quarantine, r: Rejected| {
        *report.quarantined.entry(r.reason.as_str().to_string()).or_default() += 1;
        if let Some(e) = r.entity {
            *q.entities.entry(e).or_default() += 1;
        }
        if let Some(m) = r.metric {
            *q.metrics.entry(m).or_default() += 1;
        }
    };

    let mut all = Vec::new();
    for ps in parsed {
        report.offered += ps.offered;
        for r in ps.rejected {
            reject(&mut report, &mut quarantine, r);
        }
        all.extend(ps.records);
    }
    all.sort_by_key(Parsed::timestamp);

    let mut collectives = Vec::new();
    let mut flows = Vec::new();
    let mut metrics = Vec::new();
    let mut nic_counters: Vec<NicCounterRecord> = Vec::new();
    let mut qp_owner: HashMap<u32, String> = HashMap::new();
    let mut last_counter_ts: HashMap<(String, String, crate::model::NicCounter), Timestamp> = HashMap::new();
    for p in all {
        match p {
            Parsed::Collective(r) => {
                let owner = qp_owner.entry(r.qp_id).or_insert_with(|| r.app_id.clone());
                if *owner != r.app_id {
                    reject(
                        &mut report,
                        &mut quarantine,
                        Rejected { reason: QuarantineReason::QpConflict, entity: None, metric: None },
                    );
                    continue;
                }
                collectives.push(r);
            }
            Parsed::Flow(f) => flows.push(f),
            Parsed::Metric(m) => metrics.push(m),
            Parsed::Nic(c) => {
                let key = (c.hostname.clone(), c.nic_id.clone(), c.counter);
                if last_counter_ts.get(&key).is_some_and(|&t| t >= c.timestamp) {
                    reject(
                        &mut report,
                        &mut quarantine,
                        Rejected { reason: QuarantineReason::DuplicateTimestamp, entity: None, metric: None },
                    );
                    continue;
                }
                last_counter_ts.insert(key, c.timestamp);
                nic_counters.push(c);
            }
        }
    }
    report.accepted.insert(SourceKind::Collective.as_str().into(), collectives.len());
    report.accepted.insert(SourceKind::Flow.as_str().into(), flows.len());
    report.accepted.insert(SourceKind::Metric.as_str().into(), metrics.len());
    report.accepted.insert(SourceKind::NicCounter.as_str().into(), nic_counters.len());

    let mut by_key: BTreeMap<(String, String, crate::model::NicCounter), Vec<NicCounterRecord>> = BTreeMap::new();
    for c in &nic_counters {
        by_key.entry((c.hostname.clone(), c.nic_id.clone(), c.counter)).or_default().push(c.clone());
    }
    for series in by_key.values() {
        let rates = derive_rates(series)?;
        report.derived_samples += rates.len();
        metrics.extend(rates);
    }

    let snapshot = TelemetrySnapshot::from_parts(topology.clone(), collectives, flows, metrics, nic_counters, quarantine);
    report.time_range = snapshot.time_bounds();
    Ok((snapshot, report))
}

/// Reads and ingests files; the format of each is inferred from its name.
pub fn ingest(paths: &[PathBuf], topology: &Topology) -> Result<(TelemetrySnapshot, IngestReport), IngestError> {
    ingest_with(paths, topology, &MetricRegistry::with_defaults())
}

pub fn ingest_with(
    paths: &[PathBuf],
    topology: &Topology,
    registry: &MetricRegistry,
) -> Result<(TelemetrySnapshot, IngestReport), IngestError> {
    let mut sources = Vec::with_capacity(paths.len());
    for path in paths {
        let kind = SourceKind::from_path(path).ok_or_else(|| IngestError::UnknownSource(path.clone()))?;
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.clone(), source })?;
        sources.push(Source { kind, name: path.display().to_string(), text });
    }
    ingest_sources(&sources, topology, registry)
}

/// Telemetry files in `dir` in lexicographic order; other files are skipped.
pub fn telemetry_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let entries = std::fs::read_dir(dir).map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| IngestError::Io { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        if path.is_file() && SourceKind::from_path(&path).is_some() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn ingest_dir(dir: &Path, topology: &Topology) -> Result<(TelemetrySnapshot, IngestReport), IngestError> {
    ingest(&telemetry_files(dir)?, topology)
}
