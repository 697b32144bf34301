//! Root cause localization and explanation.
//!
//! Application-layer anomalies are the symptoms. Anomalies on entities the
//! application depends on (its dependency-graph closure plus the fabric
//! elements on its traced paths) are mapped to cause kinds through a
//! signature table and ranked by score times a layer weight. The ranking is
//! final; explanation clients only phrase it.

mod explain;
mod remediation;
mod signatures;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use explain::{
    explain, template_narrative, ExplainError, ExplanationClient, ExplanationRequest, ExplanationResponse,
    HttpClient, NarrativeSource, ReplayClient, TemplateClient,
};
pub use remediation::remediation_for;
pub use signatures::{default_signatures, SignatureRule, SignatureTable};

use crate::anomaly::{detect, AnomalyDirection, AnomalyError, AnomalyEvent, DetectorParams};
use crate::depgraph::{app_entities, DependencyGraph, GraphError};
use crate::model::{Direction, EntityId, Layer, MetricRegistry, TelemetrySnapshot, TimeRange, Timestamp};
use crate::pathtrace::trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseKind {
    NetworkCongestion,
    PacketLoss,
    GpuSaturation,
    GpuThermalThrottle,
    NicFault,
    Unknown,
}

impl CauseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CauseKind::NetworkCongestion => "network_congestion",
            CauseKind::PacketLoss => "packet_loss",
            CauseKind::GpuSaturation => "gpu_saturation",
            CauseKind::GpuThermalThrottle => "gpu_thermal_throttle",
            CauseKind::NicFault => "nic_fault",
            CauseKind::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for CauseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RcaError {
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("no application-layer symptoms for {0}")]
    NoSymptoms(String),
    #[error(transparent)]
    Anomaly(#[from] AnomalyError),
    #[error("graph: {0}")]
    Graph(String),
}

impl From<GraphError> for RcaError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownApp(a) => RcaError::UnknownApp(a),
            other => RcaError::Graph(other.to_string()),
        }
    }
}

/// An anomaly cited in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub entity: EntityId,
    pub metric: String,
    pub score: f64,
    pub direction: AnomalyDirection,
    pub window: (Timestamp, Timestamp),
}

impl From<&AnomalyEvent> for Finding {
    fn from(e: &AnomalyEvent) -> Self {
        Finding {
            entity: e.entity.clone(),
            metric: e.metric.clone(),
            score: e.score,
            direction: e.direction,
            window: e.window,
        }
    }
}

pub type Symptom = Finding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cause {
    pub cause_kind: CauseKind,
    pub located_at: EntityId,
    pub score: f64,
    pub evidence: Vec<Finding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Remediation {
    pub cause_kind: CauseKind,
    pub located_at: EntityId,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaReport {
    pub app: String,
    pub symptom_window: TimeRange,
    pub symptoms: Vec<Symptom>,
    pub ranked_causes: Vec<Cause>,
    pub remediation: Vec<Remediation>,
    pub narrative: String,
    pub narrative_source: NarrativeSource,
}

impl RcaReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Multipliers applied to a cause's best evidence score by location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerWeights {
    pub switch: f64,
    pub switch_port: f64,
    pub nic: f64,
    pub gpu: f64,
    pub host: f64,
}

impl Default for LayerWeights {
    fn default() -> Self {
        LayerWeights { switch: 1.0, switch_port: 1.0, nic: 0.9, gpu: 0.9, host: 0.8 }
    }
}

impl LayerWeights {
    pub fn weight(&self, layer: Layer) -> f64 {
        match layer {
            Layer::Switch => self.switch,
            Layer::SwitchPort => self.switch_port,
            Layer::Nic => self.nic,
            Layer::Gpu => self.gpu,
            Layer::Host => self.host,
            Layer::Application => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RcaConfig {
    pub detector: DetectorParams,
    pub weights: LayerWeights,
    pub signatures: SignatureTable,
    /// Metric directions deciding which application anomalies are symptoms.
    pub registry: MetricRegistry,
}

impl Default for RcaConfig {
    fn default() -> Self {
        RcaConfig {
            detector: DetectorParams::default(),
            weights: LayerWeights::default(),
            signatures: SignatureTable::default(),
            registry: MetricRegistry::with_defaults(),
        }
    }
}

fn is_bad(registry: &MetricRegistry, metric: &str, direction: AnomalyDirection) -> bool {
    match registry.get(metric).map(|s| s.direction) {
        Some(Direction::HigherIsBad) => direction == AnomalyDirection::High,
        Some(Direction::LowerIsBad) => direction == AnomalyDirection::Low,
        Some(Direction::Band) | None => true,
    }
}

fn by_score_then_identity(a: &Finding, b: &Finding) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.entity.cmp(&b.entity))
        .then_with(|| a.metric.cmp(&b.metric))
        .then_with(|| a.window.cmp(&b.window))
}

/// Anomaly events on every metric series of `entity`.
pub fn entity_events(
    snapshot: &TelemetrySnapshot,
    entity: &EntityId,
    params: &DetectorParams,
) -> Result<Vec<AnomalyEvent>, AnomalyError> {
    let mut out = Vec::new();
    for metric in snapshot.metric_names(entity) {
        out.extend(detect(&snapshot.series(entity, metric), params)?);
    }
    Ok(out)
}

/// Application-layer anomalies of `app` in their bad direction, overlapping
/// `range`.
pub fn collect_symptoms(
    graph: &DependencyGraph,
    snapshot: &TelemetrySnapshot,
    app: &str,
    range: TimeRange,
    config: &RcaConfig,
) -> Result<Vec<Symptom>, RcaError> {
    let app_id = EntityId::app(app);
    if !graph.contains(&app_id) {
        return Err(RcaError::UnknownApp(app.to_string()));
    }
    let mut symptoms: Vec<Symptom> = entity_events(snapshot, &app_id, &config.detector)?
        .iter()
        .filter(|e| range.overlaps(e.window.0, e.window.1))
        .filter(|e| is_bad(&config.registry, &e.metric, e.direction))
        .map(Finding::from)
        .collect();
    symptoms.sort_by(by_score_then_identity);
    Ok(symptoms)
}

/// Entities a cause may be located at, plus the app's traced hop lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateScope {
    pub app: String,
    pub entities: BTreeSet<EntityId>,
    pub paths: Vec<Vec<EntityId>>,
}

pub fn candidate_scope(
    graph: &DependencyGraph,
    snapshot: &TelemetrySnapshot,
    app: &str,
) -> Result<CandidateScope, RcaError> {
    let app_id = EntityId::app(app);
    let mut entities = BTreeSet::new();
    for layer in [Layer::Gpu, Layer::Host, Layer::Nic, Layer::SwitchPort, Layer::Switch] {
        entities.extend(app_entities(graph, &app_id, layer)?);
    }
    let pairs: BTreeSet<(u32, u32)> =
        snapshot.collectives_for_app(app).map(|r| (r.src_rank, r.dst_rank)).collect();
    let mut paths = Vec::new();
    for (src, dst) in pairs {
        // Pairs whose flows are inconsistent still contribute their
        // graph-reachable entities; they just add no path.
        let Ok(traces) = trace(graph, snapshot, app, src, dst) else { continue };
        for t in traces.into_iter().filter(|t| !t.hops.is_empty()) {
            entities.extend(t.hops.iter().cloned());
            paths.push(t.hops);
        }
    }
    Ok(CandidateScope { app: app.to_string(), entities, paths })
}

/// Ranks causes among anomalies on in-scope entities.
pub fn localize(
    scope: &CandidateScope,
    anomalies: &[AnomalyEvent],
    symptoms: &[Symptom],
    config: &RcaConfig,
) -> Result<Vec<Cause>, RcaError> {
    if symptoms.is_empty() {
        return Err(RcaError::NoSymptoms(scope.app.clone()));
    }
    let mut grouped: BTreeMap<(EntityId, CauseKind), Vec<Finding>> = BTreeMap::new();
    for e in anomalies.iter().filter(|e| scope.entities.contains(&e.entity)) {
        if let Some(kind) = config.signatures.classify(&e.metric, e.direction) {
            grouped.entry((e.entity.clone(), kind)).or_default().push(Finding::from(e));
        }
    }

    // Low utilization next to a thermal anomaly is part of the throttle.
    let throttled: Vec<EntityId> = grouped
        .keys()
        .filter(|(_, k)| *k == CauseKind::GpuThermalThrottle)
        .map(|(e, _)| e.clone())
        .collect();
    for gpu in throttled {
        if let Some(low) = grouped.remove(&(gpu.clone(), CauseKind::Unknown)) {
            grouped.get_mut(&(gpu, CauseKind::GpuThermalThrottle)).expect("present").extend(low);
        }
    }

    // Congestion seen at a NIC is attributed to a congested port on one of
    // its traced paths when there is one.
    let congested_ports: BTreeSet<EntityId> = grouped
        .keys()
        .filter(|(e, k)| *k == CauseKind::NetworkCongestion && e.layer == Layer::SwitchPort)
        .map(|(e, _)| e.clone())
        .collect();
    let nic_congestion: Vec<EntityId> = grouped
        .keys()
        .filter(|(e, k)| *k == CauseKind::NetworkCongestion && e.layer == Layer::Nic)
        .map(|(e, _)| e.clone())
        .collect();
    for nic in nic_congestion {
        let ports: BTreeSet<&EntityId> = scope
            .paths
            .iter()
            .filter(|p| p.first() == Some(&nic) || p.last() == Some(&nic))
            .flat_map(|p| p.iter().filter(|h| congested_ports.contains(*h)))
            .collect();
        if ports.is_empty() {
            continue;
        }
        let evidence = grouped.remove(&(nic, CauseKind::NetworkCongestion)).expect("present");
        for port in ports {
            grouped
                .get_mut(&(port.clone(), CauseKind::NetworkCongestion))
                .expect("congested port")
                .extend(evidence.iter().cloned());
        }
    }

    let mut causes: Vec<Cause> = grouped
        .into_iter()
        .map(|((located_at, cause_kind), mut evidence)| {
            evidence.sort_by(by_score_then_identity);
            let best = evidence.iter().map(|f| f.score).fold(0.0, f64::max);
            let score = best * config.weights.weight(located_at.layer);
            Cause { cause_kind, located_at, score, evidence }
        })
        .collect();
    causes.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.located_at.cmp(&b.located_at))
            .then_with(|| a.cause_kind.cmp(&b.cause_kind))
    });
    if causes.is_empty() {
        causes.push(Cause {
            cause_kind: CauseKind::Unknown,
            located_at: EntityId::app(&scope.app),
            score: 0.0,
            evidence: Vec::new(),
        });
    }
    Ok(causes)
}

pub fn remediation_plan(causes: &[Cause]) -> Vec<Remediation> {
    causes
        .iter()
        .map(|c| Remediation {
            cause_kind: c.cause_kind,
            located_at: c.located_at.clone(),
            steps: remediation_for(c.cause_kind).iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

/// Symptoms, localization, remediation and narrative for `app` over `range`
/// (the whole snapshot when `None`).
pub fn run_rca(
    graph: &DependencyGraph,
    snapshot: &TelemetrySnapshot,
    app: &str,
    range: Option<TimeRange>,
    config: &RcaConfig,
    client: &dyn ExplanationClient,
) -> Result<RcaReport, RcaError> {
    let window = range.or_else(|| snapshot.time_range()).unwrap_or_else(TimeRange::everything);
    let symptoms = collect_symptoms(graph, snapshot, app, window, config)?;
    let (ranked_causes, remediation) = if symptoms.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let scope = candidate_scope(graph, snapshot, app)?;
        let mut anomalies = Vec::new();
        for entity in &scope.entities {
            anomalies.extend(entity_events(snapshot, entity, &config.detector)?);
        }
        anomalies.retain(|e| window.overlaps(e.window.0, e.window.1));
        let causes = localize(&scope, &anomalies, &symptoms, config)?;
        let remediation = remediation_plan(&causes);
        (causes, remediation)
    };
    let request = ExplanationRequest { app: app.to_string(), symptoms, ranked_causes, remediation };
    let (narrative, narrative_source) = if request.ranked_causes.is_empty() {
        (template_narrative(&request), NarrativeSource { client: "template".into(), fallback: false, error: None })
    } else {
        explain(&request, client)
    };
    Ok(RcaReport {
        app: request.app,
        symptom_window: window,
        symptoms: request.symptoms,
        ranked_causes: request.ranked_causes,
        remediation: request.remediation,
        narrative,
        narrative_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::Baseline;

    fn event(entity: EntityId, metric: &str, direction: AnomalyDirection, score: f64) -> AnomalyEvent {
        AnomalyEvent {
            entity,
            metric: metric.into(),
            timestamp: Timestamp::from_secs(100),
            score,
            direction,
            baseline: Baseline { median: 1.0, dispersion: 1.0 },
            window: (Timestamp::from_secs(100), Timestamp::from_secs(120)),
        }
    }

    fn symptom() -> Symptom {
        Finding::from(&event(EntityId::app("aa"), "app.iteration_rate", AnomalyDirection::Low, 30.0))
    }

    fn scope(entities: &[EntityId], paths: Vec<Vec<EntityId>>) -> CandidateScope {
        CandidateScope { app: "aa".into(), entities: entities.iter().cloned().collect(), paths }
    }

    #[test]
    fn congestion_merges_nic_evidence_into_port() {
        let port = EntityId::switch_port("leaf2", "p1");
        let nic = EntityId::nic("node5", "nic0");
        let other = EntityId::nic("node8", "nic0");
        let s = scope(
            &[port.clone(), nic.clone(), other.clone()],
            vec![vec![EntityId::nic("node4", "nic0"), port.clone(), nic.clone()]],
        );
        let events = vec![
            event(port.clone(), "switch.queue_depth", AnomalyDirection::High, 20.0),
            event(nic.clone(), "nic.cnp_received_rate", AnomalyDirection::High, 60.0),
            event(other.clone(), "nic.cnp_received_rate", AnomalyDirection::High, 10.0),
        ];
        let causes = localize(&s, &events, &[symptom()], &RcaConfig::default()).unwrap();
        assert_eq!(causes[0].located_at, port);
        assert_eq!(causes[0].cause_kind, CauseKind::NetworkCongestion);
        assert_eq!(causes[0].score, 60.0);
        assert_eq!(causes[0].evidence.len(), 2);
        assert_eq!(causes[1].located_at, other);
        assert!((causes[1].score - 9.0).abs() < 1e-12);
    }

    #[test]
    fn throttle_absorbs_low_utilization() {
        let gpu = EntityId::gpu("GPU-0000a001");
        let s = scope(&[gpu.clone()], vec![]);
        let events = vec![
            event(gpu.clone(), "gpu.temperature", AnomalyDirection::High, 18.0),
            event(gpu.clone(), "gpu.utilization", AnomalyDirection::Low, 30.0),
        ];
        let causes = localize(&s, &events, &[symptom()], &RcaConfig::default()).unwrap();
        assert_eq!(causes.len(), 1);
        assert_eq!(causes[0].cause_kind, CauseKind::GpuThermalThrottle);
        assert!((causes[0].score - 27.0).abs() < 1e-12);
    }

    #[test]
    fn low_utilization_alone_is_unknown() {
        let gpu = EntityId::gpu("GPU-0000a001");
        let s = scope(&[gpu.clone()], vec![]);
        let events = vec![event(gpu.clone(), "gpu.utilization", AnomalyDirection::Low, 8.0)];
        let causes = localize(&s, &events, &[symptom()], &RcaConfig::default()).unwrap();
        assert_eq!(causes[0].cause_kind, CauseKind::Unknown);
        assert_eq!(causes[0].located_at, gpu);
    }

    #[test]
    fn out_of_scope_and_unmapped_ignored() {
        let gpu = EntityId::gpu("GPU-0000a001");
        let s = scope(&[gpu.clone()], vec![]);
        let events = vec![
            event(EntityId::gpu("GPU-0000a002"), "gpu.temperature", AnomalyDirection::High, 50.0),
            event(gpu.clone(), "gpu.temperature", AnomalyDirection::Low, 50.0),
        ];
        let causes = localize(&s, &events, &[symptom()], &RcaConfig::default()).unwrap();
        assert_eq!(causes.len(), 1);
        assert_eq!(causes[0].cause_kind, CauseKind::Unknown);
        assert_eq!(causes[0].located_at, EntityId::app("aa"));
        assert_eq!(causes[0].score, 0.0);
    }

    #[test]
    fn no_symptoms_is_error() {
        assert_eq!(
            localize(&scope(&[], vec![]), &[], &[], &RcaConfig::default()),
            Err(RcaError::NoSymptoms("aa".into()))
        );
    }

    #[test]
    fn weights_break_ties_toward_fabric() {
        let port = EntityId::switch_port("spine1", "p1");
        let gpu = EntityId::gpu("GPU-0000a001");
        let s = scope(&[port.clone(), gpu.clone()], vec![]);
        let events = vec![
            event(gpu.clone(), "gpu.utilization", AnomalyDirection::High, 10.0),
            event(port.clone(), "switch.queue_depth", AnomalyDirection::High, 10.0),
        ];
        let causes = localize(&s, &events, &[symptom()], &RcaConfig::default()).unwrap();
        assert_eq!(causes[0].located_at, port);
        assert_eq!(causes[1].cause_kind, CauseKind::GpuSaturation);
    }

    #[test]
    fn template_narratives() {
        let port = EntityId::switch_port("leaf2", "p1");
        let causes = vec![Cause {
            cause_kind: CauseKind::NetworkCongestion,
            located_at: port.clone(),
            score: 60.0,
            evidence: vec![Finding::from(&event(port, "switch.queue_depth", AnomalyDirection::High, 60.0))],
        }];
        let req = ExplanationRequest {
            app: "aa".into(),
            symptoms: vec![symptom()],
            remediation: remediation_plan(&causes),
            ranked_causes: causes,
        };
        let text = template_narrative(&req);
        assert!(text.contains("leaf2/p1"), "{text}");
        assert!(text.contains("network congestion"));
        assert!(text.contains("switch.queue_depth"));
        let empty = ExplanationRequest { ranked_causes: vec![], remediation: vec![], ..req };
        assert_eq!(template_narrative(&empty), "no root cause identified");
    }

    struct Failing;
    impl ExplanationClient for Failing {
        fn name(&self) -> &str {
            "failing"
        }
        fn explain(&self, _: &ExplanationRequest) -> Result<String, ExplainError> {
            Err(ExplainError::Transport("timed out".into()))
        }
    }

    #[test]
    fn failing_client_falls_back() {
        let req = ExplanationRequest { app: "aa".into(), symptoms: vec![], ranked_causes: vec![], remediation: vec![] };
        let (text, src) = explain(&req, &Failing);
        assert_eq!(text, template_narrative(&req));
        assert!(src.fallback);
        assert_eq!(src.client, "failing");
    }

    #[test]
    fn replay_matches_request() {
        let req = ExplanationRequest { app: "aa".into(), symptoms: vec![], ranked_causes: vec![], remediation: vec![] };
        let mut replay = ReplayClient::default();
        assert_eq!(replay.explain(&req), Err(ExplainError::NoFixture));
        replay.push(req.clone(), "recorded".into());
        assert_eq!(replay.explain(&req).unwrap(), "recorded");
    }
}
