//! Output documents shared by the CLI and the HTTP service.
//!
//! Each read operation renders one JSON document (or a dot graph), so a
//! subcommand and its endpoint return the same bytes for the same inputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use assure_core::config::Config;
use assure_core::depgraph::{app_subgraph, build_graph, export_graph, DependencyGraph, GraphFormat};
use assure_core::model::{EntityId, Layer, TelemetrySnapshot, TimeRange, Timestamp};
use assure_core::pathtrace::{path_dot, trace, volume_breakdown};
use assure_core::rca::{run_rca, ExplanationClient, RcaConfig, RcaReport};
use assure_core::sle::{layer_sle, sle_series, SleProfile};
use assure_core::ErrorCategory;
use serde_json::{json, Value};

/// An error with its machine-readable category.
#[derive(Debug, Clone, PartialEq)]
pub struct AppError {
    pub category: ErrorCategory,
    pub message: String,
}

impl AppError {
    pub fn new(category: ErrorCategory, message: impl Into<String>) -> Self {
        AppError { category, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        AppError::new(ErrorCategory::Usage, message)
    }

    pub fn to_json(&self) -> String {
        json!({ "error": self.category.as_str(), "message": self.message }).to_string()
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.category, self.message)
    }
}

macro_rules! categorized {
    ($($t:ty),*) => {$(
        impl From<$t> for AppError {
            fn from(e: $t) -> Self {
                AppError::new(e.category(), e.to_string())
            }
        }
    )*};
}

categorized!(
    assure_core::ModelError,
    assure_core::ingest::IngestError,
    assure_core::depgraph::GraphError,
    assure_core::sle::SleError,
    assure_core::pathtrace::PathError,
    assure_core::rca::RcaError,
    assure_core::harness::HarnessError,
    assure_core::config::ConfigError
);

/// A rendered document.
#[derive(Debug, Clone, PartialEq)]
pub enum Document {
    Json(Value),
    Text(String),
}

impl Document {
    pub fn render(&self) -> String {
        match self {
            Document::Json(v) => serde_json::to_string_pretty(v).expect("json value serializes"),
            Document::Text(t) => t.clone(),
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self {
            Document::Json(_) => "application/json",
            Document::Text(_) => "text/vnd.graphviz",
        }
    }
}

pub fn parse_format(text: &str) -> Result<GraphFormat, AppError> {
    match text {
        "dot" => Ok(GraphFormat::Dot),
        "structured" => Ok(GraphFormat::Structured),
        other => Err(AppError::usage(format!("unknown format {other:?}, expected dot or structured"))),
    }
}

pub fn parse_layer(text: &str) -> Result<Layer, AppError> {
    Layer::from_str(text).map_err(|e| AppError::usage(e.to_string()))
}

pub fn parse_time(text: &str) -> Result<Timestamp, AppError> {
    Timestamp::parse_flexible(text).ok_or_else(|| AppError::usage(format!("unreadable timestamp {text:?}")))
}

/// A loaded snapshot with everything derived from it up front.
pub struct Workspace {
    pub snapshot: TelemetrySnapshot,
    pub graph: DependencyGraph,
    profiles: BTreeMap<Layer, SleProfile>,
    rca: RcaConfig,
    client: Box<dyn ExplanationClient>,
}

impl Workspace {
    pub fn new(snapshot: TelemetrySnapshot, config: &Config) -> Self {
        let graph = build_graph(&snapshot);
        Workspace {
            snapshot,
            graph,
            profiles: config.sle_profiles(),
            rca: config.rca_config(),
            client: config.explanation_client(),
        }
    }

    pub fn load(path: &Path, config: &Config) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::new(ErrorCategory::Io, format!("cannot read {}: {e}", path.display())))?;
        Ok(Workspace::new(TelemetrySnapshot::from_json(&text)?, config))
    }

    fn require_app(&self, app: &str) -> Result<EntityId, AppError> {
        let id = EntityId::app(app);
        if self.graph.contains(&id) {
            Ok(id)
        } else {
            Err(AppError::new(ErrorCategory::UnknownApp, format!("unknown application {app}")))
        }
    }

    pub fn apps(&self) -> Document {
        let apps: Vec<Value> = self
            .graph
            .apps()
            .iter()
            .map(|a| {
                let count = |layer| assure_core::depgraph::app_entities(&self.graph, a, layer).map_or(0, |s| s.len());
                json!({
                    "app": a.key,
                    "gpus": count(Layer::Gpu),
                    "hosts": count(Layer::Host),
                    "nics": count(Layer::Nic),
                })
            })
            .collect();
        Document::Json(json!({ "apps": apps }))
    }

    pub fn graph(&self, app: Option<&str>, format: GraphFormat) -> Result<Document, AppError> {
        let text = match app {
            Some(a) => export_graph(&app_subgraph(&self.graph, &self.require_app(a)?)?, format),
            None => export_graph(&self.graph, format),
        };
        Ok(match format {
            GraphFormat::Dot => Document::Text(text),
            GraphFormat::Structured => Document::Json(
                serde_json::from_str(&text)
                    .map_err(|e| AppError::new(ErrorCategory::Internal, format!("graph export: {e}")))?,
            ),
        })
    }

    fn profile(&self, layer: Layer) -> Result<&SleProfile, AppError> {
        self.profiles
            .get(&layer)
            .ok_or_else(|| AppError::new(ErrorCategory::InvalidSpec, format!("no SLE profile configured for layer {layer}")))
    }

    /// Layer aggregate for one app, or per-entity series for every entity
    /// of the layer that has metrics.
    pub fn sle(&self, layer: Layer, app: Option<&str>) -> Result<Document, AppError> {
        let profile = self.profile(layer)?;
        let doc = match app {
            Some(a) => {
                let id = self.require_app(a)?;
                let windows = layer_sle(&self.graph, &self.snapshot, &id, layer, profile)?;
                json!({ "app": a, "layer": layer, "profile": profile, "windows": windows })
            }
            None => {
                let mut entities = Vec::new();
                for e in self.snapshot.metric_entities().filter(|e| e.layer == layer) {
                    let windows = sle_series(&self.snapshot, e, profile)?;
                    entities.push(json!({ "entity": e, "windows": windows }));
                }
                json!({ "layer": layer, "profile": profile, "entities": entities })
            }
        };
        Ok(Document::Json(doc))
    }

    pub fn rca_report(&self, app: &str, from: Option<Timestamp>, to: Option<Timestamp>) -> Result<RcaReport, AppError> {
        self.require_app(app)?;
        let range = match (from, to) {
            (None, None) => None,
            (from, to) => {
                let bounds = self.snapshot.time_range().unwrap_or_else(TimeRange::everything);
                let (start, end) = (from.unwrap_or(bounds.start), to.unwrap_or(bounds.end));
                if start >= end {
                    return Err(AppError::usage("from must be earlier than to"));
                }
                Some(TimeRange::new(start, end))
            }
        };
        Ok(run_rca(&self.graph, &self.snapshot, app, range, &self.rca, self.client.as_ref())?)
    }

    pub fn rca(&self, app: &str, from: Option<Timestamp>, to: Option<Timestamp>) -> Result<Document, AppError> {
        let report = self.rca_report(app, from, to)?;
        Ok(Document::Json(serde_json::to_value(&report).expect("report serializes")))
    }

    pub fn paths(&self, app: &str, src: u32, dst: u32, format: GraphFormat) -> Result<Document, AppError> {
        self.require_app(app)?;
        for rank in [src, dst] {
            if !self.snapshot.collectives_for_app(app).any(|r| r.src_rank == rank || r.dst_rank == rank) {
                return Err(AppError::new(ErrorCategory::NotFound, format!("{app} has no rank {rank}")));
            }
        }
        let traces = trace(&self.graph, &self.snapshot, app, src, dst)?;
        if format == GraphFormat::Dot {
            let topo = self.snapshot.topology();
            return Ok(Document::Text(traces.iter().map(|t| path_dot(topo, t)).collect()));
        }
        let qps: Vec<u32> = traces.iter().map(|t| t.qp_id).collect();
        let volumes: Vec<_> = volume_breakdown(&self.snapshot, app).into_iter().filter(|r| qps.contains(&r.qp_id)).collect();
        Ok(Document::Json(json!({
            "app": app,
            "src_rank": src,
            "dst_rank": dst,
            "paths": traces,
            "volumes": volumes,
        })))
    }
}
