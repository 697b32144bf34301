//! Narrative generation over an already ranked report.
//!
//! Wire contract of [`HttpClient`]: one `POST` to the configured endpoint
//! with a JSON [`ExplanationRequest`] body (and `Authorization: Bearer`
//! when a key is set); the reply must be JSON `{"narrative": "..."}`.
//! Exchanges can be appended to a JSON-lines transcript and served back by
//! [`ReplayClient`].

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Cause, CauseKind, Remediation, Symptom};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRequest {
    pub app: String,
    pub symptoms: Vec<Symptom>,
    pub ranked_causes: Vec<Cause>,
    pub remediation: Vec<Remediation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationResponse {
    pub narrative: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("no recorded response for this request")]
    NoFixture,
}

pub trait ExplanationClient: Send + Sync {
    fn name(&self) -> &str;
    fn explain(&self, request: &ExplanationRequest) -> Result<String, ExplainError>;
}

fn kind_phrase(kind: CauseKind) -> &'static str {
    match kind {
        CauseKind::NetworkCongestion => "network congestion",
        CauseKind::PacketLoss => "packet loss",
        CauseKind::GpuSaturation => "GPU saturation",
        CauseKind::GpuThermalThrottle => "GPU thermal throttling",
        CauseKind::NicFault => "NIC fault",
        CauseKind::Unknown => "an unidentified cause",
    }
}

/// Deterministic narrative naming the top cause, where it sits, and its
/// three strongest evidence metrics.
pub fn template_narrative(req: &ExplanationRequest) -> String {
    let Some(top) = req.ranked_causes.first().filter(|c| c.cause_kind != CauseKind::Unknown || c.score > 0.0)
    else {
        return "no root cause identified".to_string();
    };
    let mut out = String::new();
    let symptoms: Vec<String> = req
        .symptoms
        .iter()
        .map(|s| format!("{} {} (score {:.2})", s.metric, s.direction.as_str(), s.score))
        .collect();
    let _ = write!(out, "Application {} degraded: {}. ", req.app, symptoms.join(", "));
    let _ = write!(
        out,
        "Most likely root cause: {} at {} {} (score {:.2}).",
        kind_phrase(top.cause_kind),
        top.located_at.layer.as_str().replace('_', " "),
        top.located_at.key,
        top.score
    );
    let evidence: Vec<String> = top
        .evidence
        .iter()
        .take(3)
        .map(|e| format!("{} on {} ({:.2})", e.metric, e.entity.key, e.score))
        .collect();
    if !evidence.is_empty() {
        let _ = write!(out, " Evidence: {}.", evidence.join("; "));
    }
    let others: Vec<String> = req
        .ranked_causes
        .iter()
        .skip(1)
        .take(2)
        .map(|c| format!("{} at {} ({:.2})", kind_phrase(c.cause_kind), c.located_at.key, c.score))
        .collect();
    if !others.is_empty() {
        let _ = write!(out, " Other candidates: {}.", others.join("; "));
    }
    if let Some(step) = req.remediation.first().and_then(|r| r.steps.first()) {
        let _ = write!(out, " First step: {step}.");
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateClient;

impl ExplanationClient for TemplateClient {
    fn name(&self) -> &str {
        "template"
    }

    fn explain(&self, request: &ExplanationRequest) -> Result<String, ExplainError> {
        Ok(template_narrative(request))
    }
}

#[derive(Serialize, Deserialize)]
struct TranscriptEntry {
    request: ExplanationRequest,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    error: Option<String>,
}

/// External narrative service over HTTP.
pub struct HttpClient {
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    transcript: Option<Mutex<PathBuf>>,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        HttpClient { endpoint: endpoint.into(), api_key, agent, transcript: None }
    }

    /// Appends every exchange to `path` as JSON lines.
    pub fn with_transcript(mut self, path: impl Into<PathBuf>) -> Self {
        self.transcript = Some(Mutex::new(path.into()));
        self
    }

    fn record(&self, request: &ExplanationRequest, result: &Result<String, ExplainError>) {
        let Some(path) = &self.transcript else { return };
        let path = path.lock().unwrap_or_else(|e| e.into_inner());
        let entry = TranscriptEntry {
            request: request.clone(),
            response: result.as_ref().ok().cloned(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        let line = serde_json::to_string(&entry).expect("transcript entry serializes");
        let written = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&*path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            log::warn!("cannot append to transcript {}: {e}", path.display());
        }
    }

    fn call(&self, request: &ExplanationRequest) -> Result<String, ExplainError> {
        let body = serde_json::to_string(request).expect("request serializes");
        let mut req = self.agent.post(&self.endpoint).header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| ExplainError::Transport(e.to_string()))?;
        let text = resp.body_mut().read_to_string().map_err(|e| ExplainError::Transport(e.to_string()))?;
        let parsed: ExplanationResponse =
            serde_json::from_str(&text).map_err(|e| ExplainError::BadResponse(e.to_string()))?;
        if parsed.narrative.trim().is_empty() {
            return Err(ExplainError::BadResponse("empty narrative".into()));
        }
        Ok(parsed.narrative)
    }
}

impl ExplanationClient for HttpClient {
    fn name(&self) -> &str {
        "http"
    }

    fn explain(&self, request: &ExplanationRequest) -> Result<String, ExplainError> {
        let result = self.call(request);
        self.record(request, &result);
        result
    }
}

/// Serves responses recorded by [`HttpClient::with_transcript`].
#[derive(Default)]
pub struct ReplayClient {
    entries: Vec<(ExplanationRequest, String)>,
}

impl ReplayClient {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let e: TranscriptEntry = serde_json::from_str(line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            if let Some(r) = e.response {
                entries.push((e.request, r));
            }
        }
        Ok(ReplayClient { entries })
    }

    pub fn push(&mut self, request: ExplanationRequest, narrative: String) {
        self.entries.push((request, narrative));
    }
}

impl ExplanationClient for ReplayClient {
    fn name(&self) -> &str {
        "replay"
    }

    fn explain(&self, request: &ExplanationRequest) -> Result<String, ExplainError> {
        self.entries.iter().find(|(r, _)| r == request).map(|(_, n)| n.clone()).ok_or(ExplainError::NoFixture)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeSource {
    pub client: String,
    /// The client failed and the template narrative was used instead.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Asks `client` for a narrative, falling back to the template on failure.
pub fn explain(request: &ExplanationRequest, client: &dyn ExplanationClient) -> (String, NarrativeSource) {
    match client.explain(request) {
        Ok(text) => (text, NarrativeSource { client: client.name().to_string(), fallback: false, error: None }),
        Err(e) => {
            log::warn!("{} explanation client failed: {e}", client.name());
            (
                template_narrative(request),
                NarrativeSource { client: client.name().to_string(), fallback: true, error: Some(e.to_string()) },
            )
        }
    }
}
