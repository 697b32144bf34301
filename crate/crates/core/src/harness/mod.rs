//! Synthetic cluster simulator with fault injection.
//!
//! Every run produces telemetry in the ingest formats plus a manifest of
//! ground truth: placements, per-QP paths and byte totals, and the fault
//! schedule with the cause each fault should be blamed on.

mod cluster;
mod scenario;
mod simulate;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{generate_cluster, hostname, nic_id, ClusterSpec};
pub use scenario::{Effects, FaultKind, FaultSpec, GpuSlot, Pattern, Scenario, WorkloadSpec, DEFAULT_START, PRESETS};
pub use simulate::{plan, random_single_fault, simulate, Plan, ECMP_MULTIPLIER};

use crate::ingest::{Source, SourceKind};
use crate::model::{EntityId, OpKind, Timestamp, Topology};
use crate::rca::CauseKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub app: String,
    pub rank: u32,
    pub host: String,
    pub gpu: String,
    pub nic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QpTruth {
    pub qp_id: u32,
    pub app: String,
    pub op: OpKind,
    pub src_rank: u32,
    pub dst_rank: u32,
    pub channel: u16,
    pub src_gpu: String,
    pub dst_gpu: String,
    pub hops: Vec<EntityId>,
    /// Sum of collective-record bytes.
    pub bytes: u64,
    /// Sampled bytes emitted at the first switch.
    pub emitted_first_hop_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultTruth {
    pub kind: FaultKind,
    pub target: EntityId,
    pub start: Timestamp,
    pub end: Timestamp,
    pub expected_cause: CauseKind,
    pub affected_apps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub start: Timestamp,
    pub duration_secs: u64,
    pub sampling: f64,
    pub ecmp_multiplier: u64,
    pub placements: Vec<Placement>,
    pub qps: Vec<QpTruth>,
    pub faults: Vec<FaultTruth>,
    pub warnings: Vec<String>,
    pub line_counts: BTreeMap<String, usize>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Manifest, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))
    }

    pub fn qp(&self, qp_id: u32) -> Option<&QpTruth> {
        self.qps.iter().find(|q| q.qp_id == qp_id)
    }
}

pub const TOPOLOGY_FILE: &str = "topology.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub topology: Topology,
    pub manifest: Manifest,
    /// Telemetry files by name, in emission order.
    pub files: Vec<(String, String)>,
}

impl SimOutput {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, t)| t.as_str())
    }

    /// Telemetry as in-memory ingest sources.
    pub fn sources(&self) -> Vec<Source> {
        self.files
            .iter()
            .filter_map(|(name, text)| {
                let kind = SourceKind::from_path(Path::new(name))?;
                Some(Source { kind, name: name.clone(), text: text.clone() })
            })
            .collect()
    }

    /// Writes telemetry, `topology.toml` and `manifest.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in &self.files {
            std::fs::write(dir.join(name), text)?;
        }
        std::fs::write(dir.join(TOPOLOGY_FILE), self.topology.to_toml_string())?;
        std::fs::write(dir.join(MANIFEST_FILE), self.manifest.to_json())
    }
}
