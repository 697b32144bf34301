//! Scenario files: cluster, workloads, faults and effect magnitudes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cluster::ClusterSpec;
use super::HarnessError;

pub const DEFAULT_START: &str = "2025-01-15T20:00:00Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    RingAllreduce,
    AllToAll,
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuSlot {
    pub host: String,
    #[serde(default)]
    pub gpu: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub app_id: String,
    /// Rank order. Empty means every GPU in host order.
    #[serde(default)]
    pub placement: Vec<GpuSlot>,
    #[serde(default = "default_pattern")]
    pub pattern: Pattern,
    pub iterations: u64,
    #[serde(default = "default_bytes")]
    pub bytes_per_op: u64,
    #[serde(default = "default_channels")]
    pub channels: u16,
    /// Seconds between logged iterations.
    #[serde(default = "default_interval")]
    pub sample_interval_secs: u64,
}

fn default_pattern() -> Pattern {
    Pattern::RingAllreduce
}
fn default_bytes() -> u64 {
    1 << 20
}
fn default_channels() -> u16 {
    2
}
fn default_interval() -> u64 {
    1
}

impl WorkloadSpec {
    pub fn ring(app_id: impl Into<String>, iterations: u64) -> Self {
        WorkloadSpec {
            app_id: app_id.into(),
            placement: Vec::new(),
            pattern: Pattern::RingAllreduce,
            iterations,
            bytes_per_op: default_bytes(),
            channels: default_channels(),
            sample_interval_secs: 1,
        }
    }

    pub fn span_secs(&self) -> u64 {
        self.iterations * self.sample_interval_secs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    LinkCongestion,
    GpuThrottle,
    PacketLoss,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Entity id such as `switch_port:spine1/p2` or `nic:node3/nic0`. GPUs
    /// may also be named by position as `gpu:node3/0`.
    pub target: String,
    /// Offsets from the simulation start, half-open.
    pub start_secs: u64,
    pub end_secs: u64,
}

/// Fault magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Effects {
    pub congestion_queue_multiplier: f64,
    pub congestion_cnp_rate: u64,
    pub congestion_iteration_factor: f64,
    pub throttle_temperature: f64,
    pub throttle_utilization: f64,
    pub throttle_iteration_factor: f64,
    pub loss_retransmit_rate: u64,
    pub loss_iteration_factor: f64,
}

impl Default for Effects {
    fn default() -> Self {
        Effects {
            congestion_queue_multiplier: 10.0,
            congestion_cnp_rate: 500,
            congestion_iteration_factor: 0.4,
            throttle_temperature: 92.0,
            throttle_utilization: 25.0,
            throttle_iteration_factor: 0.5,
            loss_retransmit_rate: 200,
            loss_iteration_factor: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: String,
    /// Defaults to the longest workload span.
    #[serde(default)]
    pub duration_secs: Option<u64>,
    /// Per-record flow retention probability.
    #[serde(default = "default_sampling")]
    pub sampling: f64,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub workloads: Vec<WorkloadSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub effects: Effects,
}

fn default_start() -> String {
    DEFAULT_START.to_string()
}
fn default_sampling() -> f64 {
    1.0
}

pub const PRESETS: [&str; 5] = ["healthy", "congestion", "throttle", "loss", "combined"];

impl Scenario {
    pub fn new(seed: u64, cluster: ClusterSpec, workloads: Vec<WorkloadSpec>) -> Self {
        Scenario {
            seed,
            start: default_start(),
            duration_secs: None,
            sampling: 1.0,
            cluster,
            workloads,
            faults: Vec::new(),
            effects: Effects::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn load(path: &Path) -> Result<Scenario, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Scenario(format!("{}: {e}", path.display())))?;
        Scenario::from_toml_str(&text)
    }

    pub fn duration(&self) -> u64 {
        self.duration_secs
            .unwrap_or_else(|| self.workloads.iter().map(WorkloadSpec::span_secs).max().unwrap_or(0))
    }

    /// Built-in scenarios on the eight-host testbed running one ring job.
    pub fn preset(name: &str) -> Option<Scenario> {
        let base = || {
            Scenario::new(
                42,
                ClusterSpec::testbed(),
                vec![WorkloadSpec::ring("845b5514", 600)],
            )
        };
        let fault = |kind, target: &str| FaultSpec { kind, target: target.into(), start_secs: 300, end_secs: 340 };
        let mut s = base();
        match name {
            "healthy" => {}
            "congestion" => s.faults.push(fault(FaultKind::LinkCongestion, "switch_port:leaf2/p1")),
            "throttle" => s.faults.push(fault(FaultKind::GpuThrottle, "gpu:node3/0")),
            "loss" => s.faults.push(fault(FaultKind::PacketLoss, "nic:node6/nic0")),
            "combined" => {
                s.faults.push(fault(FaultKind::LinkCongestion, "switch_port:leaf2/p1"));
                s.faults.push(FaultSpec {
                    kind: FaultKind::GpuThrottle,
                    target: "gpu:node2/0".into(),
                    start_secs: 420,
                    end_secs: 460,
                });
            }
            _ => return None,
        }
        Some(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for name in PRESETS {
            let s = Scenario::preset(name).unwrap();
            assert_eq!(Scenario::from_toml_str(&s.to_toml_string()).unwrap(), s);
        }
        assert!(Scenario::preset("nope").is_none());
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let s = Scenario::from_toml_str(
            r#"
            [cluster]
            hosts = 2
            leaves = 1
            spines = 1

            [[workloads]]
            app_id = "ab"
            iterations = 10
            "#,
        )
        .unwrap();
        assert_eq!(s.cluster.gpus_per_host, 1);
        assert_eq!(s.workloads[0].channels, 2);
        assert_eq!(s.duration(), 10);
        assert_eq!(s.sampling, 1.0);
        assert_eq!(s.effects, Effects::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Scenario::from_toml_str("[cluster]\nhosts = 2\nleaves = 1\nspines = 1\nracks = 3\n").unwrap_err();
        assert!(err.to_string().contains("racks"));
    }
}
