//! Cross-layer assurance for distributed ML workloads.
//!
//! The pipeline ingests application, collective-communication, GPU, NIC and
//! switch flow telemetry into a [`model::TelemetrySnapshot`], derives a
//! layered dependency graph, evaluates per-layer service level expectations,
//! detects anomalies, localizes root causes and reconstructs GPU-to-GPU
//! fabric paths per queue pair. [`harness`] generates synthetic clusters with
//! injected faults and a ground-truth manifest.

pub mod anomaly;
pub mod config;
pub mod depgraph;
pub mod error;
pub mod harness;
pub mod ingest;
pub mod model;
pub mod pathtrace;
pub mod rca;
pub mod sle;

pub use error::{ErrorCategory, ModelError};
