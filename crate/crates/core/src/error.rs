use thiserror::Error;

use crate::model::MetricSpec;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("invalid entity {0}: {1}")]
    InvalidEntity(String, &'static str),
    #[error("invalid metric name {0:?}")]
    InvalidMetricName(String),
    #[error("metric {name} already registered as {existing:?}, cannot re-register as {requested:?}")]
    RegistryConflict { name: String, existing: MetricSpec, requested: MetricSpec },
    #[error("topology document: {0}")]
    TopologyParse(String),
    #[error("snapshot archive: {0}")]
    SnapshotFormat(String),
}

/// Stable, machine-readable error categories shared by the CLI and service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Io,
    Parse,
    TopologyInvalid,
    UnknownApp,
    NotFound,
    InvalidSpec,
    Inconsistent,
    Internal,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Usage => "usage",
            ErrorCategory::Io => "io",
            ErrorCategory::Parse => "parse",
            ErrorCategory::TopologyInvalid => "topology-invalid",
            ErrorCategory::UnknownApp => "unknown-app",
            ErrorCategory::NotFound => "not-found",
            ErrorCategory::InvalidSpec => "invalid-spec",
            ErrorCategory::Inconsistent => "inconsistent",
            ErrorCategory::Internal => "internal",
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Internal => 1,
            ErrorCategory::Usage => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Parse => 4,
            ErrorCategory::TopologyInvalid => 5,
            ErrorCategory::UnknownApp => 6,
            ErrorCategory::NotFound => 7,
            ErrorCategory::InvalidSpec => 8,
            ErrorCategory::Inconsistent => 9,
        }
    }
}

impl std::fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ModelError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            ModelError::TopologyParse(_) | ModelError::SnapshotFormat(_) => ErrorCategory::Parse,
            _ => ErrorCategory::InvalidSpec,
        }
    }
}

impl crate::ingest::IngestError {
    pub fn category(&self) -> ErrorCategory {
        use crate::ingest::IngestError::*;
        match self {
            Io { .. } => ErrorCategory::Io,
            UnknownSource(_) => ErrorCategory::Usage,
            TopologyInvalid(_) => ErrorCategory::TopologyInvalid,
            Rate(_) => ErrorCategory::Inconsistent,
        }
    }
}

impl crate::depgraph::GraphError {
    pub fn category(&self) -> ErrorCategory {
        use crate::depgraph::GraphError::*;
        match self {
            UnknownApp(_) => ErrorCategory::UnknownApp,
            Import(_) => ErrorCategory::Parse,
            LayerViolation(_) => ErrorCategory::Inconsistent,
        }
    }
}

impl crate::sle::SleError {
    pub fn category(&self) -> ErrorCategory {
        use crate::sle::SleError::*;
        match self {
            UnknownApp(_) => ErrorCategory::UnknownApp,
            InvalidProfile(_) | NoProfile(_) => ErrorCategory::InvalidSpec,
        }
    }
}

impl crate::pathtrace::PathError {
    pub fn category(&self) -> ErrorCategory {
        use crate::pathtrace::PathError::*;
        match self {
            UnknownApp(_) => ErrorCategory::UnknownApp,
            UnknownNic(_) | UnresolvedRank { .. } => ErrorCategory::NotFound,
            Inconsistent { .. } => ErrorCategory::Inconsistent,
        }
    }
}

impl crate::rca::RcaError {
    pub fn category(&self) -> ErrorCategory {
        use crate::rca::RcaError::*;
        match self {
            UnknownApp(_) => ErrorCategory::UnknownApp,
            NoSymptoms(_) => ErrorCategory::NotFound,
            Anomaly(_) => ErrorCategory::InvalidSpec,
            Graph(_) => ErrorCategory::Inconsistent,
        }
    }
}

impl crate::harness::HarnessError {
    pub fn category(&self) -> ErrorCategory {
        ErrorCategory::InvalidSpec
    }
}

impl crate::config::ConfigError {
    pub fn category(&self) -> ErrorCategory {
        use crate::config::ConfigError::*;
        match self {
            Io { .. } => ErrorCategory::Io,
            Parse(_) => ErrorCategory::Parse,
            Invalid(_) => ErrorCategory::InvalidSpec,
        }
    }
}
