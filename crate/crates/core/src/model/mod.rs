//! Domain types shared by every stage of the pipeline.

pub mod entity;
pub mod records;
pub mod registry;
pub mod snapshot;
pub mod time;
pub mod topology;

pub use entity::{EntityId, Layer};
pub use records::{
    CollectiveLogRecord, FlowRecord, L4Protocol, MetricSample, NicCounter, NicCounterRecord, OpKind, QP_ID_LIMIT,
    ROCEV2_PORT,
};
pub use registry::{Direction, MetricRegistry, MetricSpec, Unit};
pub use snapshot::{Quarantine, TelemetrySnapshot};
pub use time::{TimeRange, Timestamp, MICROS_PER_SECOND};
pub use topology::{
    validate_topology, Endpoint, GpuSpec, HostSpec, Link, NicRef, NicSpec, PortRef, SwitchSpec, Tier, Topology,
    TopologyIndex, Violation,
};
