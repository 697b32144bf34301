use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::records::NicCounter;
use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Percent,
    Bytes,
    Celsius,
    Watts,
    OpsPerSecond,
    EventsPerSecond,
    BytesPerSecond,
    Dimensionless,
}

/// Which side of a metric's range indicates trouble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBad,
    LowerIsBad,
    Band,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub unit: Unit,
    pub direction: Direction,
}

/// Known metric names with their unit and badness direction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRegistry {
    entries: BTreeMap<String, MetricSpec>,
}

impl MetricRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry preloaded with every metric the bundled sources emit.
    pub fn with_defaults() -> Self {
        use Direction::*;
        use Unit::*;
        let mut r = Self::empty();
        let fixed: [(&str, Unit, Direction); 9] = [
            ("app.iteration_rate", OpsPerSecond, LowerIsBad),
            ("app.collective_rate", OpsPerSecond, LowerIsBad),
            ("app.loss", Dimensionless, HigherIsBad),
            ("app.accuracy", Percent, LowerIsBad),
            ("gpu.utilization", Percent, Band),
            ("gpu.temperature", Celsius, HigherIsBad),
            ("gpu.memory_used", Percent, HigherIsBad),
            ("gpu.power", Watts, Band),
            ("switch.queue_depth", Bytes, HigherIsBad),
        ];
        for (name, unit, dir) in fixed {
            r.register(name, unit, dir).expect("defaults are consistent");
        }
        for counter in NicCounter::ALL {
            let (unit, dir) = match counter {
                NicCounter::RxBytes | NicCounter::TxBytes => (BytesPerSecond, Band),
                _ => (EventsPerSecond, HigherIsBad),
            };
            r.register(&counter.rate_metric(), unit, dir).expect("defaults are consistent");
        }
        r
    }

    /// Registers a metric. Re-registering with the same unit and direction
    /// is a no-op; any difference is a conflict.
    pub fn register(&mut self, name: &str, unit: Unit, direction: Direction) -> Result<MetricSpec, ModelError> {
        let spec = MetricSpec { unit, direction };
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(ModelError::InvalidMetricName(name.to_string()));
        }
        match self.entries.get(name) {
            Some(existing) if *existing != spec => Err(ModelError::RegistryConflict {
                name: name.to_string(),
                existing: *existing,
                requested: spec,
            }),
            Some(existing) => Ok(*existing),
            None => {
                self.entries.insert(name.to_string(), spec);
                Ok(spec)
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&MetricSpec> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &MetricSpec)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_then_conflict() {
        let mut r = MetricRegistry::empty();
        r.register("gpu.utilization", Unit::Percent, Direction::Band).unwrap();
        let err = r.register("gpu.utilization", Unit::Celsius, Direction::Band).unwrap_err();
        assert!(matches!(err, ModelError::RegistryConflict { .. }));
        // identical re-registration is accepted
        r.register("gpu.utilization", Unit::Percent, Direction::Band).unwrap();
    }

    #[test]
    fn direction_change_is_a_conflict() {
        let mut r = MetricRegistry::empty();
        r.register("app.iteration_rate", Unit::OpsPerSecond, Direction::LowerIsBad).unwrap();
        assert!(r.register("app.iteration_rate", Unit::OpsPerSecond, Direction::Band).is_err());
    }

    #[test]
    fn defaults_cover_nic_rates() {
        let r = MetricRegistry::with_defaults();
        assert!(r.contains("nic.cnp_received_rate"));
        assert_eq!(r.get("app.iteration_rate").unwrap().direction, Direction::LowerIsBad);
        assert!(!r.contains("gpu.flux_capacitance"));
    }
}
