//! Anomaly-to-cause signature table.

use serde::{Deserialize, Serialize};

use super::CauseKind;
use crate::anomaly::AnomalyDirection;

/// Anomalies on `metric` in `direction` are evidence for `cause`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureRule {
    pub metric: String,
    pub direction: AnomalyDirection,
    pub cause: CauseKind,
}

impl SignatureRule {
    pub fn new(metric: &str, direction: AnomalyDirection, cause: CauseKind) -> Self {
        SignatureRule { metric: metric.to_string(), direction, cause }
    }
}

/// Built-in rules. Low GPU utilization alone maps to `unknown`; next to a
/// temperature anomaly on the same GPU it is folded into the throttle cause.
pub fn default_signatures() -> Vec<SignatureRule> {
    use AnomalyDirection::{High, Low};
    use CauseKind::*;
    vec![
        SignatureRule::new("switch.queue_depth", High, NetworkCongestion),
        SignatureRule::new("nic.cnp_received_rate", High, NetworkCongestion),
        SignatureRule::new("nic.cnp_sent_rate", High, NetworkCongestion),
        SignatureRule::new("nic.ecn_marked_rate", High, NetworkCongestion),
        SignatureRule::new("nic.pause_frames_rate", High, NetworkCongestion),
        SignatureRule::new("nic.out_of_sequence_rate", High, PacketLoss),
        SignatureRule::new("nic.retransmits_rate", High, PacketLoss),
        SignatureRule::new("nic.rx_bytes_rate", Low, NicFault),
        SignatureRule::new("nic.tx_bytes_rate", Low, NicFault),
        SignatureRule::new("gpu.temperature", High, GpuThermalThrottle),
        SignatureRule::new("gpu.utilization", High, GpuSaturation),
        SignatureRule::new("gpu.memory_used", High, GpuSaturation),
        SignatureRule::new("gpu.utilization", Low, Unknown),
    ]
}

/// Rule lookup with overrides taking precedence over the defaults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureTable {
    rules: Vec<SignatureRule>,
}

impl Default for SignatureTable {
    fn default() -> Self {
        SignatureTable { rules: default_signatures() }
    }
}

impl SignatureTable {
    pub fn with_overrides(overrides: &[SignatureRule]) -> Self {
        let mut rules = overrides.to_vec();
        rules.extend(
            default_signatures()
                .into_iter()
                .filter(|d| !overrides.iter().any(|o| o.metric == d.metric && o.direction == d.direction)),
        );
        SignatureTable { rules }
    }

    pub fn classify(&self, metric: &str, direction: AnomalyDirection) -> Option<CauseKind> {
        self.rules.iter().find(|r| r.metric == metric && r.direction == direction).map(|r| r.cause)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let t = SignatureTable::default();
        assert_eq!(t.classify("switch.queue_depth", AnomalyDirection::High), Some(CauseKind::NetworkCongestion));
        assert_eq!(t.classify("switch.queue_depth", AnomalyDirection::Low), None);
        assert_eq!(t.classify("gpu.utilization", AnomalyDirection::Low), Some(CauseKind::Unknown));
        let o = SignatureTable::with_overrides(&[SignatureRule::new(
            "gpu.utilization",
            AnomalyDirection::Low,
            CauseKind::GpuThermalThrottle,
        )]);
        assert_eq!(o.classify("gpu.utilization", AnomalyDirection::Low), Some(CauseKind::GpuThermalThrottle));
        assert_eq!(o.classify("gpu.temperature", AnomalyDirection::High), Some(CauseKind::GpuThermalThrottle));
    }
}
