//! Fixed remediation steps per cause kind.

use super::CauseKind;

pub fn remediation_for(kind: CauseKind) -> &'static [&'static str] {
    match kind {
        CauseKind::NetworkCongestion => &[
            "review load balancing across spine paths: ECMP hash spread of the affected queue pairs",
            "check ECN and PFC thresholds on the congested port",
            "move or rate-limit competing flows sharing the congested link",
        ],
        CauseKind::PacketLoss => &[
            "inspect the NIC, cable and switch port optics for errors",
            "verify lossless configuration (PFC priority, buffer headroom) along the path",
            "drain traffic from the link if retransmissions persist",
        ],
        CauseKind::GpuSaturation => &[
            "optimize workload distribution across GPUs and hosts",
            "review batch size and per-rank memory footprint",
            "check for stragglers holding back collective operations",
        ],
        CauseKind::GpuThermalThrottle => &[
            "check cooling, fan speed and inlet temperature for the affected GPU",
            "inspect power capping and clock throttle reasons",
            "optimize workload distribution away from the throttled GPU until it recovers",
        ],
        CauseKind::NicFault => &[
            "check link state and firmware of the NIC",
            "verify the NIC negotiated the expected speed",
            "fail traffic over to a healthy NIC if available",
        ],
        CauseKind::Unknown => &[
            "compare the symptom window against recent deployments and configuration changes",
            "inspect application logs around the symptom window",
            "widen telemetry coverage for the layers involved",
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn required_steps_present() {
        assert!(remediation_for(CauseKind::GpuSaturation).iter().any(|s| s.contains("optimize workload distribution")));
        assert!(remediation_for(CauseKind::NetworkCongestion).iter().any(|s| s.contains("load balancing")));
        assert!(!remediation_for(CauseKind::Unknown).is_empty());
    }
}
