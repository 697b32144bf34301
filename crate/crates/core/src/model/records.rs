use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::entity::EntityId;
use super::time::Timestamp;

/// RoCEv2 UDP destination port.
pub const ROCEV2_PORT: u16 = 4791;

/// QP numbers are 24 bits wide on the wire.
pub const QP_ID_LIMIT: u32 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub entity: EntityId,
    pub metric: String,
    pub timestamp: Timestamp,
    pub value: f64,
    pub labels: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    AllReduce,
    AllGather,
    ReduceScatter,
    Broadcast,
    SendRecv,
}

impl OpKind {
    pub const ALL: [OpKind; 5] =
        [OpKind::AllReduce, OpKind::AllGather, OpKind::ReduceScatter, OpKind::Broadcast, OpKind::SendRecv];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::AllReduce => "AllReduce",
            OpKind::AllGather => "AllGather",
            OpKind::ReduceScatter => "ReduceScatter",
            OpKind::Broadcast => "Broadcast",
            OpKind::SendRecv => "SendRecv",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

/// One line of the instrumented collective-communication log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveLogRecord {
    pub app_id: String,
    pub timestamp: Timestamp,
    pub op_kind: OpKind,
    pub bytes: u64,
    pub src_rank: u32,
    pub dst_rank: u32,
    pub src_gpu_uuid: String,
    pub hostname: String,
    pub channel: u16,
    pub qp_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L4Protocol {
    Udp,
    Tcp,
    Icmp,
}

impl L4Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            L4Protocol::Udp => "udp",
            L4Protocol::Tcp => "tcp",
            L4Protocol::Icmp => "icmp",
        }
    }
}

impl FromStr for L4Protocol {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "udp" => Ok(L4Protocol::Udp),
            "tcp" => Ok(L4Protocol::Tcp),
            "icmp" => Ok(L4Protocol::Icmp),
            _ => Err(()),
        }
    }
}

/// A sampled flow observation exported by one switch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub switch_id: String,
    pub ingress_port: String,
    pub egress_port: String,
    pub timestamp: Timestamp,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub l4_protocol: L4Protocol,
    pub src_port: u16,
    pub dst_port: u16,
    pub qp_id: Option<u32>,
    pub sampled_packets: u64,
    pub sampled_bytes: u64,
}

impl FlowRecord {
    pub fn is_rocev2(&self) -> bool {
        self.l4_protocol == L4Protocol::Udp && self.dst_port == ROCEV2_PORT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NicCounter {
    CnpSent,
    CnpReceived,
    EcnMarked,
    PauseFrames,
    OutOfSequence,
    Retransmits,
    RxBytes,
    TxBytes,
}

impl NicCounter {
    pub const ALL: [NicCounter; 8] = [
        NicCounter::CnpSent,
        NicCounter::CnpReceived,
        NicCounter::EcnMarked,
        NicCounter::PauseFrames,
        NicCounter::OutOfSequence,
        NicCounter::Retransmits,
        NicCounter::RxBytes,
        NicCounter::TxBytes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NicCounter::CnpSent => "cnp_sent",
            NicCounter::CnpReceived => "cnp_received",
            NicCounter::EcnMarked => "ecn_marked",
            NicCounter::PauseFrames => "pause_frames",
            NicCounter::OutOfSequence => "out_of_sequence",
            NicCounter::Retransmits => "retransmits",
            NicCounter::RxBytes => "rx_bytes",
            NicCounter::TxBytes => "tx_bytes",
        }
    }

    /// Name of the metric produced by differentiating this counter.
    pub fn rate_metric(self) -> String {
        format!("nic.{}_rate", self.as_str())
    }
}

impl fmt::Display for NicCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NicCounter {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NicCounter::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

/// Cumulative hardware counter reading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NicCounterRecord {
    pub hostname: String,
    pub nic_id: String,
    pub timestamp: Timestamp,
    pub counter: NicCounter,
    pub value: u64,
}

impl NicCounterRecord {
    pub fn entity(&self) -> EntityId {
        EntityId::nic(&self.hostname, &self.nic_id)
    }
}
