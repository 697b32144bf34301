//! Line grammars for every telemetry source, with matching serializers.
//!
//! Collective log (space separated, `key=value` fields in any order after
//! the timestamp):
//!
//! ```text
//! line      = iso-ts 1*(SP field)
//! iso-ts    = YYYY-MM-DD "T" hh:mm:ss "." 6DIGIT "Z"
//! field     = ("app" | "op" | "bytes" | "src_rank" | "dst_rank"
//!             | "channel" | "qp" | "host" | "gpu") "=" value
//! ```
//!
//! Flow record (comma separated, fixed order, empty `qp` means absent):
//!
//! ```text
//! line = switch "," ingress "," egress "," ts-us "," src-ip "," dst-ip ","
//!        proto "," src-port "," dst-port "," [qp] "," packets "," bytes
//! ```
//!
//! Metric sample: `ts-us SP metric SP value *(SP label "=" value)`.
//!
//! NIC counter: `ts-us SP hostname SP nic-id SP counter SP value`.

use std::collections::BTreeMap;
use std::fmt;

use crate::model::{
    entity::is_gpu_uuid, CollectiveLogRecord, EntityId, FlowRecord, L4Protocol, MetricRegistry, MetricSample,
    NicCounter, NicCounterRecord, OpKind, Timestamp, QP_ID_LIMIT, ROCEV2_PORT,
};

/// Why a syntactically valid record was set aside rather than accepted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum QuarantineReason {
    Malformed,
    MissingQp,
    UnregisteredMetric,
    UnknownEntity,
    LabelMismatch,
    QpConflict,
    DuplicateTimestamp,
}

impl QuarantineReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            QuarantineReason::Malformed => "malformed",
            QuarantineReason::MissingQp => "missing-qp",
            QuarantineReason::UnregisteredMetric => "unregistered-metric",
            QuarantineReason::UnknownEntity => "unknown-entity",
            QuarantineReason::LabelMismatch => "label-mismatch",
            QuarantineReason::QpConflict => "qp-conflict",
            QuarantineReason::DuplicateTimestamp => "duplicate-timestamp",
        }
    }
}

impl fmt::Display for QuarantineReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LineError {
    /// `offset` is the byte offset within the line of the offending token.
    #[error("malformed line at byte {offset}: {reason} (token {token:?})")]
    Malformed { offset: usize, token: String, reason: String },
    #[error("quarantined: {reason} ({detail})")]
    Quarantined { reason: QuarantineReason, detail: String },
}

impl LineError {
    fn malformed(offset: usize, token: &str, reason: impl Into<String>) -> Self {
        LineError::Malformed { offset, token: token.to_string(), reason: reason.into() }
    }

    fn quarantined(reason: QuarantineReason, detail: impl Into<String>) -> Self {
        LineError::Quarantined { reason, detail: detail.into() }
    }

    pub fn quarantine_reason(&self) -> QuarantineReason {
        match self {
            LineError::Malformed { .. } => QuarantineReason::Malformed,
            LineError::Quarantined { reason, .. } => reason.clone(),
        }
    }
}

/// Splits on `sep`, yielding `(byte_offset, token)`; empty tokens are kept.
fn split_with_offsets(line: &str, sep: char) -> impl Iterator<Item = (usize, &str)> {
    let mut start = 0;
    line.split(sep).map(move |tok| {
        let at = start;
        start += tok.len() + sep.len_utf8();
        (at, tok)
    })
}

fn parse_num<T: std::str::FromStr>(offset: usize, tok: &str, what: &str) -> Result<T, LineError> {
    tok.parse().map_err(|_| LineError::malformed(offset, tok, format!("invalid {what}")))
}

fn parse_micros(offset: usize, tok: &str) -> Result<Timestamp, LineError> {
    let v: i64 = parse_num(offset, tok, "timestamp")?;
    if v <= 0 {
        return Err(LineError::malformed(offset, tok, "timestamp must be positive"));
    }
    Ok(Timestamp(v))
}

fn is_hex_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_hexdigit())
}

fn is_plain_token(s: &str) -> bool {
    !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || c == '=' || c == ',')
}

pub fn serialize_collective(r: &CollectiveLogRecord) -> String {
    format!(
        "{} app={} op={} bytes={} src_rank={} dst_rank={} channel={} qp={} host={} gpu={}",
        r.timestamp.to_iso(),
        r.app_id,
        r.op_kind,
        r.bytes,
        r.src_rank,
        r.dst_rank,
        r.channel,
        r.qp_id,
        r.hostname,
        r.src_gpu_uuid
    )
}

pub fn parse_collective_log(line: &str) -> Result<CollectiveLogRecord, LineError> {
    let mut tokens = split_with_offsets(line, ' ');
    let (ts_off, ts_tok) = tokens.next().unwrap_or((0, ""));
    let timestamp = Timestamp::parse_iso(ts_tok)
        .filter(|t| t.0 > 0)
        .ok_or_else(|| LineError::malformed(ts_off, ts_tok, "expected ISO-8601 timestamp"))?;

    const KEYS: [&str; 9] = ["app", "op", "bytes", "src_rank", "dst_rank", "channel", "qp", "host", "gpu"];
    let mut fields: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (off, tok) in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| LineError::malformed(off, tok, "expected key=value"))?;
        if !KEYS.contains(&key) {
            return Err(LineError::malformed(off, tok, "unknown field"));
        }
        if fields.insert(key, (off + key.len() + 1, value)).is_some() {
            return Err(LineError::malformed(off, tok, "duplicate field"));
        }
    }
    let get = |key: &'static str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| LineError::malformed(line.len(), key, format!("missing field {key}")))
    };

    let (off, app) = get("app")?;
    if !is_hex_id(app) {
        return Err(LineError::malformed(off, app, "app id must be hex"));
    }
    let (off, op) = get("op")?;
    let op_kind: OpKind = op.parse().map_err(|_| LineError::malformed(off, op, "unknown collective op"))?;
    let (off, v) = get("bytes")?;
    let bytes: u64 = parse_num(off, v, "bytes")?;
    let (off, v) = get("src_rank")?;
    let src_rank: u32 = parse_num(off, v, "src_rank")?;
    let (dst_off, v) = get("dst_rank")?;
    let dst_rank: u32 = parse_num(dst_off, v, "dst_rank")?;
    if src_rank == dst_rank {
        return Err(LineError::malformed(dst_off, v, "src_rank equals dst_rank"));
    }
    let (off, v) = get("channel")?;
    let channel: u16 = parse_num(off, v, "channel")?;
    let (off, v) = get("qp")?;
    let qp_id: u32 = parse_num(off, v, "qp")?;
    if qp_id >= QP_ID_LIMIT {
        return Err(LineError::malformed(off, v, "qp exceeds 24 bits"));
    }
    let (off, host) = get("host")?;
    if !is_plain_token(host) || host.contains(['/', ':']) {
        return Err(LineError::malformed(off, host, "invalid hostname"));
    }
    let (off, gpu) = get("gpu")?;
    if !is_gpu_uuid(gpu) {
        return Err(LineError::malformed(off, gpu, "invalid GPU uuid"));
    }
    Ok(CollectiveLogRecord {
        app_id: app.to_string(),
        timestamp,
        op_kind,
        bytes,
        src_rank,
        dst_rank,
        src_gpu_uuid: gpu.to_string(),
        hostname: host.to_string(),
        channel,
        qp_id,
    })
}

pub fn serialize_flow(r: &FlowRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        r.switch_id,
        r.ingress_port,
        r.egress_port,
        r.timestamp.0,
        r.src_ip,
        r.dst_ip,
        r.l4_protocol.as_str(),
        r.src_port,
        r.dst_port,
        r.qp_id.map(|q| q.to_string()).unwrap_or_default(),
        r.sampled_packets,
        r.sampled_bytes
    )
}

pub fn parse_flow_record(line: &str) -> Result<FlowRecord, LineError> {
    let fields: Vec<(usize, &str)> = split_with_offsets(line, ',').collect();
    if fields.len() != 12 {
        let (off, tok) = fields.get(12).copied().unwrap_or((line.len(), ""));
        return Err(LineError::malformed(off, tok, format!("expected 12 fields, found {}", fields.len())));
    }
    for &(off, tok) in &[fields[0], fields[1], fields[2]] {
        if !is_plain_token(tok) || tok.contains(['/', ':']) {
            return Err(LineError::malformed(off, tok, "invalid switch or port id"));
        }
    }
    if fields[1].1 == fields[2].1 {
        return Err(LineError::malformed(fields[2].0, fields[2].1, "ingress equals egress"));
    }
    let timestamp = parse_micros(fields[3].0, fields[3].1)?;
    let src_ip = parse_num(fields[4].0, fields[4].1, "source ip")?;
    let dst_ip = parse_num(fields[5].0, fields[5].1, "destination ip")?;
    let l4_protocol: L4Protocol = fields[6]
        .1
        .parse()
        .map_err(|_| LineError::malformed(fields[6].0, fields[6].1, "unknown protocol"))?;
    let src_port: u16 = parse_num(fields[7].0, fields[7].1, "source port")?;
    let dst_port: u16 = parse_num(fields[8].0, fields[8].1, "destination port")?;
    let qp_id = match fields[9].1 {
        "" => None,
        tok => {
            let q: u32 = parse_num(fields[9].0, tok, "qp")?;
            if q >= QP_ID_LIMIT {
                return Err(LineError::malformed(fields[9].0, tok, "qp exceeds 24 bits"));
            }
            Some(q)
        }
    };
    let sampled_packets = parse_num(fields[10].0, fields[10].1, "packet count")?;
    let sampled_bytes = parse_num(fields[11].0, fields[11].1, "byte count")?;
    if qp_id.is_none() && dst_port == ROCEV2_PORT {
        return Err(LineError::quarantined(QuarantineReason::MissingQp, "RoCEv2 flow without qp"));
    }
    Ok(FlowRecord {
        switch_id: fields[0].1.to_string(),
        ingress_port: fields[1].1.to_string(),
        egress_port: fields[2].1.to_string(),
        timestamp,
        src_ip,
        dst_ip,
        l4_protocol,
        src_port,
        dst_port,
        qp_id,
        sampled_packets,
        sampled_bytes,
    })
}

pub fn serialize_metric(s: &MetricSample) -> String {
    let mut out = format!("{} {} {}", s.timestamp.0, s.metric, s.value);
    for (k, v) in &s.labels {
        out.push(' ');
        out.push_str(k);
        out.push('=');
        out.push_str(v);
    }
    out
}

/// Resolves the entity a sample describes from its labels.
///
/// Precedence: `gpu_uuid`, then `switch` (+ `port`), then `hostname`
/// (+ `nic`), then `app`.
pub fn entity_from_labels(labels: &BTreeMap<String, String>) -> Option<EntityId> {
    let get = |k: &str| labels.get(k).map(String::as_str);
    if let Some(uuid) = get("gpu_uuid") {
        return Some(EntityId::gpu(uuid));
    }
    if let Some(sw) = get("switch") {
        return Some(match get("port") {
            Some(p) => EntityId::switch_port(sw, p),
            None => EntityId::switch(sw),
        });
    }
    if let Some(host) = get("hostname") {
        return Some(match get("nic") {
            Some(n) => EntityId::nic(host, n),
            None => EntityId::host(host),
        });
    }
    get("app").map(EntityId::app)
}

pub fn parse_metric_record(line: &str, registry: &MetricRegistry) -> Result<MetricSample, LineError> {
    let mut tokens = split_with_offsets(line, ' ');
    let (off, tok) = tokens.next().unwrap_or((0, ""));
    let timestamp = parse_micros(off, tok)?;
    let (name_off, metric) = tokens
        .next()
        .ok_or_else(|| LineError::malformed(line.len(), "", "missing metric name"))?;
    if !is_plain_token(metric) {
        return Err(LineError::malformed(name_off, metric, "invalid metric name"));
    }
    let (off, tok) = tokens
        .next()
        .ok_or_else(|| LineError::malformed(line.len(), "", "missing value"))?;
    let value: f64 = parse_num(off, tok, "value")?;
    if !value.is_finite() {
        return Err(LineError::malformed(off, tok, "value must be finite"));
    }
    let mut labels = BTreeMap::new();
    for (off, tok) in tokens {
        let (k, v) = tok
            .split_once('=')
            .filter(|(k, v)| is_plain_token(k) && is_plain_token(v))
            .ok_or_else(|| LineError::malformed(off, tok, "expected label=value"))?;
        if labels.insert(k.to_string(), v.to_string()).is_some() {
            return Err(LineError::malformed(off, tok, "duplicate label"));
        }
    }
    let entity = entity_from_labels(&labels)
        .ok_or_else(|| LineError::malformed(line.len(), "", "labels do not identify an entity"))?;
    entity
        .validate()
        .map_err(|e| LineError::malformed(name_off, &entity.key, e.to_string()))?;
    if !registry.contains(metric) {
        return Err(LineError::quarantined(QuarantineReason::UnregisteredMetric, metric));
    }
    Ok(MetricSample { entity, metric: metric.to_string(), timestamp, value, labels })
}

pub fn serialize_nic_counter(r: &NicCounterRecord) -> String {
    format!("{} {} {} {} {}", r.timestamp.0, r.hostname, r.nic_id, r.counter, r.value)
}

pub fn parse_nic_counter(line: &str) -> Result<NicCounterRecord, LineError> {
    let fields: Vec<(usize, &str)> = split_with_offsets(line, ' ').collect();
    if fields.len() != 5 {
        let (off, tok) = fields.get(5).copied().unwrap_or((line.len(), ""));
        return Err(LineError::malformed(off, tok, format!("expected 5 fields, found {}", fields.len())));
    }
    let timestamp = parse_micros(fields[0].0, fields[0].1)?;
    for &(off, tok) in &fields[1..3] {
        if !is_plain_token(tok) || tok.contains(['/', ':']) {
            return Err(LineError::malformed(off, tok, "invalid host or nic id"));
        }
    }
    let counter: NicCounter = fields[3]
        .1
        .parse()
        .map_err(|_| LineError::malformed(fields[3].0, fields[3].1, "unknown counter"))?;
    let value = parse_num(fields[4].0, fields[4].1, "counter value")?;
    Ok(NicCounterRecord {
        hostname: fields[1].1.to_string(),
        nic_id: fields[2].1.to_string(),
        timestamp,
        counter,
        value,
    })
}
