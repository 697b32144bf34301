//! Windowed service level expectation (SLE) compliance.
//!
//! A window is sampled on a one-second tick grid built from the union of
//! constituent sample timestamps. At each tick every constituent contributes
//! its latest value at or before the tick (carried forward within the
//! window). A tick is compliant when every constituent that has a value is
//! within its bounds. Constituents that have not reported yet in the window
//! do not take part in that tick.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depgraph::{app_entities, DependencyGraph, GraphError};
use crate::model::{EntityId, Layer, TelemetrySnapshot, Timestamp, MICROS_PER_SECOND};

#[derive(Debug, Error, PartialEq)]
pub enum SleError {
    #[error("invalid SLE profile: {0}")]
    InvalidProfile(String),
    #[error("unknown application {0}")]
    UnknownApp(String),
    #[error("no SLE profile configured for layer {0}")]
    NoProfile(Layer),
}

impl From<GraphError> for SleError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownApp(a) => SleError::UnknownApp(a),
            other => SleError::InvalidProfile(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constituent {
    pub metric: String,
    #[serde(default)]
    pub lower_bound: Option<f64>,
    #[serde(default)]
    pub upper_bound: Option<f64>,
}

impl Constituent {
    pub fn within(&self, value: f64) -> bool {
        self.lower_bound.is_none_or(|lo| value >= lo) && self.upper_bound.is_none_or(|hi| value <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SleProfile {
    pub layer: Layer,
    pub constituents: Vec<Constituent>,
    #[serde(default = "default_window_secs")]
    pub window_length_secs: u64,
    #[serde(default = "default_stride_secs")]
    pub stride_secs: u64,
}

fn default_window_secs() -> u64 {
    300
}

fn default_stride_secs() -> u64 {
    60
}

fn bounded(metric: &str, lower: Option<f64>, upper: Option<f64>) -> Constituent {
    Constituent { metric: metric.to_string(), lower_bound: lower, upper_bound: upper }
}

impl SleProfile {
    pub fn window_length_us(&self) -> i64 {
        self.window_length_secs as i64 * MICROS_PER_SECOND
    }

    pub fn stride_us(&self) -> i64 {
        self.stride_secs as i64 * MICROS_PER_SECOND
    }

    pub fn validate(&self) -> Result<(), SleError> {
        if self.constituents.is_empty() {
            return Err(SleError::InvalidProfile("at least one constituent is required".into()));
        }
        for c in &self.constituents {
            if c.lower_bound.is_none() && c.upper_bound.is_none() {
                return Err(SleError::InvalidProfile(format!("{} has no bound", c.metric)));
            }
            if let (Some(lo), Some(hi)) = (c.lower_bound, c.upper_bound) {
                if lo > hi {
                    return Err(SleError::InvalidProfile(format!("{} has lower bound above upper bound", c.metric)));
                }
            }
        }
        if self.stride_secs == 0 || self.window_length_secs < self.stride_secs {
            return Err(SleError::InvalidProfile("need window_length >= stride > 0".into()));
        }
        Ok(())
    }

    /// Utilization within [5, 98] %, temperature at most 85 °C, memory at most 95 %.
    pub fn default_gpu() -> Self {
        SleProfile {
            layer: Layer::Gpu,
            constituents: vec![
                bounded("gpu.utilization", Some(5.0), Some(98.0)),
                bounded("gpu.temperature", None, Some(85.0)),
                bounded("gpu.memory_used", None, Some(95.0)),
            ],
            window_length_secs: default_window_secs(),
            stride_secs: default_stride_secs(),
        }
    }

    pub fn default_nic() -> Self {
        SleProfile {
            layer: Layer::Nic,
            constituents: vec![
                bounded("nic.cnp_received_rate", None, Some(100.0)),
                bounded("nic.retransmits_rate", None, Some(50.0)),
                bounded("nic.out_of_sequence_rate", None, Some(50.0)),
            ],
            window_length_secs: default_window_secs(),
            stride_secs: default_stride_secs(),
        }
    }

    pub fn default_application() -> Self {
        SleProfile {
            layer: Layer::Application,
            constituents: vec![bounded("app.iteration_rate", Some(6.0), None)],
            window_length_secs: default_window_secs(),
            stride_secs: default_stride_secs(),
        }
    }

    pub fn default_switch_port() -> Self {
        SleProfile {
            layer: Layer::SwitchPort,
            constituents: vec![bounded("switch.queue_depth", None, Some(100_000.0))],
            window_length_secs: default_window_secs(),
            stride_secs: default_stride_secs(),
        }
    }

    pub fn defaults() -> BTreeMap<Layer, SleProfile> {
        [Self::default_application(), Self::default_gpu(), Self::default_nic(), Self::default_switch_port()]
            .into_iter()
            .map(|p| (p.layer, p))
            .collect()
    }
}

/// Per-metric `(timestamp, value)` sequences, each in time order.
pub type MetricSeries = BTreeMap<String, Vec<(Timestamp, f64)>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleWindow {
    pub layer: Layer,
    pub entity: EntityId,
    pub window_start: Timestamp,
    pub window_length_us: i64,
    /// `None` when no tick could be evaluated.
    pub compliance_pct: Option<f64>,
    pub evaluated_timestamps: usize,
    /// Per metric, the number of ticks at which it was out of bounds.
    pub breaching_metrics: BTreeMap<String, usize>,
}

impl SleWindow {
    pub fn no_data(&self) -> bool {
        self.compliance_pct.is_none()
    }

    pub fn window_end(&self) -> Timestamp {
        self.window_start.plus_micros(self.window_length_us)
    }
}

pub fn evaluate_window(
    entity: &EntityId,
    samples: &MetricSeries,
    profile: &SleProfile,
    window_start: Timestamp,
) -> SleWindow {
    let window_end = window_start.plus_micros(profile.window_length_us());
    let in_window = |t: Timestamp| t >= window_start && t < window_end;

    // Snapped (tick, value) per constituent, in time order.
    let per_constituent: Vec<Vec<(Timestamp, f64)>> = profile
        .constituents
        .iter()
        .map(|c| {
            samples
                .get(&c.metric)
                .map(|pts| pts.iter().filter(|(t, _)| in_window(*t)).map(|(t, v)| (t.floor_second(), *v)).collect())
                .unwrap_or_default()
        })
        .collect();
    let ticks: BTreeSet<Timestamp> = per_constituent.iter().flatten().map(|(t, _)| *t).collect();

    let mut cursors = vec![0usize; per_constituent.len()];
    let mut current: Vec<Option<f64>> = vec![None; per_constituent.len()];
    let mut compliant = 0usize;
    let mut evaluated = 0usize;
    let mut breaching: BTreeMap<String, usize> = BTreeMap::new();
    for &tick in &ticks {
        for (ci, pts) in per_constituent.iter().enumerate() {
            while cursors[ci] < pts.len() && pts[cursors[ci]].0 <= tick {
                current[ci] = Some(pts[cursors[ci]].1);
                cursors[ci] += 1;
            }
        }
        let mut ok = true;
        let mut any = false;
        for (c, value) in profile.constituents.iter().zip(&current) {
            if let Some(v) = value {
                any = true;
                if !c.within(*v) {
                    ok = false;
                    *breaching.entry(c.metric.clone()).or_default() += 1;
                }
            }
        }
        if any {
            evaluated += 1;
            if ok {
                compliant += 1;
            }
        }
    }
    SleWindow {
        layer: profile.layer,
        entity: entity.clone(),
        window_start,
        window_length_us: profile.window_length_us(),
        compliance_pct: (evaluated > 0).then(|| compliant as f64 / evaluated as f64 * 100.0),
        evaluated_timestamps: evaluated,
        breaching_metrics: breaching,
    }
}

/// Window start times covering `[lo, hi]`: the first starts at `lo` snapped
/// to the second, each next one `stride` later, and the last is the first
/// window whose end passes `hi`.
pub fn window_starts(lo: Timestamp, hi: Timestamp, profile: &SleProfile) -> Vec<Timestamp> {
    let mut out = Vec::new();
    let mut start = lo.floor_second();
    loop {
        out.push(start);
        if start.plus_micros(profile.window_length_us()) > hi {
            break;
        }
        start = start.plus_micros(profile.stride_us());
    }
    out
}

fn entity_series(snapshot: &TelemetrySnapshot, entity: &EntityId, profile: &SleProfile) -> MetricSeries {
    profile
        .constituents
        .iter()
        .map(|c| {
            let pts = snapshot.series(entity, &c.metric).iter().map(|m| (m.timestamp, m.value)).collect();
            (c.metric.clone(), pts)
        })
        .collect()
}

fn slice_series(series: &MetricSeries, from: Timestamp, to: Timestamp) -> MetricSeries {
    series
        .iter()
        .map(|(k, pts)| {
            let a = pts.partition_point(|(t, _)| *t < from);
            let b = pts.partition_point(|(t, _)| *t < to);
            (k.clone(), pts[a..b].to_vec())
        })
        .collect()
}

pub fn sle_series(
    snapshot: &TelemetrySnapshot,
    entity: &EntityId,
    profile: &SleProfile,
) -> Result<Vec<SleWindow>, SleError> {
    profile.validate()?;
    let Some((lo, hi)) = snapshot.time_bounds() else {
        return Ok(Vec::new());
    };
    let series = entity_series(snapshot, entity, profile);
    Ok(window_starts(lo, hi, profile)
        .into_iter()
        .map(|start| {
            let end = start.plus_micros(profile.window_length_us());
            evaluate_window(entity, &slice_series(&series, start, end), profile, start)
        })
        .collect())
}

/// One window of a layer-wide aggregate: the weakest entity's compliance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSleWindow {
    pub app: EntityId,
    pub layer: Layer,
    pub window_start: Timestamp,
    pub window_length_us: i64,
    pub compliance_pct: Option<f64>,
    /// Entity whose compliance set the aggregate.
    pub bound_by: Option<EntityId>,
    pub entities_evaluated: usize,
    pub entities_total: usize,
}

pub fn layer_sle(
    graph: &DependencyGraph,
    snapshot: &TelemetrySnapshot,
    app: &EntityId,
    layer: Layer,
    profile: &SleProfile,
) -> Result<Vec<LayerSleWindow>, SleError> {
    profile.validate()?;
    let entities = app_entities(graph, app, layer)?;
    let Some((lo, hi)) = snapshot.time_bounds() else {
        return Ok(Vec::new());
    };
    let per_entity: Vec<Vec<SleWindow>> =
        entities.iter().map(|e| sle_series(snapshot, e, profile)).collect::<Result<_, _>>()?;
    Ok(window_starts(lo, hi, profile)
        .into_iter()
        .enumerate()
        .map(|(i, start)| {
            let mut best: Option<(f64, &EntityId)> = None;
            let mut evaluated = 0;
            for w in per_entity.iter().map(|s| &s[i]) {
                if let Some(pct) = w.compliance_pct {
                    evaluated += 1;
                    if best.is_none_or(|(b, _)| pct < b) {
                        best = Some((pct, &w.entity));
                    }
                }
            }
            LayerSleWindow {
                app: app.clone(),
                layer,
                window_start: start,
                window_length_us: profile.window_length_us(),
                compliance_pct: best.map(|(p, _)| p),
                bound_by: best.map(|(_, e)| e.clone()),
                entities_evaluated: evaluated,
                entities_total: entities.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gpu() -> EntityId {
        EntityId::gpu("GPU-0000a001")
    }

    fn ticks(metric: &str, values: &[f64]) -> (String, Vec<(Timestamp, f64)>) {
        let pts = values.iter().enumerate().map(|(i, &v)| (Timestamp::from_secs(1000 + i as i64), v)).collect();
        (metric.to_string(), pts)
    }

    fn single(metric: &str, lo: Option<f64>, hi: Option<f64>) -> SleProfile {
        SleProfile {
            layer: Layer::Gpu,
            constituents: vec![bounded(metric, lo, hi)],
            window_length_secs: 60,
            stride_secs: 60,
        }
    }

    #[test]
    fn all_compliant_is_100() {
        let s: MetricSeries = [ticks("m", &[1.0; 10])].into();
        let w = evaluate_window(&gpu(), &s, &single("m", None, Some(5.0)), Timestamp::from_secs(1000));
        assert_eq!(w.compliance_pct, Some(100.0));
        assert_eq!(w.evaluated_timestamps, 10);
    }

    #[test]
    fn nine_of_ten_is_90() {
        let mut v = [1.0; 10];
        v[4] = 9.0;
        let s: MetricSeries = [ticks("m", &v)].into();
        let w = evaluate_window(&gpu(), &s, &single("m", None, Some(5.0)), Timestamp::from_secs(1000));
        assert_eq!(w.compliance_pct, Some(90.0));
        assert_eq!(w.breaching_metrics["m"], 1);
    }

    #[test]
    fn gpu_profile_with_three_hot_ticks_is_70() {
        let mut temp = [70.0; 10];
        temp[2] = 90.0;
        temp[5] = 88.0;
        temp[9] = 86.0;
        let s: MetricSeries =
            [ticks("gpu.utilization", &[50.0; 10]), ticks("gpu.temperature", &temp), ticks("gpu.memory_used", &[40.0; 10])]
                .into();
        let w = evaluate_window(&gpu(), &s, &SleProfile::default_gpu(), Timestamp::from_secs(1000));
        assert_eq!(w.compliance_pct, Some(70.0));
        assert_eq!(w.breaching_metrics.len(), 1);
        assert_eq!(w.breaching_metrics["gpu.temperature"], 3);
    }

    #[test]
    fn empty_window_is_no_data_not_100() {
        let w = evaluate_window(&gpu(), &MetricSeries::new(), &SleProfile::default_gpu(), Timestamp::from_secs(0));
        assert!(w.no_data());
        assert_eq!(w.evaluated_timestamps, 0);
    }

    #[test]
    fn last_value_carried_forward_between_sparse_samples() {
        // util reports every second, temp only at t=0 (hot) and t=5 (cool)
        let util = ticks("gpu.utilization", &[50.0; 10]);
        let temp = ("gpu.temperature".to_string(), vec![(Timestamp::from_secs(1000), 90.0), (Timestamp::from_secs(1005), 60.0)]);
        let s: MetricSeries = [util, temp].into();
        let w = evaluate_window(&gpu(), &s, &SleProfile::default_gpu(), Timestamp::from_secs(1000));
        assert_eq!(w.compliance_pct, Some(50.0));
    }

    #[test]
    fn sub_second_samples_snap_to_the_same_tick() {
        let pts = vec![
            (Timestamp(1_000_000_100), 99.0),
            (Timestamp(1_000_000_900), 50.0),
            (Timestamp(1_001_000_000), 50.0),
        ];
        let s: MetricSeries = [("gpu.utilization".to_string(), pts)].into();
        let w = evaluate_window(&gpu(), &s, &SleProfile::default_gpu(), Timestamp::from_secs(1000));
        assert_eq!(w.evaluated_timestamps, 2);
        assert_eq!(w.compliance_pct, Some(100.0));
    }

    #[test]
    fn window_tiling() {
        let p = single("m", None, Some(1.0));
        let starts = window_starts(Timestamp::from_secs(0), Timestamp::from_secs(179), &p);
        assert_eq!(starts, vec![Timestamp::from_secs(0), Timestamp::from_secs(60), Timestamp::from_secs(120)]);
        let short = window_starts(Timestamp::from_secs(0), Timestamp::from_secs(10), &p);
        assert_eq!(short.len(), 1);
    }

    #[test]
    fn profile_validation() {
        let mut p = SleProfile::default_gpu();
        assert!(p.validate().is_ok());
        p.stride_secs = 600;
        assert!(p.validate().is_err());
        let mut p = SleProfile::default_gpu();
        p.constituents.clear();
        assert!(p.validate().is_err());
        let p = single("m", None, None);
        assert!(p.validate().is_err());
    }
}
