//! Robust z-score anomaly detection and metric ranking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EntityId, MetricSample, TimeRange, Timestamp};

/// Consistency constant making MAD estimate the standard deviation of a
/// normal distribution.
pub const MAD_SCALE: f64 = 1.4826;
pub const MIN_BASELINE_LEN: usize = 4;
const DISPERSION_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnomalyError {
    #[error("series too short for a baseline: {0} values, need at least {MIN_BASELINE_LEN}")]
    TooShort(usize),
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub median: f64,
    pub dispersion: f64,
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

fn dispersion_from(median: f64, values: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(values.iter().map(|v| (v - median).abs()));
    let mad = median_in_place(scratch);
    if mad == 0.0 {
        DISPERSION_FLOOR.max(0.01 * median.abs())
    } else {
        MAD_SCALE * mad
    }
}

/// Median and scaled median absolute deviation. A zero MAD falls back to
/// `max(1e-9, 0.01 * |median|)`.
pub fn robust_baseline(series: &[f64]) -> Result<Baseline, AnomalyError> {
    if series.len() < MIN_BASELINE_LEN {
        return Err(AnomalyError::TooShort(series.len()));
    }
    let mut sorted = series.to_vec();
    let median = median_in_place(&mut sorted);
    let dispersion = dispersion_from(median, series, &mut Vec::with_capacity(series.len()));
    Ok(Baseline { median, dispersion })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Trailing samples forming each baseline.
    pub baseline_window: usize,
    /// Score threshold.
    pub threshold: f64,
    /// Consecutive over-threshold samples required for an event.
    pub persistence: usize,
    /// Baseline samples required before scoring starts.
    pub min_baseline: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams { baseline_window: 120, threshold: 3.0, persistence: 3, min_baseline: 30 }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), AnomalyError> {
        if !(self.threshold > 0.0) || !self.threshold.is_finite() {
            return Err(AnomalyError::InvalidParams("threshold must be positive".into()));
        }
        if self.persistence == 0 {
            return Err(AnomalyError::InvalidParams("persistence must be at least 1".into()));
        }
        if self.min_baseline < MIN_BASELINE_LEN || self.min_baseline > self.baseline_window {
            return Err(AnomalyError::InvalidParams(format!(
                "min_baseline must be between {MIN_BASELINE_LEN} and baseline_window"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyDirection {
    High,
    Low,
}

impl AnomalyDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyDirection::High => "high",
            AnomalyDirection::Low => "low",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub entity: EntityId,
    pub metric: String,
    /// First sample of the excursion.
    pub timestamp: Timestamp,
    /// Largest score reached during the excursion.
    pub score: f64,
    pub direction: AnomalyDirection,
    /// Baseline in force at the first sample.
    pub baseline: Baseline,
    /// First and last sample timestamps of the excursion.
    pub window: (Timestamp, Timestamp),
}

/// Trailing window kept sorted for O(1) median lookup.
struct SortedWindow {
    order: std::collections::VecDeque<f64>,
    sorted: Vec<f64>,
    cap: usize,
}

impl SortedWindow {
    fn new(cap: usize) -> Self {
        SortedWindow { order: Default::default(), sorted: Vec::with_capacity(cap + 1), cap }
    }

    fn push(&mut self, v: f64) {
        if self.order.len() == self.cap {
            let old = self.order.pop_front().expect("non-empty");
            let at = self.sorted.partition_point(|x| x.total_cmp(&old).is_lt());
            self.sorted.remove(at);
        }
        self.order.push_back(v);
        let at = self.sorted.partition_point(|x| x.total_cmp(&v).is_le());
        self.sorted.insert(at, v);
    }

    fn median(&self) -> f64 {
        let n = self.sorted.len();
        if n % 2 == 1 {
            self.sorted[n / 2]
        } else {
            (self.sorted[n / 2 - 1] + self.sorted[n / 2]) / 2.0
        }
    }

    fn baseline(&self, scratch: &mut Vec<f64>) -> Baseline {
        let median = self.median();
        Baseline { median, dispersion: dispersion_from(median, &self.sorted, scratch) }
    }
}

struct Run {
    start: usize,
    len: usize,
    direction: AnomalyDirection,
    max_score: f64,
    baseline: Baseline,
}

/// Scores each sample against the trailing `baseline_window` samples before
/// it (once at least `min_baseline` are available) and emits one event per run of at least `persistence` consecutive
/// same-direction samples scoring at or above `threshold`.
pub fn detect_points(
    entity: &EntityId,
    metric: &str,
    points: &[(Timestamp, f64)],
    params: &DetectorParams,
) -> Result<Vec<AnomalyEvent>, AnomalyError> {
    params.validate()?;
    let mut events = Vec::new();
    let mut window = SortedWindow::new(params.baseline_window);
    let mut scratch = Vec::with_capacity(params.baseline_window);
    let mut run: Option<Run> = None;

    let close = |run: Option<Run>, end: usize, events: &mut Vec<AnomalyEvent>| {
        if let Some(r) = run {
            if r.len >= params.persistence {
                events.push(AnomalyEvent {
                    entity: entity.clone(),
                    metric: metric.to_string(),
                    timestamp: points[r.start].0,
                    score: r.max_score,
                    direction: r.direction,
                    baseline: r.baseline,
                    window: (points[r.start].0, points[end].0),
                });
            }
        }
    };

    for (i, &(_, v)) in points.iter().enumerate() {
        let scored = (window.order.len() >= params.min_baseline).then(|| {
            let b = window.baseline(&mut scratch);
            ((v - b.median).abs() / b.dispersion, b)
        });
        match scored {
            Some((score, baseline)) if score >= params.threshold => {
                let direction = if v >= baseline.median { AnomalyDirection::High } else { AnomalyDirection::Low };
                match run.as_mut() {
                    Some(r) if r.direction == direction => {
                        r.len += 1;
                        r.max_score = r.max_score.max(score);
                    }
                    _ => {
                        close(run.take(), i - 1, &mut events);
                        run = Some(Run { start: i, len: 1, direction, max_score: score, baseline });
                    }
                }
            }
            _ => {
                if i > 0 {
                    close(run.take(), i - 1, &mut events);
                }
            }
        }
        window.push(v);
    }
    if !points.is_empty() {
        close(run.take(), points.len() - 1, &mut events);
    }
    Ok(events)
}

/// Runs [`detect_points`] over samples of a single (entity, metric) series.
pub fn detect(series: &[&MetricSample], params: &DetectorParams) -> Result<Vec<AnomalyEvent>, AnomalyError> {
    let Some(first) = series.first() else {
        params.validate()?;
        return Ok(Vec::new());
    };
    let points: Vec<(Timestamp, f64)> = series.iter().map(|s| (s.timestamp, s.value)).collect();
    detect_points(&first.entity, &first.metric, &points, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMetric {
    pub entity: EntityId,
    pub metric: String,
    pub rank_score: f64,
}

/// Ranks (entity, metric) pairs by their largest event score among events
/// overlapping `range`; ties go to (layer, entity key, metric) order.
pub fn rank_metrics(events: &[AnomalyEvent], range: TimeRange) -> Vec<RankedMetric> {
    let mut best: BTreeMap<(&EntityId, &str), f64> = BTreeMap::new();
    for e in events.iter().filter(|e| range.overlaps(e.window.0, e.window.1)) {
        let slot = best.entry((&e.entity, e.metric.as_str())).or_insert(e.score);
        *slot = slot.max(e.score);
    }
    let mut ranked: Vec<RankedMetric> = best
        .into_iter()
        .map(|((entity, metric), rank_score)| RankedMetric { entity: entity.clone(), metric: metric.to_string(), rank_score })
        .collect();
    ranked.sort_by(|a, b| {
        b.rank_score
            .total_cmp(&a.rank_score)
            .then_with(|| a.entity.cmp(&b.entity))
            .then_with(|| a.metric.cmp(&b.metric))
    });
    ranked
}
