use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{MetricSample, NicCounterRecord, MICROS_PER_SECOND};

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("non-positive time step between samples at {prev} and {next} (index {index})")]
    NonPositiveStep { index: usize, prev: i64, next: i64 },
    #[error("series mixes keys: {0} and {1}")]
    MixedKeys(String, String),
}

/// Turns a cumulative counter series into per-second rates.
///
/// The series must hold a single `(host, nic, counter)` key in time order.
/// A decrease is read as a counter reset, in which case the new reading is
/// the whole increment. The first sample yields no rate.
pub fn derive_rates(series: &[NicCounterRecord]) -> Result<Vec<MetricSample>, RateError> {
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    let key = |r: &NicCounterRecord| format!("{}/{}/{}", r.hostname, r.nic_id, r.counter);
    let first_key = key(first);
    let metric = first.counter.rate_metric();
    let entity = first.entity();
    let mut labels = BTreeMap::new();
    labels.insert("hostname".to_string(), first.hostname.clone());
    labels.insert("nic".to_string(), first.nic_id.clone());

    let mut out = Vec::with_capacity(series.len().saturating_sub(1));
    for (i, pair) in series.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        if key(next) != first_key {
            return Err(RateError::MixedKeys(first_key, key(next)));
        }
        let dt = next.timestamp.0 - prev.timestamp.0;
        if dt <= 0 {
            return Err(RateError::NonPositiveStep { index: i + 1, prev: prev.timestamp.0, next: next.timestamp.0 });
        }
        let delta = if next.value >= prev.value { next.value - prev.value } else { next.value };
        out.push(MetricSample {
            entity: entity.clone(),
            metric: metric.clone(),
            timestamp: next.timestamp,
            value: delta as f64 * MICROS_PER_SECOND as f64 / dt as f64,
            labels: labels.clone(),
        });
    }
    Ok(out)
}
