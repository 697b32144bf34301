use std::fmt;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

pub const MICROS_PER_SECOND: i64 = 1_000_000;

/// Microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_secs(secs: i64) -> Self {
        Timestamp(secs * MICROS_PER_SECOND)
    }

    pub fn micros(self) -> i64 {
        self.0
    }

    /// Start of the one-second bucket containing this instant.
    pub fn floor_second(self) -> Timestamp {
        Timestamp(self.0.div_euclid(MICROS_PER_SECOND) * MICROS_PER_SECOND)
    }

    pub fn plus_micros(self, delta: i64) -> Timestamp {
        Timestamp(self.0 + delta)
    }

    /// `YYYY-MM-DDTHH:MM:SS.ffffffZ`, always six fractional digits.
    pub fn to_iso(self) -> String {
        match DateTime::<Utc>::from_timestamp_micros(self.0) {
            Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Micros, true),
            None => format!("@{}", self.0),
        }
    }

    /// Parses an ISO-8601 UTC instant. Accepts `Z` or a numeric offset and
    /// fractional seconds of any precision down to the microsecond.
    pub fn parse_iso(text: &str) -> Option<Timestamp> {
        if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
            return Some(Timestamp(dt.timestamp_micros()));
        }
        NaiveDateTime::parse_from_str(text, "%Y-%m-%dT%H:%M:%S%.f")
            .ok()
            .map(|dt| Timestamp(dt.and_utc().timestamp_micros()))
    }

    /// Accepts either a bare integer (microseconds) or an ISO-8601 instant.
    pub fn parse_flexible(text: &str) -> Option<Timestamp> {
        if let Ok(v) = text.parse::<i64>() {
            return Some(Timestamp(v));
        }
        Self::parse_iso(text)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_iso())
    }
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeRange {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        TimeRange { start, end }
    }

    pub fn everything() -> Self {
        TimeRange { start: Timestamp(i64::MIN), end: Timestamp(i64::MAX) }
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        t >= self.start && t < self.end
    }

    /// True if the closed interval `[a, b]` intersects this range.
    pub fn overlaps(&self, a: Timestamp, b: Timestamp) -> bool {
        a < self.end && b >= self.start
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_round_trip_keeps_micros() {
        let t = Timestamp::parse_iso("2025-01-15T20:31:35.039720Z").unwrap();
        assert_eq!(t.to_iso(), "2025-01-15T20:31:35.039720Z");
        assert_eq!(Timestamp::parse_iso(&t.to_iso()), Some(t));
    }

    #[test]
    fn floor_second_handles_negative() {
        assert_eq!(Timestamp(-1).floor_second(), Timestamp(-1_000_000));
        assert_eq!(Timestamp(2_500_000).floor_second(), Timestamp(2_000_000));
    }

    #[test]
    fn flexible_accepts_both_forms() {
        assert_eq!(Timestamp::parse_flexible("1500"), Some(Timestamp(1500)));
        assert!(Timestamp::parse_flexible("2025-01-15T20:31:35Z").is_some());
        assert!(Timestamp::parse_flexible("yesterday").is_none());
    }
}
