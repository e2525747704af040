//! Nearest-rank percentile, shared by the benchmark harness and the gateway
//! metrics endpoint so both report identical statistics for identical
//! timing arrays.

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PercentileError {
    #[error("percentile of an empty sample set")]
    EmptySamples,
    #[error("percentile p={0} outside (0, 100]")]
    InvalidP(String),
}

/// Nearest-rank percentile: sort ascending, return the element at index
/// `ceil(p/100 * n) - 1`.
pub fn percentile<T: Copy + Ord>(samples: &[T], p: f64) -> Result<T, PercentileError> {
    if samples.is_empty() {
        return Err(PercentileError::EmptySamples);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(PercentileError::InvalidP(p.to_string()));
    }
    let mut sorted: Vec<T> = samples.to_vec();
    sorted.sort_unstable();
    // multiply before dividing: p/100 is often inexact (e.g. 0.56) and the
    // tiny excess would push ceil one rank too high when p*n/100 is integral
    let rank = (p * sorted.len() as f64 / 100.0).ceil() as usize;
    Ok(sorted[rank - 1])
}

/// Median, p95, and p99 of a duration sample set, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatencySummary {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

impl LatencySummary {
    pub fn from_durations(samples: &[Duration]) -> Result<Self, PercentileError> {
        Ok(LatencySummary {
            median_ms: duration_ms(percentile(samples, 50.0)?),
            p95_ms: duration_ms(percentile(samples, 95.0)?),
            p99_ms: duration_ms(percentile(samples, 99.0)?),
        })
    }
}

pub fn duration_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}
