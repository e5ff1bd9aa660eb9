//! Uniform quantization of real-valued variables into discrete levels.

use log::warn;
use thiserror::Error;

use crate::model::{ModelError, TimeSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizerError {
    #[error("quantizer range is empty or not finite: min {min}, max {max}")]
    BadRange { min: f64, max: f64 },
    #[error("a quantizer needs at least 2 levels, got {0}")]
    TooFewLevels(u32),
    #[error("thresholds must be finite, strictly increasing and strictly inside ({min}, {max})")]
    BadThresholds { min: f64, max: f64 },
    #[error("level {level} out of range for a {levels}-level quantizer")]
    LevelOutOfRange { level: u32, levels: u32 },
    #[error("series is empty")]
    EmptySeries,
    #[error(transparent)]
    Series(#[from] ModelError),
}

/// Where a value fell relative to the quantizer's range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeStatus {
    InRange,
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    min: f64,
    max: f64,
    thresholds: Vec<f64>,
}

impl Quantizer {
    /// Builds a quantizer from caller-supplied thresholds (uniform or not).
    pub fn new(min: f64, max: f64, thresholds: Vec<f64>) -> Result<Self, QuantizerError> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(QuantizerError::BadRange { min, max });
        }
        let mut prev = min;
        for &t in &thresholds {
            if !(t.is_finite() && t > prev) {
                return Err(QuantizerError::BadThresholds { min, max });
            }
            prev = t;
        }
        if prev >= max && !thresholds.is_empty() {
            return Err(QuantizerError::BadThresholds { min, max });
        }
        if thresholds.is_empty() {
            return Err(QuantizerError::TooFewLevels(1));
        }
        Ok(Quantizer { min, max, thresholds })
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn levels(&self) -> u32 {
        self.thresholds.len() as u32 + 1
    }

    /// Bin edges `[min, t1, ..., t_{L-1}, max]`.
    pub fn edges(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(self.min).chain(self.thresholds.iter().copied()).chain(std::iter::once(self.max))
    }

    /// Width of the widest bin; equals `(max - min) / L` for uniform quantizers.
    pub fn max_bin_width(&self) -> f64 {
        let edges: Vec<f64> = self.edges().collect();
        edges.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Level for `v` plus whether it had to be clamped.
    ///
    /// The first bin is closed on both ends; every later bin is `(t_i, t_{i+1}]`.
    /// NaN is treated as below range.
    pub fn classify(&self, v: f64) -> (u32, RangeStatus) {
        if v.is_nan() || v < self.min {
            return (0, RangeStatus::Below);
        }
        if v > self.max {
            return (self.levels() - 1, RangeStatus::Above);
        }
        let level = self.thresholds.partition_point(|&t| t < v);
        (level as u32, RangeStatus::InRange)
    }
}

pub fn make_uniform_thresholds(min: f64, max: f64, levels: u32) -> Result<Quantizer, QuantizerError> {
    if levels < 2 {
        return Err(QuantizerError::TooFewLevels(levels));
    }
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(QuantizerError::BadRange { min, max });
    }
    let span = max - min;
    let thresholds = (1..levels).map(|i| min + span * f64::from(i) / f64::from(levels)).collect();
    Quantizer::new(min, max, thresholds)
}

/// Level for `v`; out-of-range values clamp to the nearest extreme level and
/// log a warning.
pub fn quantize_value(q: &Quantizer, v: f64) -> u32 {
    let (level, status) = q.classify(v);
    match status {
        RangeStatus::InRange => {}
        RangeStatus::Below => warn!("value {v} below quantizer minimum {}; clamped to level 0", q.min),
        RangeStatus::Above => warn!("value {v} above quantizer maximum {}; clamped to level {level}", q.max),
    }
    level
}

/// Midpoint of the bin for `level`.
pub fn dequantize(q: &Quantizer, level: u32) -> Result<f64, QuantizerError> {
    let levels = q.levels();
    if level >= levels {
        return Err(QuantizerError::LevelOutOfRange { level, levels });
    }
    let i = level as usize;
    let lo = if i == 0 { q.min } else { q.thresholds[i - 1] };
    let hi = if i + 1 == levels as usize { q.max } else { q.thresholds[i] };
    Ok(lo + (hi - lo) / 2.0)
}

pub fn quantize_series(q: &Quantizer, series: &[(usize, f64)]) -> Result<TimeSeries, QuantizerError> {
    if series.is_empty() {
        return Err(QuantizerError::EmptySeries);
    }
    let points = series.iter().map(|&(i, v)| (i, quantize_value(q, v))).collect();
    Ok(TimeSeries::new(points)?)
}

/// Mean square quantization error against bin-midpoint reconstruction.
pub fn msqe(q: &Quantizer, series: &[f64]) -> Result<f64, QuantizerError> {
    if series.is_empty() {
        return Err(QuantizerError::EmptySeries);
    }
    let total: f64 = series
        .iter()
        .map(|&v| {
            let r = dequantize(q, quantize_value(q, v)).expect("quantized level is in range");
            (v - r) * (v - r)
        })
        .sum();
    Ok(total / series.len() as f64)
}
