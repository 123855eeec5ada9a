//! Interval and point-prediction scores.

use thiserror::Error;

use crate::conformal::PredictionInterval;

#[derive(Error, Debug, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} intervals vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no samples to score")]
    EmptyInput,
    #[error("labels have zero variance, R^2 is undefined (RMSE = {rmse})")]
    ZeroVariance { rmse: f64 },
    #[error("interval lengths must be positive, got {0} and {1}")]
    NonPositiveLength(f64, f64),
}

/// Percentage of labels inside their closed interval.
pub fn coverage(intervals: &[PredictionInterval], y: &[f64]) -> Result<f64, MetricsError> {
    if intervals.len() != y.len() {
        return Err(MetricsError::LengthMismatch(intervals.len(), y.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hit = intervals.iter().zip(y).filter(|(iv, v)| iv.contains(**v)).count();
    Ok(100.0 * hit as f64 / y.len() as f64)
}

/// Mean of `upper - lower`.
pub fn avg_length(intervals: &[PredictionInterval]) -> Result<f64, MetricsError> {
    if intervals.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(intervals.iter().map(PredictionInterval::length).sum::<f64>() / intervals.len() as f64)
}

/// Plain mean of already-averaged lengths, e.g. per-temperature averages.
pub fn mean_of(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Coefficient of determination and root-mean-square error.
pub fn r2_rmse(pred: &[f64], y: &[f64]) -> Result<(f64, f64), MetricsError> {
    if pred.len() != y.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), y.len()));
    }
    if y.len() < 2 {
        return Err(MetricsError::EmptyInput);
    }
    let n = y.len() as f64;
    let ss_res: f64 = pred.iter().zip(y).map(|(p, v)| (v - p).powi(2)).sum();
    let rmse = (ss_res / n).sqrt();
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ZeroVariance { rmse });
    }
    Ok((1.0 - ss_res / ss_tot, rmse))
}

/// Relative interval shrink, in percent, from adding on-chip monitor features.
pub fn onchip_gain(length_parametric_only: f64, length_with_onchip: f64) -> Result<f64, MetricsError> {
    if !(length_parametric_only > 0.0 && length_with_onchip > 0.0) {
        return Err(MetricsError::NonPositiveLength(length_parametric_only, length_with_onchip));
    }
    Ok(100.0 * (length_parametric_only - length_with_onchip) / length_parametric_only)
}
