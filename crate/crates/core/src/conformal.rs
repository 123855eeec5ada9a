//! Interval constructors: Gaussian-process bands, raw quantile regression,
//! split conformal prediction (CP) and conformalized quantile regression (CQR).
//!
//! Calibration produces a [`CalibrationResult`] holding the score vector and
//! the correction `q_hat`, the `k`-th smallest score with
//! `k = ceil((M + 1)(1 - alpha))`. When `k > M` the correction is infinite;
//! it is reported as such and interval construction refuses to use it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::regressors::{RegressorError, RegressorModel};

#[derive(Error, Debug)]
pub enum ConformalError {
    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error(
        "conformal correction is infinite: quantile index {quantile_index} exceeds the {m} calibration scores; \
         at least {needed} calibration rows are needed for this alpha"
    )]
    InfiniteCorrection { quantile_index: usize, m: usize, needed: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("variance at row {0} is negative or not finite")]
    InvalidVariance(usize),
    #[error("calibration was built for {found} scores, expected {expected}")]
    WrongScoreKind { expected: ScoreKind, found: ScoreKind },
    #[error("malformed calibration document: {0}")]
    Serialization(#[from] serde_json::Error),
    #[error("unsupported calibration format version {0}")]
    FormatVersion(u32),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
}

/// Closed interval `[lower, upper]` in millivolts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
}

impl PredictionInterval {
    /// Builds an interval, swapping the bounds if they arrive crossed.
    pub fn new(a: f64, b: f64, alpha: f64) -> Self {
        PredictionInterval {
            lower: a.min(b),
            upper: a.max(b),
            alpha,
        }
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// `|y - f(x)|`
    AbsoluteResidual,
    /// `max(f_lo(x) - y, y - f_hi(x))`
    QuantileExcess,
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreKind::AbsoluteResidual => "absolute-residual",
            ScoreKind::QuantileExcess => "quantile-excess",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub score_kind: ScoreKind,
    /// `+inf` when `quantile_index > scores.len()`.
    pub q_hat: f64,
    pub scores: Vec<f64>,
    /// One-based rank of the score used as the correction.
    pub quantile_index: usize,
    pub alpha: f64,
}

/// One-based rank `ceil((m + 1)(1 - alpha))`, at least 1.
///
/// The product is nudged down by a relative `1e-12` before rounding up so that
/// `(m + 1)(1 - alpha)` landing a hair above an integer (e.g. `100 * 0.9`)
/// does not bump the rank.
pub fn quantile_index(m: usize, alpha: f64) -> usize {
    let x = (m as f64 + 1.0) * (1.0 - alpha);
    let k = (x - 1e-12 * (m as f64 + 1.0)).ceil();
    (k.max(1.0)) as usize
}

fn check_alpha(alpha: f64) -> Result<(), ConformalError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::AlphaOutOfRange(alpha))
    }
}

impl CalibrationResult {
    /// Calibrates from precomputed scores.
    pub fn from_scores(scores: Vec<f64>, alpha: f64, score_kind: ScoreKind) -> Result<Self, ConformalError> {
        check_alpha(alpha)?;
        if scores.is_empty() {
            return Err(ConformalError::EmptyCalibrationSet);
        }
        let m = scores.len();
        let k = quantile_index(m, alpha);
        let q_hat = if k > m {
            f64::INFINITY
        } else {
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            sorted[k - 1]
        };
        Ok(CalibrationResult {
            score_kind,
            q_hat,
            scores,
            quantile_index: k,
            alpha,
        })
    }

    pub fn m(&self) -> usize {
        self.scores.len()
    }

    pub fn is_infinite(&self) -> bool {
        self.quantile_index > self.scores.len()
    }

    /// Smallest calibration size for which `alpha` yields a finite correction.
    pub fn min_calibration_size(alpha: f64) -> usize {
        (1..).find(|&m| quantile_index(m, alpha) <= m).unwrap_or(usize::MAX)
    }

    /// Returns the finite correction or [`ConformalError::InfiniteCorrection`].
    pub fn finite_q_hat(&self) -> Result<f64, ConformalError> {
        if self.is_infinite() {
            return Err(ConformalError::InfiniteCorrection {
                quantile_index: self.quantile_index,
                m: self.m(),
                needed: Self::min_calibration_size(self.alpha),
            });
        }
        Ok(self.q_hat)
    }

    /// Nearest-rank percentiles of the scores, for audit output.
    pub fn score_percentiles(&self) -> ScorePercentiles {
        let mut s = self.scores.clone();
        s.sort_by(f64::total_cmp);
        let at = |p: f64| s[((p * (s.len() - 1) as f64).round()) as usize];
        ScorePercentiles {
            p0: at(0.0),
            p5: at(0.05),
            p25: at(0.25),
            p50: at(0.5),
            p75: at(0.75),
            p95: at(0.95),
            p100: at(1.0),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = CalibrationDocument {
            format_version: crate::FORMAT_VERSION,
            score_kind: self.score_kind,
            alpha: self.alpha,
            m: self.m(),
            quantile_index: self.quantile_index,
            q_hat: (!self.is_infinite()).then_some(self.q_hat),
            infinite: self.is_infinite(),
            score_percentiles: self.score_percentiles(),
            scores: self.scores.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("calibration serializes")
    }

    /// Reloads a calibration document, recomputing the correction from the
    /// stored scores.
    pub fn from_json(text: &str) -> Result<Self, ConformalError> {
        let doc: CalibrationDocument = serde_json::from_str(text)?;
        if doc.format_version != crate::FORMAT_VERSION {
            return Err(ConformalError::FormatVersion(doc.format_version));
        }
        Self::from_scores(doc.scores, doc.alpha, doc.score_kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePercentiles {
    pub p0: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub p100: f64,
}

#[derive(Serialize, Deserialize)]
struct CalibrationDocument {
    format_version: u32,
    score_kind: ScoreKind,
    alpha: f64,
    m: usize,
    quantile_index: usize,
    /// `null` when the correction is infinite.
    q_hat: Option<f64>,
    infinite: bool,
    score_percentiles: ScorePercentiles,
    scores: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Standard normal quantile

const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;

/// `erfc(z)` for `z >= 0`.
fn erfc_nonneg(z: f64) -> f64 {
    if z < 2.5 {
        // erf(z) = 2/sqrt(pi) exp(-z^2) sum 2^n z^(2n+1) / (1*3*...*(2n+1))
        let z2 = z * z;
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        while term > 1e-17 * sum {
            n += 1.0;
            term *= 2.0 * z2 / (2.0 * n + 1.0);
            sum += term;
        }
        1.0 - 2.0 * FRAC_1_SQRT_PI * (-z2).exp() * sum
    } else {
        // erfc(z) = exp(-z^2)/sqrt(pi) * 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
        let mut f = z;
        for n in (1..=80).rev() {
            f = z + (n as f64 / 2.0) / f;
        }
        FRAC_1_SQRT_PI * (-z * z).exp() / f
    }
}

/// Upper tail `P(Z > x)` for `x >= 0`.
fn upper_tail(x: f64) -> f64 {
    0.5 * erfc_nonneg(x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Phi(x)`, the standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 - upper_tail(x)
    } else {
        upper_tail(-x)
    }
}

/// `Phi^{-1}(p)` by safeguarded Newton iteration on the log upper tail.
///
/// Returns exactly 0 for `p = 0.5` and `-inf`/`+inf` at 0 and 1.
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let (t, sign) = if p > 0.5 { (1.0 - p, 1.0) } else { (p, -1.0) };
    // Solve log Q(x) = log t on x > 0; log Q is decreasing.
    let target = t.ln();
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    let mut x = (-2.0 * target).sqrt().min(39.0);
    for _ in 0..200 {
        let q = upper_tail(x);
        let g = q.ln() - target;
        if g > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = -std_normal_pdf(x) / q;
        let mut next = x - g / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1.0) || hi - lo <= 1e-15 * hi {
            x = next;
            break;
        }
        x = next;
    }
    sign * x
}

/// `mean + Phi^{-1}(alpha/2) sd` to `mean + Phi^{-1}(1 - alpha/2) sd`.
///
/// `alpha = 1` is allowed and collapses every interval to its mean.
pub fn gp_interval(mean: &[f64], variance: &[f64], alpha: f64) -> Result<Vec<PredictionInterval>, ConformalError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(ConformalError::AlphaOutOfRange(alpha));
    }
    if mean.len() != variance.len() {
        return Err(ConformalError::LengthMismatch(mean.len(), variance.len()));
    }
    let k_lo = normal_quantile(alpha / 2.0);
    let k_hi = normal_quantile(1.0 - alpha / 2.0);
    mean.iter()
        .zip(variance)
        .enumerate()
        .map(|(i, (&mu, &var))| {
            if !(var >= 0.0) || !var.is_finite() {
                return Err(ConformalError::InvalidVariance(i));
            }
            let sd = var.sqrt();
            Ok(PredictionInterval::new(mu + k_lo * sd, mu + k_hi * sd, alpha))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Quantile regression, CP and CQR

/// Raw interval `[f_lo(x), f_hi(x)]`, bounds swapped where the models cross.
/// The intervals carry `alpha = q_lo + (1 - q_hi)` of the two objectives when
/// they are pinball fits, else NaN.
pub fn qr_interval(model_lo: &RegressorModel, model_hi: &RegressorModel, x: &DMatrix<f64>) -> Result<Vec<PredictionInterval>, ConformalError> {
    let lo = model_lo.predict(x)?;
    let hi = model_hi.predict(x)?;
    let alpha = match (model_lo.objective, model_hi.objective) {
        (crate::regressors::Objective::Pinball { q: a }, crate::regressors::Objective::Pinball { q: b }) => a + (1.0 - b),
        _ => f64::NAN,
    };
    qr_interval_from_predictions(&lo, &hi, alpha)
}

pub fn qr_interval_from_predictions(lo: &[f64], hi: &[f64], alpha: f64) -> Result<Vec<PredictionInterval>, ConformalError> {
    if lo.len() != hi.len() {
        return Err(ConformalError::LengthMismatch(lo.len(), hi.len()));
    }
    Ok(lo.iter().zip(hi).map(|(&a, &b)| PredictionInterval::new(a, b, alpha)).collect())
}

pub fn cp_scores(pred: &[f64], y: &[f64]) -> Result<Vec<f64>, ConformalError> {
    if pred.len() != y.len() {
        return Err(ConformalError::LengthMismatch(pred.len(), y.len()));
    }
    Ok(pred.iter().zip(y).map(|(p, v)| (v - p).abs()).collect())
}

/// CQR scores. Raw bounds are uncrossed first, matching [`qr_interval`].
pub fn cqr_scores(lo: &[f64], hi: &[f64], y: &[f64]) -> Result<Vec<f64>, ConformalError> {
    if lo.len() != hi.len() || lo.len() != y.len() {
        return Err(ConformalError::LengthMismatch(lo.len(), if lo.len() != hi.len() { hi.len() } else { y.len() }));
    }
    Ok(lo
        .iter()
        .zip(hi)
        .zip(y)
        .map(|((&a, &b), &v)| (a.min(b) - v).max(v - a.max(b)))
        .collect())
}

pub fn cp_calibrate(model: &RegressorModel, x_cal: &DMatrix<f64>, y_cal: &[f64], alpha: f64) -> Result<CalibrationResult, ConformalError> {
    check_alpha(alpha)?;
    if y_cal.is_empty() {
        return Err(ConformalError::EmptyCalibrationSet);
    }
    let pred = model.predict(x_cal)?;
    CalibrationResult::from_scores(cp_scores(&pred, y_cal)?, alpha, ScoreKind::AbsoluteResidual)
}

pub fn cqr_calibrate(
    model_lo: &RegressorModel,
    model_hi: &RegressorModel,
    x_cal: &DMatrix<f64>,
    y_cal: &[f64],
    alpha: f64,
) -> Result<CalibrationResult, ConformalError> {
    check_alpha(alpha)?;
    if y_cal.is_empty() {
        return Err(ConformalError::EmptyCalibrationSet);
    }
    let lo = model_lo.predict(x_cal)?;
    let hi = model_hi.predict(x_cal)?;
    CalibrationResult::from_scores(cqr_scores(&lo, &hi, y_cal)?, alpha, ScoreKind::QuantileExcess)
}

fn expect_kind(cal: &CalibrationResult, expected: ScoreKind) -> Result<f64, ConformalError> {
    if cal.score_kind != expected {
        return Err(ConformalError::WrongScoreKind {
            expected,
            found: cal.score_kind,
        });
    }
    cal.finite_q_hat()
}

/// `[f(x) - q_hat, f(x) + q_hat]`.
pub fn cp_interval(model: &RegressorModel, x: &DMatrix<f64>, cal: &CalibrationResult) -> Result<Vec<PredictionInterval>, ConformalError> {
    expect_kind(cal, ScoreKind::AbsoluteResidual)?;
    cp_interval_from_predictions(&model.predict(x)?, cal)
}

pub fn cp_interval_from_predictions(pred: &[f64], cal: &CalibrationResult) -> Result<Vec<PredictionInterval>, ConformalError> {
    let q = expect_kind(cal, ScoreKind::AbsoluteResidual)?;
    Ok(pred
        .iter()
        .map(|&p| PredictionInterval {
            lower: p - q,
            upper: p + q,
            alpha: cal.alpha,
        })
        .collect())
}

/// `[f_lo(x) - q_hat, f_hi(x) + q_hat]`. A negative correction larger than
/// half the raw width collapses the interval to the raw midpoint.
pub fn cqr_interval(
    model_lo: &RegressorModel,
    model_hi: &RegressorModel,
    x: &DMatrix<f64>,
    cal: &CalibrationResult,
) -> Result<Vec<PredictionInterval>, ConformalError> {
    expect_kind(cal, ScoreKind::QuantileExcess)?;
    cqr_interval_from_predictions(&model_lo.predict(x)?, &model_hi.predict(x)?, cal)
}

pub fn cqr_interval_from_predictions(lo: &[f64], hi: &[f64], cal: &CalibrationResult) -> Result<Vec<PredictionInterval>, ConformalError> {
    let q = expect_kind(cal, ScoreKind::QuantileExcess)?;
    let raw = qr_interval_from_predictions(lo, hi, cal.alpha)?;
    Ok(raw
        .into_iter()
        .map(|r| {
            let (a, b) = (r.lower - q, r.upper + q);
            if a <= b {
                PredictionInterval {
                    lower: a,
                    upper: b,
                    alpha: cal.alpha,
                }
            } else {
                let mid = 0.5 * (r.lower + r.upper);
                PredictionInterval {
                    lower: mid,
                    upper: mid,
                    alpha: cal.alpha,
                }
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressors::{fit_ols, fit_quantile_linear, LinearParams, ModelParams, Objective, TrainMeta};
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn constant(v: f64, objective: Objective) -> RegressorModel {
        RegressorModel {
            objective,
            params: ModelParams::Linear(LinearParams {
                intercept: v,
                coef: vec![0.0],
            }),
            train_meta: TrainMeta {
                n_train: 1,
                d_features: 1,
                seed: 0,
                final_train_loss: 0.0,
                iterations: 0,
                converged: true,
            },
        }
    }

    fn statrs_quantile(p: f64) -> f64 {
        if p > 0.5 {
            return -statrs_quantile(1.0 - p);
        }
        let cdf = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
        let (mut a, mut b) = (-10.0, 10.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if cdf(m) < p {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn quantile_index_cases() {
        assert_eq!(quantile_index(9, 0.1), 9);
        assert_eq!(quantile_index(99, 0.1), 90);
        assert_eq!(quantile_index(3, 0.1), 4);
        assert_eq!(quantile_index(19, 0.05), 19);
        assert_eq!(quantile_index(28, 0.1), 27);
        assert_eq!(CalibrationResult::min_calibration_size(0.1), 9);
    }

    #[test]
    fn normal_quantile_matches_independent_oracle() {
        assert_eq!(normal_quantile(0.5), 0.0);
        for &p in &[1e-12, 1e-6, 0.001, 0.025, 0.05, 0.1, 0.3, 0.49, 0.51, 0.7, 0.9, 0.95, 0.975, 0.999, 1.0 - 1e-9] {
            let x = normal_quantile(p);
            assert!((x - statrs_quantile(p)).abs() < 1e-9, "p={p}: {x}");
            assert!((normal_cdf(x) - p).abs() <= 1e-10 * p.min(1.0 - p) + 1e-15, "cdf round trip at {p}");
        }
        assert!((normal_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-12);
    }

    #[test]
    fn gp_interval_multipliers() {
        let iv = gp_interval(&[0.0], &[1.0], 0.1).unwrap();
        assert!((iv[0].lower + 1.64485).abs() < 1e-4 && (iv[0].upper - 1.64485).abs() < 1e-4);
        let iv = gp_interval(&[3.0, 4.0], &[2.0, 0.0], 1.0).unwrap();
        assert_eq!((iv[0].lower, iv[0].upper), (3.0, 3.0));
        let iv = gp_interval(&[7.0], &[0.0], 0.05).unwrap();
        assert_eq!((iv[0].lower, iv[0].upper), (7.0, 7.0));
        assert!(matches!(gp_interval(&[0.0], &[1.0], 0.0), Err(ConformalError::AlphaOutOfRange(_))));
        assert!(matches!(gp_interval(&[0.0], &[-1.0], 0.1), Err(ConformalError::InvalidVariance(0))));
    }

    #[test]
    fn qr_interval_cases() {
        let x = DMatrix::zeros(4, 1);
        let lo = constant(-1.0, Objective::Pinball { q: 0.05 });
        let hi = constant(1.0, Objective::Pinball { q: 0.95 });
        let iv = qr_interval(&lo, &hi, &x).unwrap();
        assert_eq!(iv.len(), 4);
        assert!(iv.iter().all(|i| i.lower == -1.0 && i.upper == 1.0));
        assert!((iv[0].alpha - 0.1).abs() < 1e-12);
        let same = qr_interval(&lo, &lo, &x).unwrap();
        assert!(same.iter().all(|i| i.length() == 0.0));
        let crossed = qr_interval(&constant(5.0, Objective::Mse), &constant(3.0, Objective::Mse), &x).unwrap();
        assert_eq!((crossed[0].lower, crossed[0].upper), (3.0, 5.0));
    }

    #[test]
    fn cp_calibration_cases() {
        let x = DMatrix::from_fn(9, 1, |i, _| i as f64);
        let m = constant(0.0, Objective::Mse);
        let y: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let cal = cp_calibrate(&m, &x, &y, 0.1).unwrap();
        assert_eq!(cal.quantile_index, 9);
        assert_eq!(cal.q_hat, 9.0);
        let perfect = cp_calibrate(&m, &x, &[0.0; 9], 0.1).unwrap();
        assert_eq!(perfect.q_hat, 0.0);
        let tiny = cp_calibrate(&m, &DMatrix::zeros(3, 1), &[1.0, 2.0, 3.0], 0.1).unwrap();
        assert!(tiny.is_infinite() && tiny.q_hat.is_infinite());
        assert!(matches!(
            cp_interval(&m, &x, &tiny),
            Err(ConformalError::InfiniteCorrection {
                quantile_index: 4,
                m: 3,
                needed: 9
            })
        ));
        assert!(matches!(cp_calibrate(&m, &DMatrix::zeros(0, 1), &[], 0.1), Err(ConformalError::EmptyCalibrationSet)));
    }

    #[test]
    fn cp_interval_cases() {
        let x = DMatrix::zeros(3, 1);
        let m = constant(100.0, Objective::Mse);
        let cal = CalibrationResult::from_scores(vec![10.0; 20], 0.1, ScoreKind::AbsoluteResidual).unwrap();
        let iv = cp_interval(&m, &x, &cal).unwrap();
        assert!(iv.iter().all(|i| i.lower == 90.0 && i.upper == 110.0));
        let zero = CalibrationResult::from_scores(vec![0.0; 20], 0.1, ScoreKind::AbsoluteResidual).unwrap();
        assert!(cp_interval(&m, &x, &zero).unwrap().iter().all(|i| i.lower == 100.0 && i.upper == 100.0));
        assert!(matches!(
            cqr_interval(&m, &m, &x, &cal),
            Err(ConformalError::WrongScoreKind { .. })
        ));
    }

    #[test]
    fn cqr_scores_and_intervals() {
        assert_eq!(cqr_scores(&[4.0, 4.0], &[6.0, 6.0], &[5.0, 7.0]).unwrap(), vec![-1.0, 1.0]);
        let x = DMatrix::zeros(1, 1);
        let lo = constant(10.0, Objective::Pinball { q: 0.05 });
        let hi = constant(20.0, Objective::Pinball { q: 0.95 });
        let with = |q: f64| CalibrationResult {
            score_kind: ScoreKind::QuantileExcess,
            q_hat: q,
            scores: vec![q; 30],
            quantile_index: 28,
            alpha: 0.1,
        };
        let iv = cqr_interval(&lo, &hi, &x, &with(3.0)).unwrap();
        assert_eq!((iv[0].lower, iv[0].upper), (7.0, 23.0));
        let raw = qr_interval(&lo, &hi, &x).unwrap();
        let iv0 = cqr_interval(&lo, &hi, &x, &with(0.0)).unwrap();
        assert_eq!((iv0[0].lower, iv0[0].upper), (raw[0].lower, raw[0].upper));
        let narrow_hi = constant(12.0, Objective::Pinball { q: 0.95 });
        let iv = cqr_interval(&lo, &narrow_hi, &x, &with(-2.0)).unwrap();
        assert_eq!((iv[0].lower, iv[0].upper), (11.0, 11.0));
    }

    #[test]
    fn negative_correction_shrinks_but_keeps_calibration_coverage() {
        let n = 40;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..n).map(|i| (i % 5) as f64 - 2.0).collect();
        let lo = constant(-50.0, Objective::Pinball { q: 0.05 });
        let hi = constant(50.0, Objective::Pinball { q: 0.95 });
        let cal = cqr_calibrate(&lo, &hi, &x, &y, 0.1).unwrap();
        assert!(cal.q_hat < 0.0);
        let iv = cqr_interval(&lo, &hi, &x, &cal).unwrap();
        assert!(iv[0].length() < 100.0);
        let covered = iv.iter().zip(&y).filter(|(i, v)| i.contains(**v)).count();
        assert!(covered >= cal.quantile_index, "{covered} < {}", cal.quantile_index);
    }

    #[test]
    fn calibration_json_round_trip() {
        let cal = CalibrationResult::from_scores(vec![0.5, -1.0, 2.0, 3.5, 0.0, 1.0, 1.5, 2.5, 4.0, 0.25], 0.1, ScoreKind::QuantileExcess).unwrap();
        let text = cal.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["quantile_index"], 10);
        assert_eq!(v["q_hat"], 4.0);
        assert_eq!(v["score_percentiles"]["p0"], -1.0);
        assert_eq!(CalibrationResult::from_json(&text).unwrap(), cal);
        let inf = CalibrationResult::from_scores(vec![1.0, 2.0], 0.1, ScoreKind::AbsoluteResidual).unwrap();
        let v: serde_json::Value = serde_json::from_str(&inf.to_json()).unwrap();
        assert!(v["q_hat"].is_null() && v["infinite"] == true);
        assert!(CalibrationResult::from_json(&inf.to_json()).unwrap().is_infinite());
    }

    #[test]
    fn marginal_coverage_over_replications() {
        let mut rng = rng_from_seed(11);
        let draw = |rng: &mut crate::rng::Rng, n: usize| {
            let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.0..4.0));
            let y: Vec<f64> = (0..n)
                .map(|i| 1.0 + 2.0 * x[(i, 0)] + (0.3 + 0.4 * x[(i, 0)]) * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect();
            (x, y)
        };
        let (xt, yt) = draw(&mut rng, 300);
        let point = fit_ols(&xt, &yt).unwrap();
        let lo = fit_quantile_linear(&xt, &yt, 0.05).unwrap();
        let hi = fit_quantile_linear(&xt, &yt, 0.95).unwrap();
        let (reps, m, n_test) = (500, 100, 200);
        let (mut cp_cov, mut cqr_cov) = (0.0, 0.0);
        for _ in 0..reps {
            let (xc, yc) = draw(&mut rng, m);
            let (xs, ys) = draw(&mut rng, n_test);
            let cp = cp_calibrate(&point, &xc, &yc, 0.1).unwrap();
            let cqr = cqr_calibrate(&lo, &hi, &xc, &yc, 0.1).unwrap();
            let a = cp_interval(&point, &xs, &cp).unwrap();
            let b = cqr_interval(&lo, &hi, &xs, &cqr).unwrap();
            cp_cov += a.iter().zip(&ys).filter(|(i, v)| i.contains(**v)).count() as f64 / n_test as f64;
            cqr_cov += b.iter().zip(&ys).filter(|(i, v)| i.contains(**v)).count() as f64 / n_test as f64;
        }
        let band = 0.9 - 0.01..=0.9 + 1.0 / 101.0 + 0.01;
        assert!(band.contains(&(cp_cov / reps as f64)), "cp {}", cp_cov / reps as f64);
        assert!(band.contains(&(cqr_cov / reps as f64)), "cqr {}", cqr_cov / reps as f64);
    }

    proptest! {
        #[test]
        fn smaller_alpha_never_shrinks_q_hat(scores in prop::collection::vec(-50.0f64..50.0, 1..80), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (a1, a2) = if a < b { (a, b) } else { (b, a) };
            let c1 = CalibrationResult::from_scores(scores.clone(), a1, ScoreKind::QuantileExcess).unwrap();
            let c2 = CalibrationResult::from_scores(scores, a2, ScoreKind::QuantileExcess).unwrap();
            prop_assert!(c1.q_hat >= c2.q_hat);
        }

        #[test]
        fn permuting_scores_keeps_q_hat(scores in prop::collection::vec(-50.0f64..50.0, 1..80), seed in any::<u64>(), alpha in 0.01f64..0.99) {
            let mut shuffled = scores.clone();
            shuffled.shuffle(&mut rng_from_seed(seed));
            let a = CalibrationResult::from_scores(scores, alpha, ScoreKind::AbsoluteResidual).unwrap();
            let b = CalibrationResult::from_scores(shuffled, alpha, ScoreKind::AbsoluteResidual).unwrap();
            prop_assert_eq!(a.q_hat, b.q_hat);
        }

        #[test]
        fn intervals_are_ordered(lo in -100.0f64..100.0, hi in -100.0f64..100.0, q in -30.0f64..30.0) {
            let cal = CalibrationResult { score_kind: ScoreKind::QuantileExcess, q_hat: q, scores: vec![q; 20], quantile_index: 19, alpha: 0.1 };
            let iv = cqr_interval_from_predictions(&[lo], &[hi], &cal).unwrap();
            prop_assert!(iv[0].lower <= iv[0].upper);
        }
    }
}
