//! Browser demo: interval bands on a one-dimensional toy problem, the
//! finite-sample behaviour of the conformal quantile, and the on-chip gain
//! calculator.
//!
//! Each export takes and returns JSON text so the page needs no bindings
//! beyond strings. Failures come back as `{"error": "..."}`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use vmin_core::conformal::{
    cp_interval_from_predictions, cp_scores, cqr_interval_from_predictions, cqr_scores, gp_interval, quantile_index, CalibrationResult,
    ConformalError, PredictionInterval, ScoreKind,
};
use vmin_core::metrics::{self, MetricsError};
use vmin_core::regressors::{fit_gp, fit_ols, fit_quantile_linear, GpConfig, RegressorError};
use vmin_core::rng::{derive_seed, rng_from_seed};
use wasm_bindgen::prelude::*;

#[derive(Error, Debug)]
pub enum DemoError {
    #[error("bad request: {0}")]
    Request(String),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct BandRequest {
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub alpha: f64,
    /// 0 gives constant noise; 1 gives noise growing tenfold across the range.
    pub heteroscedasticity: f64,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for BandRequest {
    fn default() -> Self {
        BandRequest {
            n_train: 120,
            n_cal: 100,
            n_test: 1000,
            alpha: 0.1,
            heteroscedasticity: 0.7,
            grid_points: 60,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Band {
    pub method: &'static str,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub test_coverage_pct: f64,
    pub test_avg_length: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandResponse {
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
    pub grid: Vec<f64>,
    /// Noise-free mean on the grid.
    pub truth: Vec<f64>,
    pub bands: Vec<Band>,
    pub q_hat_cp: f64,
    pub q_hat_cqr: f64,
}

fn noise_sd(x: f64, h: f64) -> f64 {
    2.0 * (1.0 + 9.0 * h * x)
}

fn truth(x: f64) -> f64 {
    500.0 + 40.0 * x
}

fn draw(n: usize, h: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = x
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            truth(v) + noise_sd(v, h) * z
        })
        .collect();
    (x, y)
}

fn column(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(x.len(), 1, x)
}

fn band(method: &'static str, grid: Vec<PredictionInterval>, test: &[PredictionInterval], y_test: &[f64]) -> Result<Band, DemoError> {
    Ok(Band {
        method,
        lower: grid.iter().map(|iv| iv.lower).collect(),
        upper: grid.iter().map(|iv| iv.upper).collect(),
        test_coverage_pct: metrics::coverage(test, y_test)?,
        test_avg_length: metrics::avg_length(test)?,
    })
}

/// Fits GP, split CP on least squares and CQR on linear quantile regression
/// to one draw of the toy problem.
pub fn bands(req: &BandRequest) -> Result<BandResponse, DemoError> {
    if !(req.alpha > 0.0 && req.alpha < 1.0) {
        return Err(DemoError::Request(format!("alpha must lie in (0, 1), got {}", req.alpha)));
    }
    if !(0.0..=1.0).contains(&req.heteroscedasticity) {
        return Err(DemoError::Request("heteroscedasticity must lie in [0, 1]".into()));
    }
    if req.n_train < 5 || req.n_cal < 1 || req.n_test < 1 || req.grid_points < 2 {
        return Err(DemoError::Request("need at least 5 training, 1 calibration, 1 test and 2 grid points".into()));
    }
    if req.n_train > 400 || req.n_cal > 5000 || req.n_test > 20000 || req.grid_points > 1000 {
        return Err(DemoError::Request("sizes are capped at 400 training, 5000 calibration, 20000 test and 1000 grid points".into()));
    }
    let h = req.heteroscedasticity;
    let mut rng = rng_from_seed(req.seed);
    let (x_tr, y_tr) = draw(req.n_train, h, &mut rng);
    let (x_cal, y_cal) = draw(req.n_cal, h, &mut rng);
    let (x_te, y_te) = draw(req.n_test, h, &mut rng);
    let grid: Vec<f64> = (0..req.grid_points).map(|i| i as f64 / (req.grid_points - 1) as f64).collect();
    let (m_tr, m_cal, m_te, m_grid) = (column(&x_tr), column(&x_cal), column(&x_te), column(&grid));

    let gp = fit_gp(
        &m_tr,
        &y_tr,
        &GpConfig {
            restarts: 2,
            steps: 60,
            seed: derive_seed(req.seed, "gp"),
            ..GpConfig::default()
        },
    )?;
    let gp_band = |m: &DMatrix<f64>| -> Result<Vec<PredictionInterval>, DemoError> {
        let (mean, latent) = gp.predict(m)?;
        let var: Vec<f64> = latent.iter().map(|v| v + gp.noise_variance).collect();
        Ok(gp_interval(&mean, &var, req.alpha)?)
    };

    let ols = fit_ols(&m_tr, &y_tr)?;
    let cp_cal = CalibrationResult::from_scores(cp_scores(&ols.predict(&m_cal)?, &y_cal)?, req.alpha, ScoreKind::AbsoluteResidual)?;
    let cp_band = |m: &DMatrix<f64>| -> Result<Vec<PredictionInterval>, DemoError> { Ok(cp_interval_from_predictions(&ols.predict(m)?, &cp_cal)?) };

    let lo = fit_quantile_linear(&m_tr, &y_tr, req.alpha / 2.0)?;
    let hi = fit_quantile_linear(&m_tr, &y_tr, 1.0 - req.alpha / 2.0)?;
    let cqr_cal = CalibrationResult::from_scores(
        cqr_scores(&lo.predict(&m_cal)?, &hi.predict(&m_cal)?, &y_cal)?,
        req.alpha,
        ScoreKind::QuantileExcess,
    )?;
    let cqr_band =
        |m: &DMatrix<f64>| -> Result<Vec<PredictionInterval>, DemoError> { Ok(cqr_interval_from_predictions(&lo.predict(m)?, &hi.predict(m)?, &cqr_cal)?) };

    let bands = vec![
        band("gp", gp_band(&m_grid)?, &gp_band(&m_te)?, &y_te)?,
        band("cp", cp_band(&m_grid)?, &cp_band(&m_te)?, &y_te)?,
        band("cqr", cqr_band(&m_grid)?, &cqr_band(&m_te)?, &y_te)?,
    ];
    Ok(BandResponse {
        truth: grid.iter().map(|&v| truth(v)).collect(),
        train_x: x_tr,
        train_y: y_tr,
        grid,
        bands,
        q_hat_cp: cp_cal.q_hat,
        q_hat_cqr: cqr_cal.q_hat,
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SweepRequest {
    pub alpha: f64,
    pub max_m: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SweepRequest {
    fn default() -> Self {
        SweepRequest {
            alpha: 0.1,
            max_m: 60,
            reps: 2000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub m: usize,
    pub quantile_index: usize,
    /// False when the index exceeds `m` and the interval is unbounded.
    pub finite: bool,
    /// `k / (m + 1)`: the guaranteed coverage for exchangeable continuous scores.
    pub exact_coverage: f64,
    /// Fraction of simulated test points covered.
    pub simulated_coverage: f64,
}

/// Coverage of the conformal quantile as the calibration set grows.
pub fn sweep(req: &SweepRequest) -> Result<Vec<SweepPoint>, DemoError> {
    if !(req.alpha > 0.0 && req.alpha < 1.0) {
        return Err(DemoError::Request(format!("alpha must lie in (0, 1), got {}", req.alpha)));
    }
    if req.max_m == 0 || req.max_m > 500 || req.reps == 0 || req.reps > 20000 {
        return Err(DemoError::Request("max_m must lie in 1..=500 and reps in 1..=20000".into()));
    }
    let mut rng = rng_from_seed(req.seed);
    let mut out = Vec::with_capacity(req.max_m);
    for m in 1..=req.max_m {
        let k = quantile_index(m, req.alpha);
        let finite = k <= m;
        let mut hits = 0usize;
        let mut scores = vec![0.0; m];
        for _ in 0..req.reps {
            for s in scores.iter_mut() {
                *s = rng.random::<f64>();
            }
            let test: f64 = rng.random();
            if !finite {
                hits += 1;
                continue;
            }
            let cal = CalibrationResult::from_scores(scores.clone(), req.alpha, ScoreKind::AbsoluteResidual)?;
            if test <= cal.q_hat {
                hits += 1;
            }
        }
        out.push(SweepPoint {
            m,
            quantile_index: k,
            finite,
            exact_coverage: if finite { k as f64 / (m + 1) as f64 } else { 1.0 },
            simulated_coverage: hits as f64 / req.reps as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct GainResponse {
    pub gain_pct: f64,
    pub saved_mv: f64,
}

pub fn gain(parametric_mv: f64, with_onchip_mv: f64) -> Result<GainResponse, DemoError> {
    Ok(GainResponse {
        gain_pct: metrics::onchip_gain(parametric_mv, with_onchip_mv)?,
        saved_mv: parametric_mv - with_onchip_mv,
    })
}

fn respond<T: Serialize>(r: Result<T, DemoError>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).expect("response serializes"),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, DemoError> {
    serde_json::from_str(text).map_err(|e| DemoError::Request(e.to_string()))
}

#[wasm_bindgen]
pub fn interval_bands(request: &str) -> String {
    respond(parse::<BandRequest>(request).and_then(|r| bands(&r)))
}

#[wasm_bindgen]
pub fn calibration_sweep(request: &str) -> String {
    respond(parse::<SweepRequest>(request).and_then(|r| sweep(&r)))
}

#[wasm_bindgen]
pub fn onchip_gain(parametric_mv: f64, with_onchip_mv: f64) -> String {
    respond(gain(parametric_mv, with_onchip_mv))
}
