//! Cross-validated comparison of interval methods.
//!
//! For every (read point, temperature) target and every fold, features are
//! assembled, standardized on the training rows and, for learners other than
//! boosted trees, reduced by CFS with the subset size chosen on the
//! calibration rows. Every method then fits on the training rows, calibrates
//! on the calibration rows and is scored on the test fold. Coverage and
//! length are averaged over folds with equal weight; R^2 and RMSE of point
//! predictions are computed on the pooled out-of-fold predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::dataset::{assemble_feature_set, make_folds, ChipDataset, DatasetError, FeatureSet, Fold, SplitSpec, Standardizer};
use crate::feature_select::cfs_select_with;
use crate::metrics::{avg_length, coverage, onchip_gain, r2_rmse, MetricsError};
use crate::pipeline::{calibrate, fit_method, select_k, intervals, model_seed, raw_predictions, BaseLearner, FittedModels, Method, ModelSettings};
use crate::regressors::{Objective, RegressorError};
use crate::{Error, ErrorClass};

#[derive(Error, Debug)]
pub enum BenchmarkError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{message}")]
    Preparation { message: String, class: ErrorClass },
    #[error("{failed} of {total} benchmark cells failed; first: {first}")]
    CellsFailed { failed: usize, total: usize, first: String },
}

impl BenchmarkError {
    pub fn class(&self) -> ErrorClass {
        match self {
            BenchmarkError::InvalidConfig(_) => ErrorClass::Usage,
            BenchmarkError::Dataset(_) => ErrorClass::Data,
            BenchmarkError::Preparation { class, .. } => *class,
            BenchmarkError::CellsFailed { .. } => ErrorClass::Numerical,
        }
    }
}

/// RMSE range reported for point models on production data; rows are
/// annotated with whether they fall inside it.
pub const RMSE_BAND_MV: (f64, f64) = (2.5, 7.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub split: SplitSpec,
    pub feature_set: FeatureSet,
    /// Label read points to evaluate; every read point in the data when unset.
    pub read_points: Option<Vec<u32>>,
    /// Label temperatures to evaluate; every temperature in the data when unset.
    pub temperatures: Option<Vec<i32>>,
    pub settings: ModelSettings,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            methods: vec![
                Method::Gp,
                Method::Qr(BaseLearner::Linear),
                Method::Cqr(BaseLearner::Linear),
                Method::Cqr(BaseLearner::Gbt),
            ],
            alpha: 0.1,
            split: SplitSpec::with_seed(7),
            feature_set: FeatureSet::Both,
            read_points: None,
            temperatures: None,
            settings: ModelSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub alpha: f64,
    pub n_folds: usize,
    pub calibration_fraction: f64,
    pub seed: u64,
    pub feature_set: FeatureSet,
    pub methods: Vec<Method>,
    pub read_points: Vec<u32>,
    pub temperatures: Vec<i32>,
    pub q_lo: f64,
    pub q_hi: f64,
    pub k_max: usize,
    pub rmse_band_mv: (f64, f64),
    pub settings: ModelSettings,
}

/// Fold membership, identical for every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub fold: usize,
    pub train: usize,
    pub calibration: usize,
    pub test_chips: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub read_point_hours: u32,
    pub temperature_celsius: i32,
    /// Fold-averaged; absent when any fold failed.
    pub avg_length_mv: Option<f64>,
    pub coverage_pct: Option<f64>,
    /// Pooled out-of-fold; present only for methods with a point prediction.
    pub r2: Option<f64>,
    pub rmse_mv: Option<f64>,
    pub rmse_in_band: Option<bool>,
    pub fold_length_mv: Vec<f64>,
    pub fold_coverage_pct: Vec<f64>,
    /// CFS subset size per fold, for methods that select features.
    pub fold_k: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: Method,
    pub read_point_hours: u32,
    pub temperature_celsius: i32,
    pub fold: usize,
    pub error: String,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub config: ReportConfig,
    pub folds: Vec<FoldAudit>,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<CellFailure>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn row(&self, method: Method, read_point_hours: u32, temperature_celsius: i32) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.read_point_hours == read_point_hours && r.temperature_celsius == temperature_celsius)
    }

    /// Error summarizing failed cells, if any.
    pub fn failure(&self) -> Option<BenchmarkError> {
        self.failures.first().map(|f| BenchmarkError::CellsFailed {
            failed: self.failures.len(),
            total: self.rows.len() * self.folds.len(),
            first: format!("{} at {} h / {} C, fold {}: {}", f.method, f.read_point_hours, f.temperature_celsius, f.fold, f.error),
        })
    }

    /// Aligned text table: method rows grouped by read point, a length and a
    /// coverage column per temperature.
    pub fn render_table(&self) -> String {
        let temps = &self.config.temperatures;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "alpha = {}, {} folds, seed {}, features: {}",
            self.config.alpha,
            self.config.n_folds,
            self.config.seed,
            self.config.feature_set.name()
        );
        let mut header = format!("{:<10} {:<12}", "Stress", "Method");
        for t in temps {
            let _ = write!(header, " | {:>17}", format!("{t} C"));
        }
        let mut sub = format!("{:<10} {:<12}", "", "");
        for _ in temps {
            let _ = write!(sub, " | {:>8} {:>8}", "Len(mV)", "Cov(%)");
        }
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{sub}");
        let _ = writeln!(out, "{}", "-".repeat(sub.len()));
        for &rp in &self.config.read_points {
            for (mi, &m) in self.config.methods.iter().enumerate() {
                let stress = if mi == 0 { format!("{rp} h") } else { String::new() };
                let mut line = format!("{:<10} {:<12}", stress, m.to_string());
                for &t in temps {
                    let cell = self.row(m, rp, t);
                    let len = cell.and_then(|r| r.avg_length_mv).map_or("fail".to_string(), |v| format!("{v:.2}"));
                    let cov = cell.and_then(|r| r.coverage_pct).map_or("fail".to_string(), |v| format!("{v:.2}"));
                    let _ = write!(line, " | {len:>8} {cov:>8}");
                }
                let _ = writeln!(out, "{line}");
            }
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "\n{} failed cell(s):", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(out, "  {} {} h {} C fold {}: {}", f.method, f.read_point_hours, f.temperature_celsius, f.fold, f.error);
            }
        }
        out
    }
}

/// Per-temperature and average interval-length gain from on-chip features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub method: Method,
    pub read_point_hours: u32,
    /// (temperature, parametric-only length, with-on-chip length, gain %)
    pub per_temperature: Vec<(i32, f64, f64, f64)>,
    pub average_parametric_mv: f64,
    pub average_with_onchip_mv: f64,
    pub average_gain_pct: f64,
}

/// Compares a parametric-only report with one that also uses on-chip
/// features. Cells missing from either report are skipped.
pub fn onchip_gains(parametric: &EvaluationReport, with_onchip: &EvaluationReport) -> Result<Vec<GainRow>, MetricsError> {
    let mut out = Vec::new();
    for &m in &parametric.config.methods {
        for &rp in &parametric.config.read_points {
            let mut per = Vec::new();
            for &t in &parametric.config.temperatures {
                let a = parametric.row(m, rp, t).and_then(|r| r.avg_length_mv);
                let b = with_onchip.row(m, rp, t).and_then(|r| r.avg_length_mv);
                if let (Some(a), Some(b)) = (a, b) {
                    per.push((t, a, b, onchip_gain(a, b)?));
                }
            }
            if per.is_empty() {
                continue;
            }
            let n = per.len() as f64;
            let pa = per.iter().map(|p| p.1).sum::<f64>() / n;
            let pb = per.iter().map(|p| p.2).sum::<f64>() / n;
            out.push(GainRow {
                method: m,
                read_point_hours: rp,
                per_temperature: per,
                average_parametric_mv: pa,
                average_with_onchip_mv: pb,
                average_gain_pct: onchip_gain(pa, pb)?,
            });
        }
    }
    Ok(out)
}

struct FoldOutcome {
    coverage_pct: f64,
    length_mv: f64,
    k: Option<usize>,
    /// (chip index, point prediction)
    points: Vec<(usize, f64)>,
}

type CellResult = Vec<(Method, Result<FoldOutcome, Error>)>;

fn rows_of(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| v[i]).collect()
}

/// Evaluates every method on one (read point, temperature, fold) cell.
fn run_cell(ds: &ChipDataset, config: &BenchmarkConfig, rp: u32, temp: i32, fold_index: usize, fold: &Fold) -> CellResult {
    let prep = (|| -> Result<_, Error> {
        let a = assemble_feature_set(ds, rp, temp, config.feature_set)?;
        let x_tr = a.x.select_rows(&fold.train);
        let std = Standardizer::fit(&x_tr);
        if std.n_outputs() == 0 {
            return Err(RegressorError::InvalidConfig("every feature column is constant on the training rows".into()).into());
        }
        let z_tr = std.transform(&x_tr);
        let z_cal = std.transform(&a.x.select_rows(&fold.calibration));
        let z_te = std.transform(&a.x.select_rows(&fold.test));
        let (y_tr, y_cal, y_te) = (rows_of(&a.y, &fold.train), rows_of(&a.y, &fold.calibration), rows_of(&a.y, &fold.test));
        let selected = if config.methods.iter().any(|m| m.uses_feature_selection()) {
            let k_max = config.settings.k_max.min(z_tr.ncols()).max(1);
            let subsets = cfs_select_with(&z_tr, &y_tr, k_max, config.settings.selection)?;
            let k = select_k(&config.settings, &z_tr, &y_tr, &z_cal, &y_cal, &subsets)?;
            Some(subsets[k - 1].indices.clone())
        } else {
            None
        };
        Ok((z_tr, z_cal, z_te, y_tr, y_cal, y_te, selected))
    })();
    let (z_tr, z_cal, z_te, y_tr, y_cal, y_te, selected) = match prep {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            let class = e.class();
            return config
                .methods
                .iter()
                .map(|&m| {
                    let e = BenchmarkError::Preparation {
                        message: msg.clone(),
                        class,
                    };
                    (m, Err(Error::Benchmark(e)))
                })
                .collect();
        }
    };
    let sel = |z: &DMatrix<f64>| selected.as_ref().map(|idx| z.select_columns(idx));
    let (s_tr, s_cal, s_te) = (sel(&z_tr), sel(&z_cal), sel(&z_te));
    let cell_key = format!("rp{rp}/t{temp}/fold{fold_index}");
    let seed = config.split.seed;
    // QR and CQR on the same base share one fitted pair.
    let mut shared: BTreeMap<(BaseLearner, bool), FittedModels> = BTreeMap::new();

    let mut out = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let result = (|| -> Result<FoldOutcome, Error> {
            let (tr, cal, te) = if method.uses_feature_selection() {
                (s_tr.as_ref().unwrap(), s_cal.as_ref().unwrap(), s_te.as_ref().unwrap())
            } else {
                (&z_tr, &z_cal, &z_te)
            };
            let share_key = method.base().map(|b| (b, matches!(method, Method::Qr(_) | Method::Cqr(_))));
            let models = match share_key.and_then(|k| shared.get(&k)) {
                Some(m) => m.clone(),
                None => {
                    let m = fit_method(method, tr, &y_tr, &config.settings, config.alpha, |b, o: Objective| model_seed(seed, &cell_key, b, o))?;
                    if let Some(k) = share_key {
                        shared.insert(k, m.clone());
                    }
                    m
                }
            };
            let cal_raw = raw_predictions(&models, cal)?;
            let calibration = calibrate(method, &cal_raw, &y_cal, config.alpha)?;
            let te_raw = raw_predictions(&models, te)?;
            let iv = intervals(method, &te_raw, calibration.as_ref(), config.alpha)?;
            let points = match (method.has_point_prediction(), te_raw.point()) {
                (true, Some(p)) => fold.test.iter().copied().zip(p.iter().copied()).collect(),
                _ => Vec::new(),
            };
            Ok(FoldOutcome {
                coverage_pct: coverage(&iv, &y_te)?,
                length_mv: avg_length(&iv)?,
                k: selected.as_ref().filter(|_| method.uses_feature_selection()).map(Vec::len),
                points,
            })
        })();
        out.push((method, result));
    }
    out
}

fn resolve_targets(ds: &ChipDataset, config: &BenchmarkConfig) -> Result<(Vec<u32>, Vec<i32>), BenchmarkError> {
    let have_rp = ds.label_read_points();
    let have_t = ds.label_temperatures();
    let rps = config.read_points.clone().unwrap_or_else(|| have_rp.clone());
    let temps = config.temperatures.clone().unwrap_or_else(|| have_t.clone());
    if rps.is_empty() || temps.is_empty() {
        return Err(BenchmarkError::InvalidConfig("no read points or temperatures to evaluate".into()));
    }
    for &rp in &rps {
        for &t in &temps {
            ds.label(crate::dataset::LabelKey::new(rp, t))?;
        }
    }
    Ok((rps, temps))
}

/// Runs every (method, read point, temperature) cell over all folds.
///
/// Cell failures do not abort the run; they are listed in the report and
/// surface through [`EvaluationReport::failure`].
pub fn run_benchmark(ds: &ChipDataset, config: &BenchmarkConfig) -> Result<EvaluationReport, BenchmarkError> {
    if config.methods.is_empty() {
        return Err(BenchmarkError::InvalidConfig("no methods selected".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(BenchmarkError::InvalidConfig(format!("alpha must lie in (0, 1), got {}", config.alpha)));
    }
    let mut methods = config.methods.clone();
    methods.dedup();
    let config = &BenchmarkConfig { methods, ..config.clone() };
    let (rps, temps) = resolve_targets(ds, config)?;
    let folds = make_folds(ds.n_chips(), &config.split)?;

    let n_folds = folds.len();
    let tasks: Vec<(u32, i32, usize)> = rps
        .iter()
        .flat_map(|&rp| temps.iter().flat_map(move |&t| (0..n_folds).map(move |f| (rp, t, f))))
        .collect();
    let run = |&(rp, t, f): &(u32, i32, usize)| run_cell(ds, config, rp, t, f, &folds[f]);
    #[cfg(feature = "parallel")]
    let results: Vec<CellResult> = tasks.par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<CellResult> = tasks.iter().map(run).collect();

    let mut by_key: BTreeMap<(u32, i32, Method), Vec<(usize, Result<FoldOutcome, Error>)>> = BTreeMap::new();
    for (&(rp, t, f), cell) in tasks.iter().zip(results) {
        for (m, r) in cell {
            by_key.entry((rp, t, m)).or_default().push((f, r));
        }
    }

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &rp in &rps {
        for &m in &config.methods {
            for &t in &temps {
                let outcomes = by_key.remove(&(rp, t, m)).unwrap_or_default();
                let mut ok = Vec::new();
                for (f, r) in outcomes {
                    match r {
                        Ok(o) => ok.push(o),
                        Err(e) => failures.push(CellFailure {
                            method: m,
                            read_point_hours: rp,
                            temperature_celsius: t,
                            fold: f,
                            class: format!("{:?}", e.class()).to_lowercase(),
                            error: e.to_string(),
                        }),
                    }
                }
                rows.push(summarize(ds, m, rp, t, ok, folds.len()));
            }
        }
    }

    let (q_lo, q_hi) = config.settings.quantiles(config.alpha);
    Ok(EvaluationReport {
        format_version: crate::FORMAT_VERSION,
        config: ReportConfig {
            alpha: config.alpha,
            n_folds: config.split.n_folds,
            calibration_fraction: config.split.calibration_fraction,
            seed: config.split.seed,
            feature_set: config.feature_set,
            methods: config.methods.clone(),
            read_points: rps,
            temperatures: temps,
            q_lo,
            q_hi,
            k_max: config.settings.k_max,
            rmse_band_mv: RMSE_BAND_MV,
            settings: config.settings.clone(),
        },
        folds: folds
            .iter()
            .enumerate()
            .map(|(i, f)| FoldAudit {
                fold: i,
                train: f.train.len(),
                calibration: f.calibration.len(),
                test_chips: f.test.iter().map(|&c| ds.chip_ids()[c].clone()).collect(),
            })
            .collect(),
        rows,
        failures,
    })
}

fn summarize(ds: &ChipDataset, method: Method, rp: u32, t: i32, ok: Vec<FoldOutcome>, n_folds: usize) -> ReportRow {
    let complete = ok.len() == n_folds;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let fold_length_mv: Vec<f64> = ok.iter().map(|o| o.length_mv).collect();
    let fold_coverage_pct: Vec<f64> = ok.iter().map(|o| o.coverage_pct).collect();
    let (mut r2, mut rmse) = (None, None);
    if complete && method.has_point_prediction() {
        let mut pooled: Vec<(usize, f64)> = ok.iter().flat_map(|o| o.points.iter().copied()).collect();
        pooled.sort_by_key(|p| p.0);
        let y = ds.label(crate::dataset::LabelKey::new(rp, t)).expect("target checked");
        let pred: Vec<f64> = pooled.iter().map(|p| p.1).collect();
        let truth: Vec<f64> = pooled.iter().map(|p| y[p.0]).collect();
        match r2_rmse(&pred, &truth) {
            Ok((a, b)) => {
                r2 = Some(a);
                rmse = Some(b);
            }
            Err(MetricsError::ZeroVariance { rmse: b }) => rmse = Some(b),
            Err(_) => {}
        }
    }
    ReportRow {
        method,
        read_point_hours: rp,
        temperature_celsius: t,
        avg_length_mv: complete.then(|| mean(&fold_length_mv)),
        coverage_pct: complete.then(|| mean(&fold_coverage_pct)),
        r2,
        rmse_mv: rmse,
        rmse_in_band: rmse.map(|v| (RMSE_BAND_MV.0..=RMSE_BAND_MV.1).contains(&v)),
        fold_k: ok.iter().filter_map(|o| o.k).collect(),
        fold_length_mv,
        fold_coverage_pct,
    }
}
