//! Interval methods and the fitted predictor bundle.
//!
//! A [`Method`] names an interval construction over a base learner, e.g.
//! `cqr-gbt`. The functions here fit the models a method needs, calibrate
//! them and build intervals; both the benchmark harness and the command-line
//! tool go through them. [`Predictor`] packages preprocessing, fitted models
//! and an optional calibration into one serializable document.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conformal::{
    cp_interval_from_predictions, cp_scores, cqr_interval_from_predictions, cqr_scores, gp_interval, qr_interval_from_predictions, CalibrationResult,
    ConformalError, PredictionInterval, ScoreKind,
};
use crate::dataset::{ChipDataset, DatasetError, FeatureSet, LabelKey, Standardizer};
use crate::feature_select::{cfs_select_with, FeatureSubset, SelectionStrategy, SubsetRecord};
use crate::regressors::{
    fit_gbt, fit_gp, fit_mlp, fit_ols, fit_quantile_linear_with, GbtConfig, GpConfig, MlpConfig, ModelParams, Objective, QuantileLinearConfig,
    RegressorError, RegressorModel,
};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BaseLearner {
    Linear,
    Gbt,
    Mlp,
}

impl BaseLearner {
    pub fn name(self) -> &'static str {
        match self {
            BaseLearner::Linear => "linear",
            BaseLearner::Gbt => "gbt",
            BaseLearner::Mlp => "mlp",
        }
    }
}

/// An interval construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Gaussian-process posterior band.
    Gp,
    /// Split conformal prediction around a squared-error point model.
    Cp(BaseLearner),
    /// Raw interval between two pinball-loss fits.
    Qr(BaseLearner),
    /// Conformalized quantile regression.
    Cqr(BaseLearner),
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Gp,
        Method::Cp(BaseLearner::Linear),
        Method::Qr(BaseLearner::Linear),
        Method::Cqr(BaseLearner::Linear),
        Method::Cp(BaseLearner::Gbt),
        Method::Qr(BaseLearner::Gbt),
        Method::Cqr(BaseLearner::Gbt),
        Method::Cp(BaseLearner::Mlp),
        Method::Qr(BaseLearner::Mlp),
        Method::Cqr(BaseLearner::Mlp),
    ];

    pub fn base(self) -> Option<BaseLearner> {
        match self {
            Method::Gp => None,
            Method::Cp(b) | Method::Qr(b) | Method::Cqr(b) => Some(b),
        }
    }

    /// Boosted trees take every column; the other learners see a CFS subset.
    pub fn uses_feature_selection(self) -> bool {
        self.base() != Some(BaseLearner::Gbt)
    }

    pub fn needs_calibration(self) -> bool {
        matches!(self, Method::Cp(_) | Method::Cqr(_))
    }

    /// Whether the method has a point prediction to score with R^2 and RMSE.
    pub fn has_point_prediction(self) -> bool {
        matches!(self, Method::Gp | Method::Cp(_))
    }

    pub fn score_kind(self) -> Option<ScoreKind> {
        match self {
            Method::Cp(_) => Some(ScoreKind::AbsoluteResidual),
            Method::Cqr(_) => Some(ScoreKind::QuantileExcess),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Gp => f.write_str("gp"),
            Method::Cp(b) => write!(f, "cp-{}", b.name()),
            Method::Qr(b) => write!(f, "qr-{}", b.name()),
            Method::Cqr(b) => write!(f, "cqr-{}", b.name()),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.to_string() == lower)
            .ok_or_else(|| format!("unknown method `{s}`; expected one of {}", Method::ALL.map(|m| m.to_string()).join(", ")))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How the CFS subset size is picked among `1..=k_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSelection {
    /// Least-squares RMSE on the calibration rows. Reusing those rows for
    /// model selection biases conformal coverage downward.
    Calibration,
    /// Least-squares RMSE from 4-fold cross-validation inside the training
    /// rows. Calibration rows stay untouched until conformal scoring.
    #[default]
    TrainingCv,
}

/// Learner hyperparameters shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    /// Lower quantile for QR/CQR; `alpha / 2` when unset.
    pub q_lo: Option<f64>,
    /// Upper quantile for QR/CQR; `1 - alpha / 2` when unset.
    pub q_hi: Option<f64>,
    pub k_max: usize,
    pub selection: SelectionStrategy,
    pub k_selection: KSelection,
    pub gp: GpConfig,
    pub gbt: GbtConfig,
    pub mlp: MlpConfig,
    pub quantile_linear: QuantileLinearConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            q_lo: None,
            q_hi: None,
            k_max: 10,
            selection: SelectionStrategy::Merit,
            k_selection: KSelection::default(),
            gp: GpConfig::default(),
            gbt: GbtConfig::default(),
            mlp: MlpConfig::default(),
            quantile_linear: QuantileLinearConfig::default(),
        }
    }
}

impl ModelSettings {
    pub fn quantiles(&self, alpha: f64) -> (f64, f64) {
        (self.q_lo.unwrap_or(alpha / 2.0), self.q_hi.unwrap_or(1.0 - alpha / 2.0))
    }
}

/// Fits one base learner under `objective`.
pub fn fit_base(base: BaseLearner, objective: Objective, x: &DMatrix<f64>, y: &[f64], settings: &ModelSettings, seed: u64) -> Result<RegressorModel, RegressorError> {
    match (base, objective) {
        (BaseLearner::Linear, Objective::Mse) => fit_ols(x, y),
        (BaseLearner::Linear, Objective::Pinball { q }) => fit_quantile_linear_with(x, y, q, &settings.quantile_linear),
        (BaseLearner::Gbt, o) => fit_gbt(x, y, o, &GbtConfig { seed, ..settings.gbt.clone() }),
        (BaseLearner::Mlp, o) => fit_mlp(x, y, o, &MlpConfig { seed, ..settings.mlp.clone() }),
    }
}

/// The models behind one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum FittedModels {
    Point { model: RegressorModel },
    Pair { lo: RegressorModel, hi: RegressorModel },
    Gp { model: RegressorModel },
}

impl FittedModels {
    fn models_mut(&mut self) -> Vec<&mut RegressorModel> {
        match self {
            FittedModels::Point { model } | FittedModels::Gp { model } => vec![model],
            FittedModels::Pair { lo, hi } => vec![lo, hi],
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            FittedModels::Point { model } | FittedModels::Gp { model } => model.n_features(),
            FittedModels::Pair { lo, .. } => lo.n_features(),
        }
    }
}

/// Seed for one fitted model, identical for every method that needs it.
pub fn model_seed(master: u64, cell: &str, base: Option<BaseLearner>, objective: Objective) -> u64 {
    let learner = base.map_or("gp", BaseLearner::name);
    crate::rng::derive_seed(master, &format!("{cell}/{learner}/{objective}"))
}

/// Fits the models `method` needs. `seed_for` maps (base, objective) to a seed.
pub fn fit_method(
    method: Method,
    x: &DMatrix<f64>,
    y: &[f64],
    settings: &ModelSettings,
    alpha: f64,
    seed_for: impl Fn(Option<BaseLearner>, Objective) -> u64,
) -> Result<FittedModels, RegressorError> {
    Ok(match method {
        Method::Gp => {
            let cfg = GpConfig {
                seed: seed_for(None, Objective::Mse),
                ..settings.gp.clone()
            };
            FittedModels::Gp {
                model: fit_gp(x, y, &cfg)?.into_model(),
            }
        }
        Method::Cp(b) => FittedModels::Point {
            model: fit_base(b, Objective::Mse, x, y, settings, seed_for(Some(b), Objective::Mse))?,
        },
        Method::Qr(b) | Method::Cqr(b) => {
            let (q_lo, q_hi) = settings.quantiles(alpha);
            let (lo, hi) = (Objective::pinball(q_lo)?, Objective::pinball(q_hi)?);
            FittedModels::Pair {
                lo: fit_base(b, lo, x, y, settings, seed_for(Some(b), lo))?,
                hi: fit_base(b, hi, x, y, settings, seed_for(Some(b), hi))?,
            }
        }
    })
}

/// Raw predictions of the fitted models: one vector for point and GP
/// models (plus GP predictive variance), two for quantile pairs.
pub enum RawPredictions {
    Point(Vec<f64>),
    Pair(Vec<f64>, Vec<f64>),
    Gp { mean: Vec<f64>, variance: Vec<f64> },
}

pub fn raw_predictions(models: &FittedModels, x: &DMatrix<f64>) -> Result<RawPredictions, RegressorError> {
    Ok(match models {
        FittedModels::Point { model } => RawPredictions::Point(model.predict(x)?),
        FittedModels::Pair { lo, hi } => RawPredictions::Pair(lo.predict(x)?, hi.predict(x)?),
        FittedModels::Gp { model } => {
            let ModelParams::GaussianProcess(gp) = &model.params else {
                return Err(RegressorError::InvalidConfig("GP slot holds a non-GP model".into()));
            };
            let (mean, latent) = gp.predict(x)?;
            // Intervals are for noisy observations, so the noise variance is added back.
            let variance = latent.iter().map(|v| v + gp.noise_variance).collect();
            RawPredictions::Gp { mean, variance }
        }
    })
}

impl RawPredictions {
    pub fn point(&self) -> Option<&[f64]> {
        match self {
            RawPredictions::Point(p) => Some(p),
            RawPredictions::Gp { mean, .. } => Some(mean),
            RawPredictions::Pair(..) => None,
        }
    }
}

/// Calibration for CP and CQR; `None` for methods that do not calibrate.
pub fn calibrate(method: Method, raw_cal: &RawPredictions, y_cal: &[f64], alpha: f64) -> Result<Option<CalibrationResult>, ConformalError> {
    match (method, raw_cal) {
        (Method::Cp(_), RawPredictions::Point(p)) => CalibrationResult::from_scores(cp_scores(p, y_cal)?, alpha, ScoreKind::AbsoluteResidual).map(Some),
        (Method::Cqr(_), RawPredictions::Pair(lo, hi)) => CalibrationResult::from_scores(cqr_scores(lo, hi, y_cal)?, alpha, ScoreKind::QuantileExcess).map(Some),
        _ => Ok(None),
    }
}

pub fn intervals(method: Method, raw: &RawPredictions, calibration: Option<&CalibrationResult>, alpha: f64) -> Result<Vec<PredictionInterval>, ConformalError> {
    let need = |c: Option<&CalibrationResult>| c.cloned().ok_or(ConformalError::EmptyCalibrationSet);
    match (method, raw) {
        (Method::Gp, RawPredictions::Gp { mean, variance }) => gp_interval(mean, variance, alpha),
        (Method::Qr(_), RawPredictions::Pair(lo, hi)) => qr_interval_from_predictions(lo, hi, alpha),
        (Method::Cp(_), RawPredictions::Point(p)) => cp_interval_from_predictions(p, &need(calibration)?),
        (Method::Cqr(_), RawPredictions::Pair(lo, hi)) => cqr_interval_from_predictions(lo, hi, &need(calibration)?),
        _ => Err(ConformalError::Regressor(RegressorError::InvalidConfig(format!("models do not match method {method}")))),
    }
}

/// Picks the subset size whose OLS fit on the training rows has the lowest
/// RMSE on the calibration rows. Ties go to the smaller subset.
pub fn choose_k(
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_cal: &DMatrix<f64>,
    y_cal: &[f64],
    subsets: &[FeatureSubset],
) -> Result<usize, RegressorError> {
    let mut best: Option<(usize, f64)> = None;
    for s in subsets {
        let m = fit_ols(&x_train.select_columns(&s.indices), y_train)?;
        let p = m.predict(&x_cal.select_columns(&s.indices))?;
        let rmse = (p.iter().zip(y_cal).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y_cal.len().max(1) as f64).sqrt();
        if best.is_none_or(|(_, r)| rmse < r) {
            best = Some((s.k, rmse));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| RegressorError::InvalidConfig("no feature subsets to choose from".into()))
}

/// Pooled out-of-fold OLS RMSE picks the subset size; folds are `i mod n_folds`.
pub fn choose_k_cv(x_train: &DMatrix<f64>, y_train: &[f64], subsets: &[FeatureSubset], n_folds: usize) -> Result<usize, RegressorError> {
    let n = y_train.len();
    let n_folds = n_folds.clamp(2, n.max(2));
    let mut best: Option<(usize, f64)> = None;
    for s in subsets {
        let x = x_train.select_columns(&s.indices);
        let mut sse = 0.0;
        for f in 0..n_folds {
            let (fit_rows, held): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| i % n_folds != f);
            if held.is_empty() || fit_rows.is_empty() {
                continue;
            }
            let y_fit: Vec<f64> = fit_rows.iter().map(|&i| y_train[i]).collect();
            let m = fit_ols(&x.select_rows(&fit_rows), &y_fit)?;
            let p = m.predict(&x.select_rows(&held))?;
            sse += held.iter().zip(&p).map(|(&i, v)| (v - y_train[i]).powi(2)).sum::<f64>();
        }
        let rmse = (sse / n.max(1) as f64).sqrt();
        if best.is_none_or(|(_, r)| rmse < r) {
            best = Some((s.k, rmse));
        }
    }
    best.map(|(k, _)| k)
        .ok_or_else(|| RegressorError::InvalidConfig("no feature subsets to choose from".into()))
}

/// Subset size under `settings.k_selection`.
pub fn select_k(
    settings: &ModelSettings,
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_cal: &DMatrix<f64>,
    y_cal: &[f64],
    subsets: &[FeatureSubset],
) -> Result<usize, RegressorError> {
    match settings.k_selection {
        KSelection::Calibration => choose_k(x_train, y_train, x_cal, y_cal, subsets),
        KSelection::TrainingCv => choose_k_cv(x_train, y_train, subsets, 4),
    }
}

/// Standardization fitted on training rows followed by an optional column
/// subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    /// Dataset column names the predictor consumes, in order.
    pub input_columns: Vec<String>,
    pub standardizer: Standardizer,
    /// Positions among the standardized columns, in selection order.
    pub selected: Option<Vec<usize>>,
}

impl Preprocessor {
    pub fn apply(&self, x_raw: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.standardizer.transform(x_raw);
        match &self.selected {
            Some(idx) => z.select_columns(idx),
            None => z,
        }
    }

    /// Extracts this predictor's input columns from a dataset by name.
    pub fn extract(&self, ds: &ChipDataset) -> Result<DMatrix<f64>, DatasetError> {
        let idx = self
            .input_columns
            .iter()
            .map(|name| ds.column_index(name).ok_or_else(|| DatasetError::MissingColumn(name.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ds.features().select_columns(&idx))
    }
}

/// A fitted interval predictor for one (read point, temperature) target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub method: Method,
    pub alpha: f64,
    pub target: LabelKey,
    pub feature_set: FeatureSet,
    pub preprocessor: Preprocessor,
    pub selection: Option<SubsetRecord>,
    pub models: FittedModels,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct PredictorDocument {
    format_version: u32,
    #[serde(flatten)]
    predictor: Predictor,
}

/// Options for [`Predictor::fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub method: Method,
    pub alpha: f64,
    pub target: LabelKey,
    pub feature_set: FeatureSet,
    pub settings: ModelSettings,
    /// Fixed CFS subset size; chosen by `settings.k_selection` when unset.
    pub k: Option<usize>,
    pub seed: u64,
}

impl Predictor {
    /// Fits on `train_rows`. `calibration_rows` are only read when the subset
    /// size is chosen with [`KSelection::Calibration`].
    pub fn fit(ds: &ChipDataset, train_rows: &[usize], calibration_rows: &[usize], options: &FitOptions) -> Result<Predictor, Error> {
        let assembled = crate::dataset::assemble_feature_set(ds, options.target.read_point_hours, options.target.temperature_celsius, options.feature_set)?;
        let names: Vec<String> = assembled.column_indices.iter().map(|&i| ds.columns()[i].name.clone()).collect();
        let x_tr_raw = assembled.x.select_rows(train_rows);
        let y_tr: Vec<f64> = train_rows.iter().map(|&i| assembled.y[i]).collect();
        let standardizer = Standardizer::fit(&x_tr_raw);
        if standardizer.n_outputs() == 0 {
            return Err(RegressorError::InvalidConfig("every feature column is constant on the training rows".into()).into());
        }
        let z_tr = standardizer.transform(&x_tr_raw);
        let mut selection = None;
        let mut selected = None;
        if options.method.uses_feature_selection() {
            let k_max = options.settings.k_max.min(z_tr.ncols()).max(1);
            let subsets = cfs_select_with(&z_tr, &y_tr, k_max, options.settings.selection)?;
            let k = match options.k {
                Some(k) => k.clamp(1, subsets.len()),
                None => {
                    let z_cal = standardizer.transform(&assembled.x.select_rows(calibration_rows));
                    let y_cal: Vec<f64> = calibration_rows.iter().map(|&i| assembled.y[i]).collect();
                    select_k(&options.settings, &z_tr, &y_tr, &z_cal, &y_cal, &subsets)?
                }
            };
            let subset = &subsets[k - 1];
            let kept_names: Vec<String> = standardizer.kept.iter().map(|&j| names[j].clone()).collect();
            selection = Some(subset.record(&kept_names));
            selected = Some(subset.indices.clone());
        }
        let preprocessor = Preprocessor {
            input_columns: names,
            standardizer,
            selected,
        };
        let x = match &preprocessor.selected {
            Some(idx) => z_tr.select_columns(idx),
            None => z_tr,
        };
        let cell = format!("fit/rp{}/t{}", options.target.read_point_hours, options.target.temperature_celsius);
        let models = fit_method(options.method, &x, &y_tr, &options.settings, options.alpha, |b, o| model_seed(options.seed, &cell, b, o))?;
        Ok(Predictor {
            method: options.method,
            alpha: options.alpha,
            target: options.target,
            feature_set: options.feature_set,
            preprocessor,
            selection,
            models,
            seed: options.seed,
        })
    }

    pub fn raw(&self, x_raw: &DMatrix<f64>) -> Result<RawPredictions, RegressorError> {
        raw_predictions(&self.models, &self.preprocessor.apply(x_raw))
    }

    /// Calibrates on labelled rows already restricted to `input_columns`.
    pub fn calibrate(&self, x_raw: &DMatrix<f64>, y: &[f64]) -> Result<Option<CalibrationResult>, ConformalError> {
        if y.is_empty() {
            return Err(ConformalError::EmptyCalibrationSet);
        }
        calibrate(self.method, &self.raw(x_raw)?, y, self.alpha)
    }

    pub fn intervals(&self, x_raw: &DMatrix<f64>, calibration: Option<&CalibrationResult>) -> Result<Vec<PredictionInterval>, ConformalError> {
        if let (Some(expected), Some(c)) = (self.method.score_kind(), calibration) {
            if c.score_kind != expected {
                return Err(ConformalError::WrongScoreKind {
                    expected,
                    found: c.score_kind,
                });
            }
        }
        intervals(self.method, &self.raw(x_raw)?, calibration, self.alpha)
    }

    pub fn to_json(&self) -> String {
        let doc = PredictorDocument {
            format_version: crate::FORMAT_VERSION,
            predictor: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("predictor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegressorError> {
        let doc: PredictorDocument = serde_json::from_str(text)?;
        if doc.format_version != crate::FORMAT_VERSION {
            return Err(RegressorError::FormatVersion(doc.format_version));
        }
        let mut p = doc.predictor;
        for m in p.models.models_mut() {
            if let ModelParams::GaussianProcess(gp) = &mut m.params {
                gp.refactor()?;
            }
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::train_calibration_split;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
            let j = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&j).unwrap(), m);
        }
        assert_eq!("CQR-GBT".parse::<Method>().unwrap(), Method::Cqr(BaseLearner::Gbt));
        assert!("cqr-svm".parse::<Method>().unwrap_err().contains("cqr-linear"));
        assert!(!Method::Cqr(BaseLearner::Gbt).uses_feature_selection());
        assert!(Method::Gp.uses_feature_selection());
    }

    #[test]
    fn default_quantiles_follow_alpha() {
        assert_eq!(ModelSettings::default().quantiles(0.1), (0.05, 0.95));
    }

    #[test]
    fn predictor_fit_calibrate_predict_and_reload() {
        let cfg = SynthConfig {
            n_chips: 60,
            n_parametric: 30,
            n_rod: 4,
            n_cpd: 2,
            ..SynthConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let (train, cal) = train_calibration_split(60, 0.5, 1).unwrap();
        let settings = ModelSettings {
            gp: GpConfig {
                restarts: 1,
                steps: 30,
                ..GpConfig::default()
            },
            ..ModelSettings::default()
        };
        for method in [Method::Cqr(BaseLearner::Linear), Method::Cp(BaseLearner::Linear), Method::Gp, Method::Qr(BaseLearner::Linear)] {
            let opts = FitOptions {
                method,
                alpha: 0.1,
                target: LabelKey::new(48, 25),
                feature_set: FeatureSet::Both,
                settings: settings.clone(),
                k: None,
                seed: 3,
            };
            let p = Predictor::fit(&ds, &train, &cal, &opts).unwrap();
            assert!(p.selection.as_ref().unwrap().k >= 1);
            let x = p.preprocessor.extract(&ds).unwrap();
            let y = ds.label(LabelKey::new(48, 25)).unwrap();
            let x_cal = x.select_rows(&cal);
            let y_cal: Vec<f64> = cal.iter().map(|&i| y[i]).collect();
            let c = p.calibrate(&x_cal, &y_cal).unwrap();
            assert_eq!(c.is_some(), method.needs_calibration());
            let iv = p.intervals(&x, c.as_ref()).unwrap();
            assert_eq!(iv.len(), 60);
            assert!(iv.iter().all(|i| i.lower <= i.upper));
            let back = Predictor::from_json(&p.to_json()).unwrap();
            let iv2 = back.intervals(&x, c.as_ref()).unwrap();
            for (a, b) in iv.iter().zip(&iv2) {
                assert!((a.lower - b.lower).abs() < 1e-9 && (a.upper - b.upper).abs() < 1e-9);
            }
        }
    }
}
