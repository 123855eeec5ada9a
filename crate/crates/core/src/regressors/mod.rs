//! Base point and quantile regressors.
//!
//! Every learner produces a [`RegressorModel`]: an immutable fitted predictor
//! that serializes to a versioned JSON document. Linear models, boosted trees
//! and the MLP can be trained under squared error or pinball loss; the
//! Gaussian process is fitted by marginal likelihood and yields quantiles
//! analytically, so a pinball objective is rejected for it.

mod gbt;
mod gp;
mod linear;
mod mlp;
mod pinball;

pub use gbt::{fit_gbt, GbtConfig, GbtParams, Tree};
pub use gp::{check_objective as check_gp_objective, fit_gp, gp_predict, log_marginal_likelihood, GpConfig, GpFit};
pub use linear::{fit_ols, fit_quantile_linear, fit_quantile_linear_with, LinearParams, QuantileLinearConfig};
pub use mlp::{fit_mlp, MlpConfig, MlpParams, Network};
pub use pinball::{empirical_quantile, mean_pinball_loss, pinball_gradient, pinball_loss, PinballLossSpec};

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum RegressorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {need} training rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("{kind} does not support the {objective} objective")]
    UnsupportedObjective { kind: ModelKind, objective: Objective },
    #[error("quantile fit did not converge: last window improved the loss by {final_delta:e}")]
    NonConvergence { final_delta: f64 },
    #[error("kernel matrix is not positive definite even with a noise floor")]
    SingularKernel,
    #[error("training loss became non-finite at epoch {epoch}; lower the learning rate")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed model document: {0}")]
    Serialization(#[from] serde_json::Error),
    #[error("unsupported model format version {0}")]
    FormatVersion(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Least squares under MSE, linear quantile regression under pinball loss.
    Linear,
    GaussianProcess,
    GradientBoostedTrees,
    Mlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::GaussianProcess => "gaussian_process",
            ModelKind::GradientBoostedTrees => "gradient_boosted_trees",
            ModelKind::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Objective {
    Mse,
    Pinball { q: f64 },
}

impl Objective {
    pub fn pinball(q: f64) -> Result<Self, RegressorError> {
        PinballLossSpec::new(q).map(|s| Objective::Pinball { q: s.quantile_q })
    }

    pub fn validate(self) -> Result<Self, RegressorError> {
        match self {
            Objective::Mse => Ok(self),
            Objective::Pinball { q } => Objective::pinball(q),
        }
    }

    pub fn loss(self, y: f64, y_hat: f64) -> f64 {
        match self {
            Objective::Mse => (y - y_hat).powi(2),
            Objective::Pinball { q } => pinball_loss(y, y_hat, q),
        }
    }

    /// Derivative of [`Objective::loss`] with respect to the prediction.
    pub fn gradient(self, y: f64, y_hat: f64) -> f64 {
        match self {
            Objective::Mse => 2.0 * (y_hat - y),
            Objective::Pinball { q } => pinball_gradient(y, y_hat, q),
        }
    }

    pub fn mean_loss(self, y: &[f64], y_hat: &[f64]) -> f64 {
        y.iter().zip(y_hat).map(|(&a, &b)| self.loss(a, b)).sum::<f64>() / y.len().max(1) as f64
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Mse => f.write_str("mse"),
            Objective::Pinball { q } => write!(f, "pinball(q={q})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub n_train: usize,
    pub d_features: usize,
    pub seed: u64,
    pub final_train_loss: f64,
    /// Iterations, boosting rounds or epochs actually run.
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    Linear(LinearParams),
    GaussianProcess(GpFit),
    GradientBoostedTrees(GbtParams),
    Mlp(MlpParams),
}

/// A fitted point or quantile regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub objective: Objective,
    pub params: ModelParams,
    pub train_meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    kind: ModelKind,
    #[serde(flatten)]
    model: RegressorModel,
}

impl RegressorModel {
    pub fn kind(&self) -> ModelKind {
        match self.params {
            ModelParams::Linear(_) => ModelKind::Linear,
            ModelParams::GaussianProcess(_) => ModelKind::GaussianProcess,
            ModelParams::GradientBoostedTrees(_) => ModelKind::GradientBoostedTrees,
            ModelParams::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn n_features(&self) -> usize {
        self.train_meta.d_features
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>, RegressorError> {
        predict(self, x)
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            format_version: crate::FORMAT_VERSION,
            kind: self.kind(),
            model: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegressorError> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != crate::FORMAT_VERSION {
            return Err(RegressorError::FormatVersion(doc.format_version));
        }
        let mut model = doc.model;
        if let ModelParams::GaussianProcess(gp) = &mut model.params {
            gp.refactor()?;
        }
        Ok(model)
    }
}

/// One prediction per row of `x`.
pub fn predict(model: &RegressorModel, x: &DMatrix<f64>) -> Result<Vec<f64>, RegressorError> {
    check_width(model.n_features(), x)?;
    Ok(match &model.params {
        ModelParams::Linear(p) => p.predict(x),
        ModelParams::GaussianProcess(gp) => gp.predict(x)?.0,
        ModelParams::GradientBoostedTrees(p) => p.predict(x),
        ModelParams::Mlp(p) => p.predict(x),
    })
}

pub(crate) fn check_width(expected: usize, x: &DMatrix<f64>) -> Result<(), RegressorError> {
    if x.ncols() != expected {
        return Err(RegressorError::DimensionMismatch {
            expected,
            got: x.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn check_training(x: &DMatrix<f64>, y: &[f64], min_rows: usize) -> Result<(), RegressorError> {
    if x.nrows() != y.len() {
        return Err(RegressorError::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    if y.len() < min_rows {
        return Err(RegressorError::TooFewRows {
            need: min_rows,
            got: y.len(),
        });
    }
    Ok(())
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}
