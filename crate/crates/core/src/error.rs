use thiserror::Error;

use crate::benchmark::BenchmarkError;
use crate::conformal::ConformalError;
use crate::dataset::DatasetError;
use crate::feature_select::FeatureSelectError;
use crate::metrics::MetricsError;
use crate::regressors::RegressorError;
use crate::synth::SynthError;

/// Any error raised by this crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Regressor(#[from] RegressorError),
    #[error(transparent)]
    FeatureSelect(#[from] FeatureSelectError),
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
}

/// Coarse failure class, used by the command-line tool to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Usage,
    /// Input data missing, malformed or inconsistent.
    Data,
    /// A fit diverged, failed to converge or produced an unusable result.
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        match self {
            Error::Dataset(DatasetError::InvalidSplit(_)) => Usage,
            Error::Dataset(_) => Data,
            Error::Regressor(e) => regressor_class(e),
            Error::FeatureSelect(_) | Error::Metrics(_) => Data,
            Error::Conformal(e) => conformal_class(e),
            Error::Synth(_) => Usage,
            Error::Benchmark(e) => e.class(),
        }
    }
}

pub(crate) fn regressor_class(e: &RegressorError) -> ErrorClass {
    match e {
        RegressorError::InvalidConfig(_) | RegressorError::InvalidQuantile(_) | RegressorError::UnsupportedObjective { .. } => ErrorClass::Usage,
        RegressorError::NonConvergence { .. } | RegressorError::SingularKernel | RegressorError::NonFiniteLoss { .. } => ErrorClass::Numerical,
        RegressorError::DimensionMismatch { .. } | RegressorError::TooFewRows { .. } | RegressorError::Serialization(_) | RegressorError::FormatVersion(_) => {
            ErrorClass::Data
        }
    }
}

pub(crate) fn conformal_class(e: &ConformalError) -> ErrorClass {
    match e {
        ConformalError::AlphaOutOfRange(_) => ErrorClass::Usage,
        ConformalError::InfiniteCorrection { .. } | ConformalError::InvalidVariance(_) => ErrorClass::Numerical,
        ConformalError::Regressor(r) => regressor_class(r),
        _ => ErrorClass::Data,
    }
}
