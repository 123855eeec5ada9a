//! Distribution-free prediction intervals for chip minimum operating voltage
//! (Vmin).
//!
//! The crate is organised around the flow used to size Vmin guard bands:
//!
//! * [`dataset`] holds chips, their parametric and on-chip monitor features and
//!   Vmin labels per stress read point and temperature, plus CSV ingestion,
//!   per-read-point feature assembly and deterministic cross-validation splits.
//! * [`regressors`] provides the base learners: ordinary least squares,
//!   linear quantile regression, a Gaussian process, gradient-boosted trees and
//!   a one-hidden-layer MLP, trained under squared or pinball loss.
//! * [`feature_select`] implements correlation-based feature selection.
//! * [`conformal`] builds intervals: Gaussian-process bands, raw quantile
//!   regression, split conformal prediction and conformalized quantile
//!   regression.
//! * [`metrics`] scores intervals and point predictions; [`benchmark`] runs the
//!   cross-validated comparison that produces per-(method, read point,
//!   temperature) length and coverage tables.
//! * [`synth`] generates a synthetic chip population with the same column
//!   structure as a production burn-in dataset.
//!
//! ```
//! use vmin_core::conformal::{cp_calibrate, cp_interval};
//! use vmin_core::regressors::fit_ols;
//! use nalgebra::DMatrix;
//!
//! let x = DMatrix::from_row_slice(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
//! let y = [2.1, 3.9, 6.2, 7.8, 10.1, 12.0];
//! let model = fit_ols(&x, &y).unwrap();
//!
//! let x_cal = DMatrix::from_row_slice(9, 1, &[1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5, 9.5]);
//! let y_cal = [3.0, 5.2, 6.9, 9.1, 11.0, 13.2, 14.8, 17.1, 19.0];
//! let cal = cp_calibrate(&model, &x_cal, &y_cal, 0.1).unwrap();
//! assert_eq!(cal.quantile_index, 9);
//!
//! let intervals = cp_interval(&model, &DMatrix::from_row_slice(1, 1, &[10.0]), &cal).unwrap();
//! assert!(intervals[0].lower < 20.0 && intervals[0].upper > 20.0);
//! ```

pub mod benchmark;
pub mod conformal;
pub mod dataset;
mod error;
pub mod feature_select;
pub mod metrics;
pub mod pipeline;
pub mod regressors;
pub mod rng;
pub mod synth;

pub use error::{Error, ErrorClass};

/// Version tag written into every JSON document this crate produces.
pub const FORMAT_VERSION: u32 = 1;
