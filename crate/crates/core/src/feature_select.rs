//! Correlation-based feature selection (CFS).
//!
//! Greedy forward search over the merit
//! `k * mean|r_cf| / sqrt(k + k(k-1) * mean|r_ff|)`, where `r_cf` are
//! feature-target and `r_ff` pairwise feature-feature Pearson correlations.
//! A plain top-k correlation ranking is available as an alternative.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Error, Debug, PartialEq)]
pub enum FeatureSelectError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("asked for up to {k_max} features but only {columns} columns are available")]
    TooFewColumns { k_max: usize, columns: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// Greedy forward search on the CFS merit.
    #[default]
    Merit,
    /// Columns ranked by |correlation with the target|.
    TopK,
}

/// Selected columns in selection order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSubset {
    pub indices: Vec<usize>,
    pub k: usize,
    pub merit: f64,
}

/// Audit record for one subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecord {
    pub k: usize,
    pub column_names: Vec<String>,
    pub merit: f64,
}

impl FeatureSubset {
    pub fn record(&self, names: &[String]) -> SubsetRecord {
        SubsetRecord {
            k: self.k,
            column_names: self.indices.iter().map(|&i| names[i].clone()).collect(),
            merit: self.merit,
        }
    }
}

/// Sample Pearson correlation; 0 when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, FeatureSelectError> {
    if x.len() != y.len() {
        return Err(FeatureSelectError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(FeatureSelectError::TooFewSamples(x.len()));
    }
    let zx = unit_centered(x.iter().copied());
    let zy = unit_centered(y.iter().copied());
    Ok(dot(&zx, &zy).clamp(-1.0, 1.0))
}

/// Centered and scaled to unit Euclidean norm; all zeros for a constant input.
fn unit_centered(v: impl Iterator<Item = f64> + Clone) -> Vec<f64> {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let c: Vec<f64> = v.map(|a| a - mean).collect();
    let norm = c.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() || c.iter().all(|&a| a == 0.0) {
        return vec![0.0; c.len()];
    }
    c.into_iter().map(|a| a / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// CFS merit from summed |r_cf| over the subset and summed |r_ff| over its
/// unordered pairs.
pub fn merit(k: usize, sum_cf: f64, sum_ff: f64) -> f64 {
    let k = k as f64;
    sum_cf / (k + 2.0 * sum_ff).sqrt()
}

/// Correlations at or above this magnitude mark an exact copy of a selected
/// column; such copies are never added.
const DUPLICATE_CORRELATION: f64 = 1.0 - 1e-12;

struct Prepared {
    z: Vec<Vec<f64>>,
    r_cf: Vec<f64>,
}

fn prepare(x: &DMatrix<f64>, y: &[f64], k_max: usize) -> Result<Prepared, FeatureSelectError> {
    if x.nrows() != y.len() {
        return Err(FeatureSelectError::LengthMismatch(x.nrows(), y.len()));
    }
    if y.len() < 2 {
        return Err(FeatureSelectError::TooFewSamples(y.len()));
    }
    if x.ncols() < k_max || k_max == 0 {
        return Err(FeatureSelectError::TooFewColumns {
            k_max,
            columns: x.ncols(),
        });
    }
    let zy = unit_centered(y.iter().copied());
    let cols: Vec<usize> = (0..x.ncols()).collect();
    let z: Vec<Vec<f64>> = map_columns(&cols, |j| unit_centered(x.column(j).iter().copied()));
    let r_cf = z.iter().map(|c| dot(c, &zy).abs().min(1.0)).collect();
    Ok(Prepared { z, r_cf })
}

fn map_columns<T: Send>(cols: &[usize], f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        cols.par_iter().map(|&j| f(j)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cols.iter().map(|&j| f(j)).collect()
    }
}

/// Returns the incumbent subset for each size `k = 1..=k_max`.
///
/// If fewer than `k_max` columns remain that are not exact copies of selected
/// ones, the list stops early.
pub fn cfs_select(x: &DMatrix<f64>, y: &[f64], k_max: usize) -> Result<Vec<FeatureSubset>, FeatureSelectError> {
    cfs_select_with(x, y, k_max, SelectionStrategy::Merit)
}

pub fn cfs_select_with(
    x: &DMatrix<f64>,
    y: &[f64],
    k_max: usize,
    strategy: SelectionStrategy,
) -> Result<Vec<FeatureSubset>, FeatureSelectError> {
    let p = prepare(x, y, k_max)?;
    let d = x.ncols();
    let mut selected: Vec<usize> = Vec::new();
    let mut excluded = vec![false; d];
    // Summed |r| between each column and the selected set.
    let mut ff_to_selected = vec![0.0; d];
    let (mut sum_cf, mut sum_ff) = (0.0, 0.0);
    let mut out = Vec::with_capacity(k_max);

    let ranked = match strategy {
        SelectionStrategy::TopK => {
            let mut r: Vec<usize> = (0..d).collect();
            r.sort_by(|&a, &b| p.r_cf[b].total_cmp(&p.r_cf[a]).then(a.cmp(&b)));
            Some(r)
        }
        SelectionStrategy::Merit => None,
    };

    for k in 1..=k_max {
        let pick = match &ranked {
            Some(r) => r.iter().copied().find(|&j| !excluded[j]),
            None => {
                let mut best: Option<(usize, f64)> = None;
                for j in (0..d).filter(|&j| !excluded[j]) {
                    let m = merit(k, sum_cf + p.r_cf[j], sum_ff + ff_to_selected[j]);
                    if best.is_none_or(|(_, b)| m > b) {
                        best = Some((j, m));
                    }
                }
                best.map(|(j, _)| j)
            }
        };
        let Some(j) = pick else { break };
        sum_cf += p.r_cf[j];
        sum_ff += ff_to_selected[j];
        selected.push(j);
        excluded[j] = true;
        let zj = &p.z[j];
        let cols: Vec<usize> = (0..d).collect();
        let r_new = map_columns(&cols, |c| dot(&p.z[c], zj).abs().min(1.0));
        for (c, r) in r_new.into_iter().enumerate() {
            ff_to_selected[c] += r;
            if r >= DUPLICATE_CORRELATION && zj.iter().any(|&v| v != 0.0) {
                excluded[c] = true;
            }
        }
        out.push(FeatureSubset {
            indices: selected.clone(),
            k,
            merit: merit(k, sum_cf, sum_ff),
        });
        if out.len() < k_max && excluded.iter().all(|&e| e) {
            break;
        }
    }
    Ok(out)
}

/// Merit of an arbitrary subset, evaluated directly from the formula.
pub fn subset_merit(x: &DMatrix<f64>, y: &[f64], indices: &[usize]) -> Result<f64, FeatureSelectError> {
    let col = |j: usize| x.column(j).iter().copied().collect::<Vec<_>>();
    let mut sum_cf = 0.0;
    let mut sum_ff = 0.0;
    for (a, &i) in indices.iter().enumerate() {
        sum_cf += pearson(&col(i), y)?.abs();
        for &j in &indices[a + 1..] {
            sum_ff += pearson(&col(i), &col(j))?.abs();
        }
    }
    Ok(merit(indices.len(), sum_cf, sum_ff))
}
