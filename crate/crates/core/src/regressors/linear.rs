//! Linear models: least squares and linear quantile regression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_training, empirical_quantile, mean, std_dev, ModelParams, Objective, RegressorError, RegressorModel, TrainMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearParams {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.intercept + self.coef.iter().enumerate().map(|(j, c)| c * x[(i, j)]).sum::<f64>())
            .collect()
    }
}

/// Least squares with intercept. Rank-deficient designs get the minimum-norm
/// slope vector; the intercept is not penalized.
pub fn fit_ols(x: &DMatrix<f64>, y: &[f64]) -> Result<RegressorModel, RegressorError> {
    check_training(x, y, 1)?;
    let (n, d) = x.shape();
    let x_mean: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
    let y_mean = mean(y);
    let coef = if d == 0 {
        Vec::new()
    } else {
        let xc = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - x_mean[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let svd = xc.svd(true, true);
        let s_max = svd.singular_values.max();
        let eps = (n.max(d) as f64) * s_max * f64::EPSILON;
        let beta = svd.solve(&yc, eps.max(f64::MIN_POSITIVE)).expect("SVD computed with both factors");
        beta.iter().copied().collect()
    };
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
    let params = LinearParams { intercept, coef };
    let pred = params.predict(x);
    Ok(RegressorModel {
        objective: Objective::Mse,
        train_meta: TrainMeta {
            n_train: n,
            d_features: d,
            seed: 0,
            final_train_loss: Objective::Mse.mean_loss(y, &pred),
            iterations: 1,
            converged: true,
        },
        params: ModelParams::Linear(params),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileLinearConfig {
    pub max_iter: usize,
    /// Required improvement of the best mean loss over one window.
    pub tol: f64,
    pub window: usize,
    /// Initial step length, in units of the target's standard deviation.
    pub initial_step: f64,
    /// Iterations over which the step length halves.
    pub half_life: usize,
}

impl Default for QuantileLinearConfig {
    fn default() -> Self {
        QuantileLinearConfig {
            max_iter: 10_000,
            tol: 1e-9,
            window: 100,
            initial_step: 0.5,
            half_life: 400,
        }
    }
}

pub fn fit_quantile_linear(x: &DMatrix<f64>, y: &[f64], q: f64) -> Result<RegressorModel, RegressorError> {
    fit_quantile_linear_with(x, y, q, &QuantileLinearConfig::default())
}

/// Linear quantile regression by subgradient descent on the mean pinball loss.
///
/// Inputs and target are standardized internally. The step length halves
/// every `half_life` iterations; whenever a window passes without the best
/// loss improving by `tol`, the iterate returns to the best point and the
/// step is cut by 4. The fit has converged once a window stalls with the step
/// below `1e-7`. Reaching `max_iter` while still improving is a
/// `NonConvergence`.
pub fn fit_quantile_linear_with(
    x: &DMatrix<f64>,
    y: &[f64],
    q: f64,
    config: &QuantileLinearConfig,
) -> Result<RegressorModel, RegressorError> {
    let objective = Objective::pinball(q)?;
    check_training(x, y, 1)?;
    if config.window == 0 || config.max_iter == 0 || config.half_life == 0 {
        return Err(RegressorError::InvalidConfig("window, half_life and max_iter must be positive".into()));
    }
    let (n, d) = x.shape();

    let mut x_mean = vec![0.0; d];
    let mut x_scale = vec![0.0; d];
    for (j, col) in x.column_iter().enumerate() {
        let c: Vec<f64> = col.iter().copied().collect();
        x_mean[j] = mean(&c);
        x_scale[j] = std_dev(&c);
    }
    let active: Vec<usize> = (0..d).filter(|&j| x_scale[j] > 0.0).collect();
    let k = active.len();
    // Row-major standardized design restricted to non-constant columns.
    let z: Vec<f64> = (0..n)
        .flat_map(|i| active.iter().map(move |&j| (i, j)))
        .map(|(i, j)| (x[(i, j)] - x_mean[j]) / x_scale[j])
        .collect();
    let y_center = empirical_quantile(y, q);
    let y_scale = match std_dev(y) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let t: Vec<f64> = y.iter().map(|v| (v - y_center) / y_scale).collect();

    let loss_and_grad = |theta: &[f64], grad: &mut [f64]| -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let row = &z[i * k..(i + 1) * k];
            let pred = theta[0] + row.iter().zip(&theta[1..]).map(|(a, b)| a * b).sum::<f64>();
            loss += objective.loss(t[i], pred);
            let g = objective.gradient(t[i], pred);
            if g != 0.0 {
                grad[0] += g;
                for (gj, xj) in grad[1..].iter_mut().zip(row) {
                    *gj += g * xj;
                }
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        loss * inv
    };

    let mut theta = vec![0.0; k + 1];
    let mut grad = vec![0.0; k + 1];
    let mut best_theta = theta.clone();
    let mut best = loss_and_grad(&theta, &mut grad);
    let mut window_start_best = best;
    let mut step = config.initial_step;
    let mut converged = false;
    let mut last_delta = f64::INFINITY;
    let mut iterations = 0;

    while iterations < config.max_iter {
        let eta = step * 0.5f64.powf(iterations as f64 / config.half_life as f64);
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th -= eta * g;
        }
        let loss = loss_and_grad(&theta, &mut grad);
        if !loss.is_finite() {
            return Err(RegressorError::NonConvergence { final_delta: f64::NAN });
        }
        if loss < best {
            best = loss;
            best_theta.copy_from_slice(&theta);
        }
        iterations += 1;
        if iterations % config.window == 0 {
            last_delta = window_start_best - best;
            window_start_best = best;
            if last_delta < config.tol {
                if eta < 1e-7 {
                    converged = true;
                    break;
                }
                step *= 0.25;
                theta.copy_from_slice(&best_theta);
                loss_and_grad(&theta, &mut grad);
            }
        }
    }
    if !converged && last_delta >= config.tol {
        return Err(RegressorError::NonConvergence { final_delta: last_delta });
    }

    let mut coef = vec![0.0; d];
    let mut intercept = y_center + y_scale * best_theta[0];
    for (slot, &j) in active.iter().enumerate() {
        let w = y_scale * best_theta[slot + 1] / x_scale[j];
        coef[j] = w;
        intercept -= w * x_mean[j];
    }
    let params = LinearParams { intercept, coef };
    let pred = params.predict(x);
    Ok(RegressorModel {
        objective,
        train_meta: TrainMeta {
            n_train: n,
            d_features: d,
            seed: 0,
            final_train_loss: objective.mean_loss(y, &pred),
            iterations,
            converged: true,
        },
        params: ModelParams::Linear(params),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regressors::mean_pinball_loss;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn linear(m: &RegressorModel) -> &LinearParams {
        match &m.params {
            ModelParams::Linear(p) => p,
            _ => unreachable!(),
        }
    }

    #[test]
    fn exact_line() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let m = fit_ols(&x, &[2.0, 4.0, 6.0]).unwrap();
        let p = linear(&m);
        assert!((p.coef[0] - 2.0).abs() < 1e-10);
        assert!(p.intercept.abs() < 1e-10);
        assert_eq!(m.predict(&DMatrix::from_row_slice(1, 1, &[10.0])).unwrap(), vec![20.0]);
    }

    #[test]
    fn constant_design_falls_back_to_intercept() {
        let x = DMatrix::from_row_slice(2, 1, &[3.0, 3.0]);
        let m = fit_ols(&x, &[5.0, 5.0]).unwrap();
        let p = linear(&m);
        assert!((p.intercept - 5.0).abs() < 1e-12);
        assert_eq!(p.coef, vec![0.0]);
    }

    #[test]
    fn duplicated_columns_get_minimum_norm_split() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let m = fit_ols(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap();
        let p = linear(&m);
        assert!((p.coef[0] - 1.0).abs() < 1e-10 && (p.coef[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn recovers_random_coefficients() {
        let mut rng = rng_from_seed(5);
        let beta: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x = DMatrix::from_fn(50, 5, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..50).map(|i| (0..5).map(|j| beta[j] * x[(i, j)]).sum()).collect();
        let m = fit_ols(&x, &y).unwrap();
        let p = linear(&m);
        // Residual-norm oracle: the fitted values reproduce y.
        let resid: f64 = m.predict(&x).unwrap().iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(resid < 1e-9);
        for (b, c) in beta.iter().zip(&p.coef) {
            assert!((b - c).abs() < 1e-8);
        }
        assert!(p.intercept.abs() < 1e-8);
    }

    #[test]
    fn mismatched_lengths() {
        let x = DMatrix::zeros(3, 1);
        assert!(matches!(
            fit_ols(&x, &[1.0]),
            Err(RegressorError::DimensionMismatch { expected: 3, got: 1 })
        ));
        assert!(matches!(fit_quantile_linear(&x, &[1.0, 2.0], 0.5), Err(RegressorError::DimensionMismatch { .. })));
        assert!(matches!(fit_quantile_linear(&x, &[1.0, 2.0, 3.0], 1.0), Err(RegressorError::InvalidQuantile(_))));
    }

    #[test]
    fn intercept_only_median() {
        let y: Vec<f64> = (1..=100).map(f64::from).collect();
        let m = fit_quantile_linear(&DMatrix::zeros(100, 0), &y, 0.5).unwrap();
        let pred = m.predict(&DMatrix::zeros(1, 0)).unwrap()[0];
        // Any value between the 50th and 51st order statistics is optimal.
        assert!((49.0..=52.0).contains(&pred), "median prediction {pred}");
        assert!(m.train_meta.converged);
    }

    #[test]
    fn intercept_only_upper_quantile_matches_sort_oracle() {
        let y: Vec<f64> = (1..=100).map(f64::from).collect();
        let oracle = {
            let mut s = y.clone();
            s.sort_by(f64::total_cmp);
            s[(0.9f64 * 100.0).ceil() as usize - 1]
        };
        // A constant column is dropped, leaving the intercept.
        let m = fit_quantile_linear(&DMatrix::from_element(100, 1, 4.0), &y, 0.9).unwrap();
        let pred = m.predict(&DMatrix::from_element(1, 1, 4.0)).unwrap()[0];
        assert!((pred - oracle).abs() <= 1.0, "q=0.9 prediction {pred} vs oracle {oracle}");
    }

    #[test]
    fn beats_nearby_perturbations() {
        let mut rng = rng_from_seed(9);
        let n = 200;
        let x: DMatrix<f64> = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..n)
            .map(|i| 3.0 * x[(i, 0)] - x[(i, 1)] + 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng) * (1.0 + x[(i, 0)].abs()))
            .collect();
        for q in [0.05, 0.5, 0.95] {
            let m = fit_quantile_linear(&x, &y, q).unwrap();
            let p = linear(&m).clone();
            let base = mean_pinball_loss(&y, &p.predict(&x), q);
            for delta in [[0.05, 0.0, 0.0], [0.0, 0.05, 0.0], [0.0, 0.0, 0.05], [-0.05, 0.0, 0.0], [0.0, -0.05, 0.0], [0.0, 0.0, -0.05]] {
                let mut alt = p.clone();
                alt.intercept += delta[0];
                alt.coef[0] += delta[1];
                alt.coef[1] += delta[2];
                let l = mean_pinball_loss(&y, &alt.predict(&x), q);
                assert!(l >= base - 1e-6, "q={q}: perturbation {delta:?} improved {base} -> {l}");
            }
        }
    }

    #[test]
    fn nonconvergence_is_reported() {
        let x = DMatrix::from_fn(50, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..50).map(|i| 2.0 * i as f64).collect();
        let cfg = QuantileLinearConfig {
            max_iter: 3,
            window: 1,
            ..QuantileLinearConfig::default()
        };
        match fit_quantile_linear_with(&x, &y, 0.5, &cfg) {
            Err(RegressorError::NonConvergence { final_delta }) => assert!(final_delta > 0.0),
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }
}
