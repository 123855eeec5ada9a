//! Gaussian-process regression with a squared-exponential (RBF) kernel.
//!
//! `k(a, b) = signal_variance * exp(-|a - b|^2 / (2 length_scale^2))`, plus
//! `noise_variance + jitter` on the diagonal of the training covariance. The
//! prior mean is the training-target mean. Hyperparameters maximize the log
//! marginal likelihood by Adam ascent in log space from several starts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, check_width, mean, std_dev, ModelKind, ModelParams, Objective, RegressorError, RegressorModel, TrainMeta};
use crate::rng::rng_from_seed;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Diagonal jitter, relative to the target variance.
    pub jitter: f64,
    /// Fix the noise variance (target units) instead of optimizing it.
    pub fixed_noise: Option<f64>,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            restarts: 5,
            steps: 200,
            learning_rate: 0.1,
            jitter: 1e-8,
            fixed_noise: None,
            seed: 0,
        }
    }
}

/// Fitted GP posterior. Hyperparameters are in target units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpFit {
    pub kernel_length_scale: f64,
    pub kernel_signal_variance: f64,
    pub noise_variance: f64,
    pub jitter_variance: f64,
    pub prior_mean: f64,
    pub n_train: usize,
    pub d_features: usize,
    /// Training inputs, row-major.
    pub x_train: Vec<f64>,
    /// `K^-1 (y - prior_mean)`.
    pub alpha: Vec<f64>,
    pub log_marginal_likelihood: f64,
    #[serde(skip)]
    chol: Option<Cholesky<f64, Dyn>>,
}

impl PartialEq for GpFit {
    fn eq(&self, other: &Self) -> bool {
        self.kernel_length_scale == other.kernel_length_scale
            && self.kernel_signal_variance == other.kernel_signal_variance
            && self.noise_variance == other.noise_variance
            && self.jitter_variance == other.jitter_variance
            && self.prior_mean == other.prior_mean
            && self.x_train == other.x_train
            && self.alpha == other.alpha
    }
}

/// Rejects every objective except squared error; GP quantiles come from the posterior.
pub fn check_objective(objective: Objective) -> Result<(), RegressorError> {
    match objective {
        Objective::Mse => Ok(()),
        other => Err(RegressorError::UnsupportedObjective {
            kind: ModelKind::GaussianProcess,
            objective: other,
        }),
    }
}

fn sq_dist_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = (0..x.ncols()).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
            d[(i, j)] = s;
            d[(j, i)] = s;
        }
    }
    d
}

/// Log marginal likelihood and its gradient in (log ℓ, log σf², log σn²),
/// for centred targets `t`. `None` when the covariance is not positive definite.
fn lml_and_grad(dist: &DMatrix<f64>, t: &DVector<f64>, log_params: [f64; 3], jitter: f64) -> Option<(f64, [f64; 3])> {
    let n = t.len();
    let ell2 = (2.0 * log_params[0]).exp();
    let sf2 = log_params[1].exp();
    let sn2 = log_params[2].exp();
    let kf = dist.map(|d| sf2 * (-0.5 * d / ell2).exp());
    let mut k = kf.clone();
    for i in 0..n {
        k[(i, i)] += sn2 + jitter;
    }
    let chol = Cholesky::new(k)?;
    let alpha = chol.solve(t);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * t.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LOG_2PI;
    let kinv = chol.inverse();
    let mut g = [0.0; 3];
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            g[0] += w * kf[(i, j)] * dist[(i, j)] / ell2;
            g[1] += w * kf[(i, j)];
        }
        g[2] += (alpha[i] * alpha[i] - kinv[(i, i)]) * sn2;
    }
    Some((lml, [0.5 * g[0], 0.5 * g[1], 0.5 * g[2]]))
}

/// Log marginal likelihood of `(x, y)` under the given hyperparameters (target units).
pub fn log_marginal_likelihood(x: &DMatrix<f64>, y: &[f64], length_scale: f64, signal_variance: f64, noise_variance: f64) -> Option<f64> {
    let m = mean(y);
    let t = DVector::from_iterator(y.len(), y.iter().map(|v| v - m));
    lml_and_grad(
        &sq_dist_matrix(x),
        &t,
        [length_scale.ln(), signal_variance.ln(), noise_variance.max(1e-300).ln()],
        0.0,
    )
    .map(|(l, _)| l)
}

const LN_10: f64 = std::f64::consts::LN_10;
/// Bounds on (log ℓ, log σf², log σn²) in standardized units.
const LOG_BOUNDS: [(f64, f64); 3] = [(-2.0 * LN_10, 3.0 * LN_10), (-4.0 * LN_10, 3.0 * LN_10), (-6.0 * LN_10, LN_10)];

/// Fits hyperparameters by maximizing the log marginal likelihood.
pub fn fit_gp(x: &DMatrix<f64>, y: &[f64], config: &GpConfig) -> Result<GpFit, RegressorError> {
    check_training(x, y, 2)?;
    if config.restarts == 0 {
        return Err(RegressorError::InvalidConfig("GP needs at least one start".into()));
    }
    let n = y.len();
    let d = x.ncols();
    let y_mean = mean(y);
    let scale = match std_dev(y) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let t = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / scale));
    let dist = sq_dist_matrix(x);
    let fixed_log_noise = config.fixed_noise.map(|v| (v / (scale * scale)).max(1e-300).ln());

    let mut rng = rng_from_seed(config.seed);
    let root_d = (d.max(1) as f64).sqrt();
    let mut best: Option<(f64, [f64; 3])> = None;
    for restart in 0..config.restarts {
        let mut p = if restart == 0 {
            [root_d.ln(), 0.0, 0.1f64.ln()]
        } else {
            [
                rng.random_range((0.3 * root_d).ln()..(3.0 * root_d).ln()),
                rng.random_range(0.3f64.ln()..3.0f64.ln()),
                rng.random_range(1e-3f64.ln()..0.5f64.ln()),
            ]
        };
        if let Some(v) = fixed_log_noise {
            p[2] = v;
        }
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        for step in 0..=config.steps {
            let Some((lml, g)) = lml_and_grad(&dist, &t, p, config.jitter) else {
                break;
            };
            if best.is_none_or(|(b, _)| lml > b) {
                best = Some((lml, p));
            }
            if step == config.steps {
                break;
            }
            // Adam ascent on the log-parameters.
            let (b1, b2) = (0.9, 0.999);
            let tstep = (step + 1) as i32;
            for k in 0..3 {
                if k == 2 && fixed_log_noise.is_some() {
                    continue;
                }
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / (1.0 - b1.powi(tstep));
                let vh = v[k] / (1.0 - b2.powi(tstep));
                p[k] = (p[k] + config.learning_rate * mh / (vh.sqrt() + 1e-8)).clamp(LOG_BOUNDS[k].0, LOG_BOUNDS[k].1);
            }
        }
    }

    let (_, p) = best.ok_or(RegressorError::SingularKernel)?;
    let s2 = scale * scale;
    GpFit::build(
        x,
        y,
        p[0].exp(),
        p[1].exp() * s2,
        config.fixed_noise.unwrap_or(p[2].exp() * s2),
        config.jitter * s2,
    )
}

impl GpFit {
    /// Posterior for fixed hyperparameters (target units), no optimization.
    pub fn with_hyperparameters(
        x: &DMatrix<f64>,
        y: &[f64],
        length_scale: f64,
        signal_variance: f64,
        noise_variance: f64,
    ) -> Result<GpFit, RegressorError> {
        check_training(x, y, 1)?;
        if !(length_scale > 0.0 && signal_variance > 0.0 && noise_variance >= 0.0) {
            return Err(RegressorError::InvalidConfig("GP hyperparameters must be positive".into()));
        }
        let jitter = 1e-8 * signal_variance;
        GpFit::build(x, y, length_scale, signal_variance, noise_variance, jitter)
    }

    fn build(x: &DMatrix<f64>, y: &[f64], length_scale: f64, signal_variance: f64, noise_variance: f64, jitter: f64) -> Result<GpFit, RegressorError> {
        let prior_mean = mean(y);
        let mut fit = GpFit {
            kernel_length_scale: length_scale,
            kernel_signal_variance: signal_variance,
            noise_variance,
            jitter_variance: jitter,
            prior_mean,
            n_train: x.nrows(),
            d_features: x.ncols(),
            x_train: (0..x.nrows()).flat_map(|i| (0..x.ncols()).map(move |j| x[(i, j)])).collect(),
            alpha: Vec::new(),
            log_marginal_likelihood: f64::NAN,
            chol: None,
        };
        let chol = match fit.factor() {
            Some(c) => c,
            None => {
                // Noise floor, then one retry.
                fit.jitter_variance = jitter.max(1e-6 * signal_variance);
                fit.factor().ok_or(RegressorError::SingularKernel)?
            }
        };
        let t = DVector::from_iterator(y.len(), y.iter().map(|v| v - prior_mean));
        let alpha = chol.solve(&t);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        fit.log_marginal_likelihood = -0.5 * t.dot(&alpha) - 0.5 * log_det - 0.5 * y.len() as f64 * LOG_2PI;
        fit.alpha = alpha.iter().copied().collect();
        fit.chol = Some(chol);
        Ok(fit)
    }

    fn train_row(&self, i: usize) -> &[f64] {
        &self.x_train[i * self.d_features..(i + 1) * self.d_features]
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        self.kernel_signal_variance * (-0.5 * d2 / (self.kernel_length_scale * self.kernel_length_scale)).exp()
    }

    fn factor(&self) -> Option<Cholesky<f64, Dyn>> {
        let n = self.n_train;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel(self.train_row(i), self.train_row(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += self.noise_variance + self.jitter_variance;
        }
        Cholesky::new(k)
    }

    /// Rebuilds the cached factorization after deserialization.
    pub(crate) fn refactor(&mut self) -> Result<(), RegressorError> {
        self.chol = Some(self.factor().ok_or(RegressorError::SingularKernel)?);
        Ok(())
    }

    /// Posterior mean and latent-function variance (clamped at 0) per row.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>), RegressorError> {
        check_width(self.d_features, x)?;
        let chol = self.chol.as_ref().ok_or(RegressorError::SingularKernel)?;
        let mut means = Vec::with_capacity(x.nrows());
        let mut vars = Vec::with_capacity(x.nrows());
        let mut row = vec![0.0; self.d_features];
        for i in 0..x.nrows() {
            for (j, r) in row.iter_mut().enumerate() {
                *r = x[(i, j)];
            }
            let kstar = DVector::from_iterator(self.n_train, (0..self.n_train).map(|k| self.kernel(&row, self.train_row(k))));
            means.push(self.prior_mean + kstar.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>());
            let v = chol.l().solve_lower_triangular(&kstar).expect("Cholesky factor is non-singular");
            vars.push((self.kernel_signal_variance - v.norm_squared()).max(0.0));
        }
        Ok((means, vars))
    }

    pub fn into_model(self) -> RegressorModel {
        let meta = TrainMeta {
            n_train: self.n_train,
            d_features: self.d_features,
            seed: 0,
            final_train_loss: -self.log_marginal_likelihood,
            iterations: 0,
            converged: true,
        };
        RegressorModel {
            objective: Objective::Mse,
            params: ModelParams::GaussianProcess(self),
            train_meta: meta,
        }
    }
}

/// Posterior mean and variance for each row of `x`.
pub fn gp_predict(model: &GpFit, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>), RegressorError> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn interpolates_without_noise() {
        let xs = [0.0, 0.7, 1.5, 2.2, 3.0];
        let ys = [1.0, -0.5, 2.0, 0.3, 1.1];
        let cfg = GpConfig {
            fixed_noise: Some(0.0),
            ..GpConfig::default()
        };
        let fit = fit_gp(&col(&xs), &ys, &cfg).unwrap();
        let (mu, _) = fit.predict(&col(&xs)).unwrap();
        for (m, y) in mu.iter().zip(&ys) {
            assert!((m - y).abs() < 1e-6, "{m} vs {y}");
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let xs = [0.0, 0.5, 1.0, 1.5];
        let ys = [3.0, 4.0, 2.0, 5.0];
        let fit = GpFit::with_hyperparameters(&col(&xs), &ys, 0.5, 2.0, 0.01).unwrap();
        let (mu, var) = fit.predict(&col(&[100.0])).unwrap();
        assert!((mu[0] - 3.5).abs() <= 0.01 * 3.5);
        assert!((var[0] - 2.0).abs() <= 0.01 * 2.0);
    }

    #[test]
    fn single_point_zero_noise_has_zero_variance() {
        let fit = GpFit::with_hyperparameters(&col(&[1.0]), &[7.0], 1.0, 1.0, 0.0).unwrap();
        let (mu, var) = fit.predict(&col(&[1.0])).unwrap();
        assert!((mu[0] - 7.0).abs() < 1e-9);
        assert!(var[0] >= 0.0 && var[0] < 1e-7);
    }

    #[test]
    fn empty_query() {
        let fit = GpFit::with_hyperparameters(&col(&[1.0, 2.0]), &[1.0, 2.0], 1.0, 1.0, 0.1).unwrap();
        let (m, v) = gp_predict(&fit, &DMatrix::zeros(0, 1)).unwrap();
        assert!(m.is_empty() && v.is_empty());
        assert!(matches!(gp_predict(&fit, &DMatrix::zeros(1, 2)), Err(RegressorError::DimensionMismatch { .. })));
    }

    #[test]
    fn midpoint_variance_exceeds_training_points() {
        let fit = GpFit::with_hyperparameters(&col(&[0.0, 2.0]), &[1.0, 1.0], 1.0, 1.0, 0.0).unwrap();
        let (_, v) = fit.predict(&col(&[0.0, 1.0, 2.0])).unwrap();
        // Direct evaluation: σ²(1) = 1 - k*ᵀ K⁻¹ k* with k* = e^{-1/2}(1,1), K = [[1, e^{-2}], [e^{-2}, 1]].
        let k = (-0.5f64).exp();
        let c = (-2.0f64).exp();
        let oracle = 1.0 - 2.0 * k * k / (1.0 + c);
        assert!((v[1] - oracle).abs() < 1e-6);
        assert!(v[1] > v[0] && v[1] > v[2]);
    }

    #[test]
    fn optimum_beats_random_hyperparameters() {
        let mut rng = rng_from_seed(21);
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin() + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let x = col(&xs);
        let fit = fit_gp(&x, &ys, &GpConfig { seed: 4, ..GpConfig::default() }).unwrap();
        let best = fit.log_marginal_likelihood;
        let recomputed = log_marginal_likelihood(&x, &ys, fit.kernel_length_scale, fit.kernel_signal_variance, fit.noise_variance + fit.jitter_variance).unwrap();
        assert!((best - recomputed).abs() < 1e-6 * best.abs().max(1.0));
        for _ in 0..10 {
            let l = rng.random_range(0.05f64.ln()..5f64.ln()).exp();
            let s = rng.random_range(0.1f64.ln()..5f64.ln()).exp();
            let nv = rng.random_range(1e-4f64.ln()..1f64.ln()).exp();
            let other = log_marginal_likelihood(&x, &ys, l, s, nv).unwrap();
            assert!(best >= other, "random draw ({l}, {s}, {nv}) gave {other} > {best}");
        }
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let x = DMatrix::from_fn(12, 2, |i, j| ((i * 5 + j * 7) % 13) as f64 / 4.0);
        let t = DVector::from_fn(12, |i, _| ((i * 3) % 7) as f64 / 3.0 - 1.0);
        let dist = sq_dist_matrix(&x);
        let p = [0.2, -0.3, -1.5];
        let (_, g) = lml_and_grad(&dist, &t, p, 1e-8).unwrap();
        for k in 0..3 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            let fd = (lml_and_grad(&dist, &t, a, 1e-8).unwrap().0 - lml_and_grad(&dist, &t, b, 1e-8).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * fd.abs().max(1.0), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn adding_points_never_increases_variance() {
        let mut rng = rng_from_seed(8);
        let queries: Vec<f64> = (0..25).map(|i| -1.0 + i as f64 * 0.25).collect();
        let mut xs = vec![0.0];
        let mut ys = vec![0.0];
        let mut prev = GpFit::with_hyperparameters(&col(&xs), &ys, 0.8, 1.5, 0.05).unwrap().predict(&col(&queries)).unwrap().1;
        for _ in 0..8 {
            xs.push(rng.random_range(-1.0..5.0));
            ys.push(rng.random_range(-1.0..1.0));
            let next = GpFit::with_hyperparameters(&col(&xs), &ys, 0.8, 1.5, 0.05).unwrap().predict(&col(&queries)).unwrap().1;
            for (a, b) in next.iter().zip(&prev) {
                assert!(*a <= b + 1e-9);
            }
            prev = next;
        }
    }

    #[test]
    fn needs_two_rows() {
        assert!(matches!(
            fit_gp(&col(&[1.0]), &[1.0], &GpConfig::default()),
            Err(RegressorError::TooFewRows { need: 2, got: 1 })
        ));
    }
}
