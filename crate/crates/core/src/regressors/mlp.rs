//! One-hidden-layer ReLU perceptron trained full-batch with Adam.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, mean, std_dev, ModelParams, Objective, RegressorError, RegressorModel, TrainMeta};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight-decay strength. The penalty `l2_weight / (2 n) * |W|^2` covers
    /// both weight matrices, not the biases.
    pub l2_weight: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 16,
            epochs: 3000,
            learning_rate: 0.01,
            l2_weight: 0.1,
            seed: 0,
        }
    }
}

/// Network weights. Parameters flatten in the order `w1` (hidden × inputs,
/// row-major), `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub inputs: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Network {
    /// Scaled-uniform initialization: `U(±sqrt(6 / fan_in))` for the hidden
    /// layer, `U(±1 / sqrt(fan_in))` for the output, zero biases.
    pub fn init(inputs: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let b1_bound = (6.0 / inputs.max(1) as f64).sqrt();
        let b2_bound = 1.0 / (hidden as f64).sqrt();
        Network {
            inputs,
            hidden,
            w1: (0..inputs * hidden).map(|_| rng.random_range(-b1_bound..b1_bound)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.random_range(-b2_bound..b2_bound)).collect(),
            b2: 0.0,
        }
    }

    pub fn n_params(&self) -> usize {
        self.hidden * (self.inputs + 2) + 1
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend(&self.w1);
        v.extend(&self.b1);
        v.extend(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params());
        let (a, rest) = p.split_at(self.w1.len());
        let (b, rest) = rest.split_at(self.hidden);
        let (c, rest) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(a);
        self.b1.copy_from_slice(b);
        self.w2.copy_from_slice(c);
        self.b2 = rest[0];
    }

    fn preactivation(&self, x: &DMatrix<f64>, i: usize, h: usize) -> f64 {
        let w = &self.w1[h * self.inputs..(h + 1) * self.inputs];
        self.b1[h] + w.iter().enumerate().map(|(j, wj)| wj * x[(i, j)]).sum::<f64>()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.b2 + (0..self.hidden).map(|h| self.w2[h] * self.preactivation(x, i, h).max(0.0)).sum::<f64>())
            .collect()
    }

    /// Smallest |pre-activation| over the batch; finite differences are only
    /// meaningful when this is well away from zero.
    pub fn min_abs_preactivation(&self, x: &DMatrix<f64>) -> f64 {
        (0..x.nrows())
            .flat_map(|i| (0..self.hidden).map(move |h| (i, h)))
            .map(|(i, h)| self.preactivation(x, i, h).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Regularized mean loss and its gradient in flattened-parameter order.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &[f64], objective: Objective, l2_weight: f64) -> (f64, Vec<f64>) {
        let n = x.nrows();
        let (d, hn) = (self.inputs, self.hidden);
        let inv_n = 1.0 / n as f64;
        let mut grad = vec![0.0; self.n_params()];
        let (gw1, rest) = grad.split_at_mut(d * hn);
        let (gb1, rest) = rest.split_at_mut(hn);
        let (gw2, gb2) = rest.split_at_mut(hn);
        let mut z = vec![0.0; hn];
        let mut loss = 0.0;
        for i in 0..n {
            let mut out = self.b2;
            for h in 0..hn {
                z[h] = self.preactivation(x, i, h);
                out += self.w2[h] * z[h].max(0.0);
            }
            loss += objective.loss(y[i], out);
            let dout = objective.gradient(y[i], out) * inv_n;
            if dout == 0.0 {
                continue;
            }
            gb2[0] += dout;
            for h in 0..hn {
                if z[h] <= 0.0 {
                    continue;
                }
                gw2[h] += dout * z[h];
                let dz = dout * self.w2[h];
                gb1[h] += dz;
                for j in 0..d {
                    gw1[h * d + j] += dz * x[(i, j)];
                }
            }
        }
        let decay = l2_weight * inv_n;
        let mut penalty = 0.0;
        for (g, w) in gw1.iter_mut().zip(&self.w1) {
            *g += decay * w;
            penalty += w * w;
        }
        for (g, w) in gw2.iter_mut().zip(&self.w2) {
            *g += decay * w;
            penalty += w * w;
        }
        (loss * inv_n + 0.5 * decay * penalty, grad)
    }
}

/// Fitted network plus the target standardization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub network: Network,
    pub y_shift: f64,
    pub y_scale: f64,
}

impl MlpParams {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.network.forward(x).into_iter().map(|o| self.y_shift + self.y_scale * o).collect()
    }
}

pub fn fit_mlp(x: &DMatrix<f64>, y: &[f64], objective: Objective, config: &MlpConfig) -> Result<RegressorModel, RegressorError> {
    let objective = objective.validate()?;
    check_training(x, y, 2)?;
    if config.hidden == 0 || !(config.learning_rate > 0.0) || config.l2_weight < 0.0 {
        return Err(RegressorError::InvalidConfig("hidden width and learning rate must be positive".into()));
    }
    let (n, d) = x.shape();
    let y_shift = mean(y);
    let y_scale = match std_dev(y) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let t: Vec<f64> = y.iter().map(|v| (v - y_shift) / y_scale).collect();

    let mut net = Network::init(d, config.hidden, config.seed);
    let mut p = net.to_flat();
    let mut m = vec![0.0; p.len()];
    let mut v = vec![0.0; p.len()];
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut loss = f64::NAN;
    for epoch in 0..config.epochs {
        let (l, g) = net.loss_and_gradient(x, &t, objective, config.l2_weight);
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(RegressorError::NonFiniteLoss { epoch });
        }
        loss = l;
        let step = (epoch + 1) as i32;
        let c1 = 1.0 - b1.powi(step);
        let c2 = 1.0 - b2.powi(step);
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            p[k] -= config.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
        net.set_flat(&p);
    }
    let params = MlpParams {
        network: net,
        y_shift,
        y_scale,
    };
    let pred = params.predict(x);
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(RegressorError::NonFiniteLoss { epoch: config.epochs });
    }
    let _ = loss;
    Ok(RegressorModel {
        objective,
        train_meta: TrainMeta {
            n_train: n,
            d_features: d,
            seed: config.seed,
            final_train_loss: objective.mean_loss(y, &pred),
            iterations: config.epochs,
            converged: true,
        },
        params: ModelParams::Mlp(params),
    })
}
