//! Gradient-boosted regression trees under squared or pinball loss.
//!
//! Each round grows a depth-limited tree on the negative gradient of the
//! objective (variance-reduction splits), then sets every leaf to the value
//! that minimizes the objective over the residuals that fall in it: the mean
//! for squared error, the empirical q-quantile for pinball loss.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_training, empirical_quantile, mean, ModelParams, Objective, RegressorError, RegressorModel, TrainMeta};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

/// Regression tree stored as parallel arrays. `feature[i] < 0` marks a leaf.
/// Internal nodes send `x[feature] <= threshold` to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

impl Tree {
    fn leaf_only(value: f64) -> Self {
        Tree {
            feature: vec![-1],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![value],
        }
    }

    fn push_node(&mut self) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(0.0);
        self.feature.len() - 1
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: impl Fn(usize) -> f64) -> usize {
        let mut node = 0;
        while self.feature[node] >= 0 {
            node = if row(self.feature[node] as usize) <= self.threshold[node] {
                self.left[node] as usize
            } else {
                self.right[node] as usize
            };
        }
        node
    }

    pub fn n_leaves(&self) -> usize {
        self.feature.iter().filter(|&&f| f < 0).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub base_score: f64,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub trees: Vec<Tree>,
}

impl GbtParams {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| {
                self.base_score
                    + self
                        .trees
                        .iter()
                        .map(|t| self.learning_rate * t.value[t.leaf_index(|j| x[(i, j)])])
                        .sum::<f64>()
            })
            .collect()
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

pub fn fit_gbt(x: &DMatrix<f64>, y: &[f64], objective: Objective, config: &GbtConfig) -> Result<RegressorModel, RegressorError> {
    let objective = objective.validate()?;
    check_training(x, y, 2)?;
    if config.min_samples_leaf == 0 || !(config.learning_rate > 0.0) {
        return Err(RegressorError::InvalidConfig(
            "min_samples_leaf and learning_rate must be positive".into(),
        ));
    }
    let (n, d) = x.shape();
    let base_score = match objective {
        Objective::Mse => mean(y),
        Objective::Pinball { q } => empirical_quantile(y, q),
    };

    // Per-feature sample order, ascending by value then index.
    let order: Vec<Vec<u32>> = (0..d)
        .map(|j| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x[(a as usize, j)].total_cmp(&x[(b as usize, j)]));
            idx
        })
        .collect();

    let mut f = vec![base_score; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut target = vec![0.0; n];
    let mut node_of = vec![0u32; n];
    for _ in 0..config.n_trees {
        for i in 0..n {
            target[i] = -objective.gradient(y[i], f[i]);
        }
        let tree = grow_tree(x, &order, &target, &mut node_of, config);
        let tree = set_leaf_values(tree, &node_of, y, &f, objective);
        for i in 0..n {
            f[i] += config.learning_rate * tree.value[node_of[i] as usize];
        }
        trees.push(tree);
    }

    Ok(RegressorModel {
        objective,
        train_meta: TrainMeta {
            n_train: n,
            d_features: d,
            seed: config.seed,
            final_train_loss: objective.mean_loss(y, &f),
            iterations: config.n_trees,
            converged: true,
        },
        params: ModelParams::GradientBoostedTrees(GbtParams {
            base_score,
            learning_rate: config.learning_rate,
            max_depth: config.max_depth,
            trees,
        }),
    })
}

/// Grows the tree structure level by level. On return `node_of[i]` is the
/// leaf holding sample `i`.
fn grow_tree(x: &DMatrix<f64>, order: &[Vec<u32>], target: &[f64], node_of: &mut [u32], config: &GbtConfig) -> Tree {
    let n = target.len();
    let min_leaf = config.min_samples_leaf;
    let mut tree = Tree::leaf_only(0.0);
    node_of.iter_mut().for_each(|v| *v = 0);

    let mut frontier: Vec<usize> = vec![0];
    for _depth in 0..config.max_depth {
        // Slot of each frontier node, indexed by node id.
        let mut slot = vec![usize::MAX; tree.feature.len()];
        for (s, &node) in frontier.iter().enumerate() {
            slot[node] = s;
        }
        let m = frontier.len();
        let mut count = vec![0usize; m];
        let mut sum = vec![0.0; m];
        for i in 0..n {
            let s = slot[node_of[i] as usize];
            if s != usize::MAX {
                count[s] += 1;
                sum[s] += target[i];
            }
        }
        let parent_score: Vec<f64> = (0..m).map(|s| if count[s] > 0 { sum[s] * sum[s] / count[s] as f64 } else { 0.0 }).collect();
        let mut best: Vec<Option<Candidate>> = (0..m).map(|_| None).collect();

        let mut left_count = vec![0usize; m];
        let mut left_sum = vec![0.0; m];
        let mut last = vec![f64::NAN; m];
        for (j, ord) in order.iter().enumerate() {
            left_count.iter_mut().for_each(|c| *c = 0);
            left_sum.iter_mut().for_each(|c| *c = 0.0);
            last.iter_mut().for_each(|c| *c = f64::NAN);
            for &i in ord {
                let i = i as usize;
                let s = slot[node_of[i] as usize];
                if s == usize::MAX || count[s] < 2 * min_leaf {
                    continue;
                }
                let v = x[(i, j)];
                let nl = left_count[s];
                if nl >= min_leaf && count[s] - nl >= min_leaf && v > last[s] {
                    let sl = left_sum[s];
                    let sr = sum[s] - sl;
                    let gain = sl * sl / nl as f64 + sr * sr / (count[s] - nl) as f64 - parent_score[s];
                    let floor = 1e-12 * (1.0 + parent_score[s].abs());
                    if gain > floor && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                        best[s] = Some(Candidate {
                            gain,
                            feature: j,
                            threshold: 0.5 * (last[s] + v),
                        });
                    }
                }
                left_count[s] += 1;
                left_sum[s] += target[i];
                last[s] = v;
            }
        }

        let mut next = Vec::new();
        let mut children = vec![(0u32, 0u32); m];
        for (s, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let node = frontier[s];
                let l = tree.push_node();
                let r = tree.push_node();
                tree.feature[node] = c.feature as i32;
                tree.threshold[node] = c.threshold;
                tree.left[node] = l as u32;
                tree.right[node] = r as u32;
                children[s] = (l as u32, r as u32);
                next.push(l);
                next.push(r);
            }
        }
        if next.is_empty() {
            break;
        }
        for i in 0..n {
            let s = slot[node_of[i] as usize];
            if s == usize::MAX {
                continue;
            }
            if let Some(c) = &best[s] {
                node_of[i] = if x[(i, c.feature)] <= c.threshold { children[s].0 } else { children[s].1 };
            }
        }
        frontier = next;
    }
    tree
}

fn set_leaf_values(mut tree: Tree, node_of: &[u32], y: &[f64], f: &[f64], objective: Objective) -> Tree {
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); tree.feature.len()];
    for (i, &node) in node_of.iter().enumerate() {
        residuals[node as usize].push(y[i] - f[i]);
    }
    for (node, r) in residuals.iter().enumerate() {
        if tree.feature[node] >= 0 || r.is_empty() {
            continue;
        }
        tree.value[node] = match objective {
            Objective::Mse => mean(r),
            Objective::Pinball { q } => empirical_quantile(r, q),
        };
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn params(m: &RegressorModel) -> &GbtParams {
        match &m.params {
            ModelParams::GradientBoostedTrees(p) => p,
            _ => unreachable!(),
        }
    }

    fn sample(seed: u64, n: usize) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(0.0..1.0));
        let y = (0..n)
            .map(|i| {
                let step = if x[(i, 0)] < 0.3 {
                    1.0
                } else if x[(i, 0)] < 0.7 {
                    4.0
                } else {
                    2.0
                };
                step + if x[(i, 1)] > 0.5 { 3.0 } else { 0.0 }
            })
            .collect();
        (x, y)
    }

    #[test]
    fn zero_trees_predict_base_score() {
        let (x, y) = sample(1, 40);
        let cfg = GbtConfig {
            n_trees: 0,
            ..GbtConfig::default()
        };
        let m = fit_gbt(&x, &y, Objective::Mse, &cfg).unwrap();
        let mu = y.iter().sum::<f64>() / y.len() as f64;
        assert!(m.predict(&x).unwrap().iter().all(|&p| (p - mu).abs() < 1e-12));

        let m = fit_gbt(&x, &y, Objective::pinball(0.9).unwrap(), &cfg).unwrap();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        let q90 = sorted[(0.9f64 * 40.0).ceil() as usize - 1];
        assert!(m.predict(&x).unwrap().iter().all(|&p| p == q90));
    }

    #[test]
    fn fits_piecewise_constant_target() {
        let (x, y) = sample(2, 300);
        let cfg = GbtConfig {
            n_trees: 200,
            ..GbtConfig::default()
        };
        let m = fit_gbt(&x, &y, Objective::Mse, &cfg).unwrap();
        let pred = m.predict(&x).unwrap();
        let rmse = (pred.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
        let range = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
        assert!(rmse < 0.05 * range, "rmse {rmse}, range {range}");
    }

    #[test]
    fn prediction_is_base_plus_scaled_leaf_sum() {
        let (x, y) = sample(3, 80);
        let m = fit_gbt(&x, &y, Objective::pinball(0.3).unwrap(), &GbtConfig::default()).unwrap();
        let p = params(&m);
        let pred = m.predict(&x).unwrap();
        for i in 0..x.nrows() {
            // Walk every tree by hand.
            let mut total = p.base_score;
            for t in &p.trees {
                let mut node = 0usize;
                loop {
                    if t.feature[node] < 0 {
                        break;
                    }
                    let f = t.feature[node] as usize;
                    node = if x[(i, f)] <= t.threshold[node] { t.left[node] } else { t.right[node] } as usize;
                }
                total += t.value[node] * p.learning_rate;
            }
            assert!((total - pred[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn trees_respect_depth_and_leaf_size() {
        let (x, y) = sample(4, 60);
        let cfg = GbtConfig {
            n_trees: 10,
            max_depth: 2,
            min_samples_leaf: 5,
            ..GbtConfig::default()
        };
        let m = fit_gbt(&x, &y, Objective::Mse, &cfg).unwrap();
        for t in &params(&m).trees {
            assert!(t.n_leaves() <= 4);
            let mut counts = vec![0; t.feature.len()];
            for i in 0..x.nrows() {
                counts[t.leaf_index(|j| x[(i, j)])] += 1;
            }
            for (node, c) in counts.iter().enumerate() {
                if t.feature[node] < 0 && *c > 0 {
                    assert!(*c >= 5);
                }
            }
        }
    }

    #[test]
    fn split_ties_prefer_lower_feature_index() {
        // Columns 0 and 1 are identical, so every split scores the same on both.
        let x = DMatrix::from_fn(20, 2, |i, _| i as f64);
        let y: Vec<f64> = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let cfg = GbtConfig {
            n_trees: 1,
            max_depth: 1,
            ..GbtConfig::default()
        };
        let m = fit_gbt(&x, &y, Objective::Mse, &cfg).unwrap();
        let t = &params(&m).trees[0];
        assert_eq!(t.feature[0], 0);
        assert_eq!(t.threshold[0], 9.5);
    }

    #[test]
    fn quantile_models_bracket_the_data() {
        let mut rng = rng_from_seed(6);
        let n = 400;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| 5.0 * x[(i, 0)] + rng.random_range(-1.0..1.0)).collect();
        let lo = fit_gbt(&x, &y, Objective::pinball(0.1).unwrap(), &GbtConfig::default()).unwrap();
        let hi = fit_gbt(&x, &y, Objective::pinball(0.9).unwrap(), &GbtConfig::default()).unwrap();
        let (pl, ph) = (lo.predict(&x).unwrap(), hi.predict(&x).unwrap());
        let below = y.iter().zip(&pl).filter(|(a, b)| a < b).count() as f64 / n as f64;
        let above = y.iter().zip(&ph).filter(|(a, b)| a > b).count() as f64 / n as f64;
        assert!((below - 0.1).abs() < 0.05, "below {below}");
        assert!((above - 0.1).abs() < 0.05, "above {above}");
    }

    #[test]
    fn deterministic() {
        let (x, y) = sample(5, 50);
        let a = fit_gbt(&x, &y, Objective::Mse, &GbtConfig::default()).unwrap();
        let b = fit_gbt(&x, &y, Objective::Mse, &GbtConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
