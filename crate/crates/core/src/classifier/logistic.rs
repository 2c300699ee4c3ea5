use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{logistic_loss, sigmoid, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// L2 penalty on the standardized weights (the bias is not penalized).
    pub lambda: f64,
    /// Stop once the Euclidean norm of the objective gradient drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Loss weight of low-quality (positive) segments.
    pub positive_weight: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lambda: 1.0,
            tolerance: 1e-6,
            max_iterations: 10_000,
            positive_weight: 1.0,
        }
    }
}

/// L2-regularized logistic regression on standardized columns.
///
/// Dropped (constant) columns keep weight 0 and scale 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub lambda: f64,
}

impl LogisticModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        let mut m = self.bias;
        for (((&w, &v), &mean), &scale) in self.weights.iter().zip(x).zip(&self.means).zip(&self.scales) {
            if w != 0.0 {
                m += w * (v - mean) / scale;
            }
        }
        m
    }

    pub fn num_features(&self) -> usize {
        self.weights.len()
    }
}

/// The training objective over standardized active columns:
/// `sum_i c_i * loss(y_i, b + w.z_i) + lambda/2 * |w|^2`, with parameters
/// laid out as `[w_0 .. w_{d-1}, b]`.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    dim: usize,
    z: Vec<f64>,
    y: Vec<bool>,
    c: Vec<f64>,
    lambda: f64,
}

impl LogisticObjective {
    pub fn new(dim: usize, z: Vec<f64>, y: Vec<bool>, c: Vec<f64>, lambda: f64) -> Self {
        debug_assert_eq!(z.len(), dim * y.len());
        LogisticObjective { dim, z, y, c, lambda }
    }

    pub fn num_params(&self) -> usize {
        self.dim + 1
    }

    fn margin(&self, params: &[f64], i: usize) -> f64 {
        let row = &self.z[i * self.dim..(i + 1) * self.dim];
        params[self.dim] + row.iter().zip(params).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let data: f64 = (0..self.y.len())
            .map(|i| self.c[i] * logistic_loss(self.margin(params, i), self.y[i]))
            .sum();
        let reg: f64 = params[..self.dim].iter().map(|w| w * w).sum();
        data + 0.5 * self.lambda * reg
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim + 1];
        for i in 0..self.y.len() {
            let r = self.c[i] * (sigmoid(self.margin(params, i)) - if self.y[i] { 1.0 } else { 0.0 });
            let row = &self.z[i * self.dim..(i + 1) * self.dim];
            for (gj, zj) in g.iter_mut().zip(row) {
                *gj += r * zj;
            }
            g[self.dim] += r;
        }
        for j in 0..self.dim {
            g[j] += self.lambda * params[j];
        }
        g
    }

    fn hessian(&self, params: &[f64]) -> DMatrix<f64> {
        let n = self.dim + 1;
        let mut h = DMatrix::zeros(n, n);
        let mut aug = vec![1.0; n];
        for i in 0..self.y.len() {
            let p = sigmoid(self.margin(params, i));
            let s = self.c[i] * p * (1.0 - p);
            if s == 0.0 {
                continue;
            }
            aug[..self.dim].copy_from_slice(&self.z[i * self.dim..(i + 1) * self.dim]);
            for a in 0..n {
                let sa = s * aug[a];
                for b in a..n {
                    h[(a, b)] += sa * aug[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 0..self.dim {
            h[(j, j)] += self.lambda;
        }
        h
    }

    /// Damped Newton iterations with Armijo backtracking. Returns the
    /// parameters and the final gradient norm.
    pub fn minimize(&self, tolerance: f64, max_iterations: usize) -> (Vec<f64>, f64) {
        let n = self.num_params();
        let mut params = vec![0.0; n];
        let mut value = self.value(&params);
        let mut grad = self.gradient(&params);
        let mut gnorm = norm(&grad);
        for _ in 0..max_iterations {
            if gnorm < tolerance {
                break;
            }
            let mut h = self.hessian(&params);
            let g = DVector::from_column_slice(&grad);
            let mut ridge = 0.0;
            let step = loop {
                if let Some(ch) = h.clone().cholesky() {
                    break ch.solve(&g);
                }
                // Only reachable when every sample is saturated; fall back
                // towards gradient descent.
                ridge = if ridge == 0.0 { 1e-10 } else { ridge * 10.0 };
                for a in 0..n {
                    h[(a, a)] += ridge;
                }
            };
            let slope: f64 = -g.dot(&step);
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p - t * s).collect();
                let v = self.value(&cand);
                if v <= value + 1e-4 * t * slope {
                    params = cand;
                    value = v;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            grad = self.gradient(&params);
            gnorm = norm(&grad);
            if !accepted {
                // Line search stalled at machine precision.
                break;
            }
        }
        (params, gnorm)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fits the model; also returns the final objective gradient norm.
pub fn train_logistic(data: &Dataset, config: &LogisticConfig) -> Result<(LogisticModel, f64)> {
    // written so NaN fails too
    let valid = config.lambda >= 0.0 && config.positive_weight > 0.0;
    if !valid {
        return Err(Error::Config(format!(
            "invalid logistic configuration: lambda {} positive_weight {}",
            config.lambda, config.positive_weight
        )));
    }
    data.require_both_classes(2)?;
    let d = data.num_features;
    let n = data.len() as f64;

    let mut means = vec![0.0; d];
    let mut scales = vec![1.0; d];
    let mut active = Vec::new();
    for j in 0..d {
        let mean = (0..data.len()).map(|i| data.row(i)[j]).sum::<f64>() / n;
        let var = (0..data.len())
            .map(|i| (data.row(i)[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        means[j] = mean;
        if std > 1e-12 * mean.abs().max(1.0) {
            scales[j] = std;
            active.push(j);
        }
    }

    let mut z = Vec::with_capacity(data.len() * active.len());
    for i in 0..data.len() {
        let row = data.row(i);
        z.extend(active.iter().map(|&j| (row[j] - means[j]) / scales[j]));
    }
    let c = data
        .labels
        .iter()
        .map(|&y| if y { config.positive_weight } else { 1.0 })
        .collect();
    let objective = LogisticObjective::new(active.len(), z, data.labels.clone(), c, config.lambda);
    let (params, gnorm) = objective.minimize(config.tolerance, config.max_iterations);

    let mut weights = vec![0.0; d];
    for (k, &j) in active.iter().enumerate() {
        weights[j] = params[k];
    }
    Ok((
        LogisticModel {
            weights,
            bias: params[active.len()],
            means,
            scales,
            lambda: config.lambda,
        },
        gnorm,
    ))
}
