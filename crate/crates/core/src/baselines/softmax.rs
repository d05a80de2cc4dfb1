//! Multinomial softmax ("logistic") regression.
//!
//! Minimizes the summed cross-entropy plus `(l2/2)·‖W‖²` (biases are not
//! penalized) with L-BFGS and a backtracking Armijo line search, starting
//! from zero. Categories absent from the training labels are masked out and
//! get probability zero.

use serde::{Deserialize, Serialize};

use super::encode::EncodedMatrix;
use crate::error::{Error, Result};
use crate::record::PredictionRecord;
use crate::vote::N_CATEGORIES;

const HISTORY: usize = 10;
const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftmaxParams {
    pub l2: f64,
    /// Stop once the largest gradient entry, divided by the number of rows,
    /// falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SoftmaxParams {
    fn default() -> Self {
        SoftmaxParams {
            l2: 1.0,
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxModel {
    /// Row-major `N_CATEGORIES × n_features`.
    pub weights: Vec<f64>,
    pub bias: [f64; N_CATEGORIES],
    pub n_features: usize,
    pub l2: f64,
    /// Categories seen in training; the others are masked.
    pub present: [bool; N_CATEGORIES],
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    /// Objective after each accepted step, starting at the initial point.
    pub objective_trace: Vec<f64>,
}

/// Training problem in flat parameter form: `N_CATEGORIES·F` weights followed
/// by `N_CATEGORIES` biases.
pub struct Objective<'a> {
    x: &'a EncodedMatrix,
    labels: Vec<usize>,
    present: [bool; N_CATEGORIES],
    l2: f64,
}

impl<'a> Objective<'a> {
    pub fn new(x: &'a EncodedMatrix, l2: f64) -> Result<Self> {
        let labels: Vec<usize> = x.require_labels()?.into_iter().map(|v| v.index()).collect();
        let mut present = [false; N_CATEGORIES];
        for &l in &labels {
            present[l] = true;
        }
        Ok(Objective { x, labels, present, l2 })
    }

    pub fn dim(&self) -> usize {
        N_CATEGORIES * self.x.n_cols() + N_CATEGORIES
    }

    fn logits(&self, theta: &[f64], row: &[u32], out: &mut [f64; N_CATEGORIES]) {
        let f = self.x.n_cols();
        let bias = &theta[N_CATEGORIES * f..];
        for c in 0..N_CATEGORIES {
            if !self.present[c] {
                out[c] = f64::NEG_INFINITY;
                continue;
            }
            let w = &theta[c * f..(c + 1) * f];
            out[c] = bias[c] + row.iter().map(|&j| w[j as usize]).sum::<f64>();
        }
    }

    /// Objective value and gradient at `theta`.
    pub fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let f = self.x.n_cols();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut z = [0.0; N_CATEGORIES];
        for (i, &y) in self.labels.iter().enumerate() {
            let row = self.x.row(i);
            self.logits(theta, row, &mut z);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[y];
            for c in 0..N_CATEGORIES {
                if !self.present[c] {
                    continue;
                }
                let r = (z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
                let g = &mut grad[c * f..(c + 1) * f];
                for &j in row {
                    g[j as usize] += r;
                }
                grad[N_CATEGORIES * f + c] += r;
            }
        }
        let weights = &theta[..N_CATEGORIES * f];
        loss += 0.5 * self.l2 * weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in grad[..N_CATEGORIES * f].iter_mut().zip(weights) {
            *g += self.l2 * w;
        }
        loss
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_grad(theta, &mut g)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Fits the model. Non-convergence is reported through `converged`, not as
/// an error.
pub fn fit_softmax(x: &EncodedMatrix, params: &SoftmaxParams) -> Result<SoftmaxModel> {
    if !(params.l2 >= 0.0 && params.l2.is_finite()) || !(params.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid softmax parameters {params:?}")));
    }
    let obj = Objective::new(x, params.l2)?;
    if obj.present.iter().filter(|p| **p).count() < 2 {
        return Err(Error::InvalidArgument(
            "softmax regression needs at least two classes in the training data".into(),
        ));
    }
    let n = obj.dim();
    let mut theta = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut value = obj.value_grad(&theta, &mut grad);
    let mut trace = vec![value];
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut new_theta = vec![0.0; n];
    let mut new_grad = vec![0.0; n];
    let mut iterations = 0;
    let grad_tol = params.tol * x.n_rows().max(1) as f64;
    let mut converged = inf_norm(&grad) < grad_tol;

    while !converged && iterations < params.max_iter {
        iterations += 1;
        // two-loop recursion
        let mut d: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut alpha = vec![0.0; s_hist.len()];
        for k in (0..s_hist.len()).rev() {
            alpha[k] = rho_hist[k] * dot(&s_hist[k], &d);
            for (di, yi) in d.iter_mut().zip(&y_hist[k]) {
                *di -= alpha[k] * yi;
            }
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for k in 0..s_hist.len() {
            let beta = rho_hist[k] * dot(&y_hist[k], &d);
            for (di, si) in d.iter_mut().zip(&s_hist[k]) {
                *di += (alpha[k] - beta) * si;
            }
        }
        let mut slope = dot(&grad, &d);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &d);
        }
        let mut step = if s_hist.is_empty() {
            (1.0 / inf_norm(&grad)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = false;
        let mut new_value = value;
        for _ in 0..MAX_BACKTRACKS {
            for ((t, th), di) in new_theta.iter_mut().zip(&theta).zip(&d) {
                *t = th + step * di;
            }
            new_value = obj.value_grad(&new_theta, &mut new_grad);
            if new_value.is_finite() && new_value <= value + ARMIJO_C1 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || new_value > value {
            break;
        }
        let s: Vec<f64> = new_theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
            rho_hist.push(1.0 / sy);
        }
        std::mem::swap(&mut theta, &mut new_theta);
        std::mem::swap(&mut grad, &mut new_grad);
        value = new_value;
        trace.push(value);
        converged = inf_norm(&grad) < grad_tol;
    }
    if !converged {
        tracing::warn!(iterations, grad_norm = inf_norm(&grad), "softmax regression did not converge");
    }

    let f = x.n_cols();
    let mut bias = [0.0; N_CATEGORIES];
    bias.copy_from_slice(&theta[N_CATEGORIES * f..]);
    theta.truncate(N_CATEGORIES * f);
    Ok(SoftmaxModel {
        weights: theta,
        bias,
        n_features: f,
        l2: params.l2,
        present: obj.present,
        converged,
        iterations,
        grad_norm: inf_norm(&grad),
        objective_trace: trace,
    })
}

impl SoftmaxModel {
    pub fn probs_for_row(&self, row: &[u32]) -> [f64; N_CATEGORIES] {
        let f = self.n_features;
        let mut z = [f64::NEG_INFINITY; N_CATEGORIES];
        for c in 0..N_CATEGORIES {
            if self.present[c] {
                let w = &self.weights[c * f..(c + 1) * f];
                z[c] = self.bias[c] + row.iter().map(|&j| w[j as usize]).sum::<f64>();
            }
        }
        crate::backend::restricted_softmax(&z)
    }

    pub fn predict(&self, x: &EncodedMatrix) -> Result<Vec<PredictionRecord>> {
        if x.n_cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.n_cols(),
            });
        }
        Ok((0..x.n_rows())
            .map(|i| PredictionRecord::from_probs(x.rows[i].clone(), self.probs_for_row(x.row(i))))
            .collect())
    }
}
