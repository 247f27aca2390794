//! Soft-margin RBF SVM trained by SMO with maximal-violating-pair selection.

use serde::{Deserialize, Serialize};

use crate::features::FEATURE_DIM;

type Row = [f64; FEATURE_DIM];

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub gamma: f64,
    pub bias: f64,
    pub support: Vec<Row>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
}

pub(crate) fn rbf(gamma: f64, a: &Row, b: &Row) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// `1 / (d * var)` with `var` the variance of every entry of `x`.
pub(crate) fn scale_gamma(x: &[Row]) -> f64 {
    let n = (x.len() * FEATURE_DIM) as f64;
    let mean: f64 = x.iter().flatten().sum::<f64>() / n;
    let var: f64 = x.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (FEATURE_DIM as f64 * var)
    } else {
        1.0
    }
}

pub(crate) fn train(x: &[Row], positive: &[bool], c: f64, gamma: f64, tol: f64, max_iter: usize) -> SvmModel {
    let n = x.len();
    let y: Vec<f64> = positive.iter().map(|p| if *p { 1.0 } else { -1.0 }).collect();
    let k: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| rbf(gamma, &x[i], &x[j]))
        .collect();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);
    for _ in 0..max_iter {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break;
        }
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (q(i, i) + q(j, j) + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (q(i, i) + q(j, j) - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    // Offset from the free vectors, or the middle of the feasible interval.
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum += yg;
            free += 1;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    let (support, coef) = (0..n)
        .filter(|t| alpha[*t] > 0.0)
        .map(|t| (x[t], alpha[t] * y[t]))
        .unzip();
    SvmModel {
        gamma,
        bias: -rho,
        support,
        coef,
    }
}

impl SvmModel {
    pub fn decision(&self, x: &Row) -> f64 {
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(s, a)| a * rbf(self.gamma, s, x))
            .sum::<f64>()
            + self.bias
    }
}
