//! Exact O(N²) t-SNE.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::map_indexed;
use crate::rng::stream;

#[derive(Debug, Error, PartialEq)]
pub enum TsneError {
    #[error("all distances in row are zero")]
    DegenerateRow,
    #[error("perplexity {perplexity} must be in [1, (N-1)/3) for N = {n}")]
    PerplexityTooLarge { perplexity: f64, n: usize },
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid t-SNE config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub out_dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            out_dims: 2,
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

const P_FLOOR: f64 = 1e-12;
const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;

/// Conditional distribution `p_{j|i} ∝ exp(-β d_j)` over a row of squared
/// distances (self excluded) and its Shannon entropy in nats.
pub fn conditional_row(distances: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let dmin = distances.iter().copied().fold(f64::INFINITY, f64::min);
    // shift by the minimum for stability; it cancels in the normalization
    let w: Vec<f64> = distances.iter().map(|d| (-(d - dmin) * beta).exp()).collect();
    let sum: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|x| x / sum).collect();
    let entropy = -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
    (p, entropy)
}

/// Precision β such that the entropy of [`conditional_row`] is
/// `ln(perplexity)`.
///
/// Brackets β by doubling/halving from 1 (on distances rescaled by their mean
/// so the bracket is scale-free), then bisects; at most 50 steps in total.
pub fn perplexity_calibrate(distances: &[f64], perplexity: f64) -> Result<f64, TsneError> {
    let scale = distances.iter().sum::<f64>() / distances.len().max(1) as f64;
    if !(scale > 0.0) {
        return Err(TsneError::DegenerateRow);
    }
    let target = perplexity.ln();
    let scaled: Vec<f64> = distances.iter().map(|d| d / scale).collect();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    for _ in 0..MAX_BISECTIONS {
        let (_, h) = conditional_row(&scaled, beta);
        let diff = h - target;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            // too flat: sharpen
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    Ok(beta / scale)
}

fn squared_distances(data: &[f64], n: usize, dim: usize) -> Vec<f64> {
    let rows = map_indexed(n, |i| {
        let a = &data[i * dim..(i + 1) * dim];
        (0..n)
            .map(|j| {
                let b = &data[j * dim..(j + 1) * dim];
                a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    rows.concat()
}

/// Symmetrized joint probabilities `p_ij = (p_{j|i} + p_{i|j}) / 2N`,
/// floored at 1e-12, as a dense `N × N` matrix with zero diagonal.
pub fn joint_probabilities(data: &[f64], n: usize, dim: usize, perplexity: f64) -> Vec<f64> {
    let d = squared_distances(data, n, dim);
    let cond = map_indexed(n, |i| {
        let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[i * n + j]).collect();
        let p = match perplexity_calibrate(&row, perplexity) {
            Ok(beta) => conditional_row(&row, beta).0,
            // every neighbor coincides with i: uniform
            Err(_) => vec![1.0 / (n - 1) as f64; n - 1],
        };
        let mut full = vec![0.0; n];
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            full[j] = p[k];
        }
        full
    });
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i][j] + cond[j][i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }
    p
}

/// Student-t affinities: returns unnormalized kernel `1/(1+|y_i-y_j|²)` and
/// its off-diagonal sum.
fn student_kernel(y: &[f64], n: usize, dims: usize) -> (Vec<f64>, f64) {
    let rows = map_indexed(n, |i| {
        let yi = &y[i * dims..(i + 1) * dims];
        (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let d: f64 = yi.iter().zip(&y[j * dims..(j + 1) * dims]).map(|(a, b)| (a - b) * (a - b)).sum();
                    1.0 / (1.0 + d)
                }
            })
            .collect::<Vec<f64>>()
    });
    let sum = rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    (rows.concat(), sum)
}

fn kl_from_kernel(p: &[f64], num: &[f64], sum: f64, n: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let q = (num[i * n + j] / sum).max(P_FLOOR);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// KL(P‖Q) of a layout.
pub fn kl_divergence(p: &[f64], y: &[f64], n: usize, dims: usize) -> f64 {
    let (num, sum) = student_kernel(y, n, dims);
    kl_from_kernel(p, &num, sum, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `N × out_dims` row-major.
    pub layout: Vec<f64>,
    pub out_dims: usize,
    pub initial_kl: f64,
    /// KL(P‖Q) after each iteration, against the unexaggerated P.
    pub kl_history: Vec<f64>,
}

impl TsneResult {
    pub fn final_kl(&self) -> f64 {
        self.kl_history.last().copied().unwrap_or(self.initial_kl)
    }
}

/// Gradient descent with momentum, per-parameter adaptive gains and early
/// exaggeration, from a seeded Normal(0, 1e-4²) start.
pub fn tsne_fit(data: &[f64], n: usize, dim: usize, config: &TsneConfig) -> Result<TsneResult, TsneError> {
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    if config.out_dims == 0 {
        return Err(TsneError::InvalidConfig("out_dims must be >= 1".into()));
    }
    let max_perp = (n - 1) as f64 / 3.0;
    if !(config.perplexity >= 1.0 && config.perplexity < max_perp) {
        return Err(TsneError::PerplexityTooLarge { perplexity: config.perplexity, n });
    }
    let dims = config.out_dims;
    let p = joint_probabilities(data, n, dim, config.perplexity);

    let mut rng = stream(config.seed, "tsne-init", 0);
    let mut y: Vec<f64> = (0..n * dims).map(|_| 1e-4 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut velocity = vec![0.0; n * dims];
    let mut gains = vec![1.0f64; n * dims];
    let mut initial_kl = f64::NAN;
    let mut kl_history = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iterations { config.early_exaggeration } else { 1.0 };
        let momentum = if it < config.exaggeration_iterations { config.initial_momentum } else { config.final_momentum };
        let (num, sum) = student_kernel(&y, n, dims);
        // KL of the layout left by the previous iteration
        let kl = kl_from_kernel(&p, &num, sum, n);
        if it == 0 {
            initial_kl = kl;
        } else {
            kl_history.push(kl);
        }
        let grad_rows = map_indexed(n, |i| {
            let mut g = vec![0.0; dims];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coeff = 4.0 * (exaggeration * p[i * n + j] - w / sum) * w;
                for k in 0..dims {
                    g[k] += coeff * (y[i * dims + k] - y[j * dims + k]);
                }
            }
            g
        });
        for (idx, g) in grad_rows.into_iter().flatten().enumerate() {
            gains[idx] = if (g > 0.0) != (velocity[idx] > 0.0) { gains[idx] + 0.2 } else { (gains[idx] * 0.8).max(0.01) };
            velocity[idx] = momentum * velocity[idx] - config.learning_rate * gains[idx] * g;
            y[idx] += velocity[idx];
        }
        // recentre; translation leaves Q unchanged
        for k in 0..dims {
            let mean = (0..n).map(|i| y[i * dims + k]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y[i * dims + k] -= mean);
        }
    }
    let last = kl_divergence(&p, &y, n, dims);
    if config.iterations == 0 {
        initial_kl = last;
    } else {
        kl_history.push(last);
    }
    Ok(TsneResult { layout: y, out_dims: dims, initial_kl, kl_history })
}
