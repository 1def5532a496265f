//! k-means with k-means++ seeding, Lloyd iterations and best-of-n restarts.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::map_indexed;
use crate::rng::stream;

#[derive(Debug, Error, PartialEq)]
pub enum KmeansError {
    #[error("k = {k} exceeds the number of points {n}")]
    KGreaterThanN { k: usize, n: usize },
    #[error("k must be >= 1")]
    ZeroK,
    #[error("dimension mismatch: centroids have {expected}, points have {found}")]
    DimMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KmeansConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub n_init: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-6, n_init: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult {
    pub k: usize,
    pub dim: usize,
    pub assignments: Vec<usize>,
    /// `k × dim` row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
    pub restart: usize,
}

impl KmeansResult {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, lowest id on ties.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.chunks(dim).enumerate() {
        let d = sq_dist(point, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeds(data: &[f64], n: usize, dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(&data[i * dim..(i + 1) * dim], &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            // every point already coincides with a centre
            rng.random_range(0..n)
        };
        let c = &data[pick * dim..(pick + 1) * dim];
        centroids.extend_from_slice(c);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(&data[i * dim..(i + 1) * dim], c));
        }
    }
    centroids
}

struct Run {
    assignments: Vec<usize>,
    centroids: Vec<f64>,
    inertia: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn assign(data: &[f64], n: usize, dim: usize, centroids: &[f64], assignments: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for i in 0..n {
        let (c, d) = nearest(&data[i * dim..(i + 1) * dim], centroids, dim);
        assignments[i] = c;
        inertia += d;
    }
    inertia
}

fn update(data: &[f64], n: usize, dim: usize, k: usize, assignments: &mut [usize], centroids: &mut [f64]) {
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * dim];
    for i in 0..n {
        let c = assignments[i];
        counts[c] += 1;
        for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for j in 0..dim {
                centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
            }
        }
    }
    // Repair empty clusters: move the point farthest from its own centroid
    // into the empty one and recompute the donor's mean.
    while let Some(empty) = (0..k).find(|&c| counts[c] == 0) {
        let far = (0..n)
            .filter(|&i| counts[assignments[i]] > 1)
            .map(|i| (i, sq_dist(&data[i * dim..(i + 1) * dim], &centroids[assignments[i] * dim..(assignments[i] + 1) * dim])))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = far else { break };
        let donor = assignments[i];
        counts[donor] -= 1;
        counts[empty] = 1;
        assignments[i] = empty;
        let point = &data[i * dim..(i + 1) * dim];
        for j in 0..dim {
            sums[donor * dim + j] -= point[j];
            sums[empty * dim + j] = point[j];
            centroids[empty * dim + j] = point[j];
        }
        let mut fresh = vec![0.0; dim];
        for m in (0..n).filter(|&m| assignments[m] == donor) {
            for (f, x) in fresh.iter_mut().zip(&data[m * dim..(m + 1) * dim]) {
                *f += x;
            }
        }
        for j in 0..dim {
            centroids[donor * dim + j] = fresh[j] / counts[donor] as f64;
        }
    }
}

fn lloyd(data: &[f64], n: usize, dim: usize, k: usize, config: &KmeansConfig, mut centroids: Vec<f64>) -> Run {
    let mut assignments = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let inertia = assign(data, n, dim, &centroids, &mut assignments);
        history.push(inertia);
        if iterations >= config.max_iter {
            break;
        }
        let before = centroids.clone();
        update(data, n, dim, k, &mut assignments, &mut centroids);
        iterations += 1;
        let shift: f64 = before.chunks(dim).zip(centroids.chunks(dim)).map(|(a, b)| sq_dist(a, b)).sum();
        if shift.sqrt() < config.tol {
            let inertia = assign(data, n, dim, &centroids, &mut assignments);
            history.push(inertia);
            break;
        }
    }
    Run {
        inertia: *history.last().expect("at least one assignment"),
        assignments,
        centroids,
        iterations,
        history,
    }
}

/// Fits `k` clusters to `n` row-major points of width `dim`; the restart with
/// the lowest inertia wins (earliest restart on ties).
pub fn kmeans_fit(
    data: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    seed: u64,
    config: &KmeansConfig,
) -> Result<KmeansResult, KmeansError> {
    if k == 0 {
        return Err(KmeansError::ZeroK);
    }
    if k > n {
        return Err(KmeansError::KGreaterThanN { k, n });
    }
    let runs = map_indexed(config.n_init.max(1), |r| {
        let mut rng = stream(seed, "kmeans", r as u64);
        let seeds = plus_plus_seeds(data, n, dim, k, &mut rng);
        lloyd(data, n, dim, k, config, seeds)
    });
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.inertia < a.1.inertia { b } else { a })
        .expect("n_init >= 1");
    Ok(KmeansResult {
        k,
        dim,
        assignments: best.assignments,
        centroids: best.centroids,
        inertia: best.inertia,
        iterations_run: best.iterations,
        inertia_history: best.history,
        restart,
    })
}

/// Inertia histories of every restart, for monotonicity checks.
pub fn restart_histories(
    data: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    seed: u64,
    config: &KmeansConfig,
) -> Result<Vec<Vec<f64>>, KmeansError> {
    if k == 0 {
        return Err(KmeansError::ZeroK);
    }
    if k > n {
        return Err(KmeansError::KGreaterThanN { k, n });
    }
    Ok(map_indexed(config.n_init.max(1), |r| {
        let mut rng = stream(seed, "kmeans", r as u64);
        let seeds = plus_plus_seeds(data, n, dim, k, &mut rng);
        lloyd(data, n, dim, k, config, seeds).history
    }))
}

/// Nearest learned centroid for each point, lowest id on ties.
pub fn kmeans_predict(result: &KmeansResult, data: &[f64], dim: usize) -> Result<Vec<usize>, KmeansError> {
    if dim != result.dim {
        return Err(KmeansError::DimMismatch { expected: result.dim, found: dim });
    }
    Ok(data.chunks(dim.max(1)).map(|p| nearest(p, &result.centroids, dim).0).collect())
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn inertia_of(data: &[f64], dim: usize, assignments: &[usize], centroids: &[f64]) -> f64 {
    data.chunks(dim)
        .zip(assignments)
        .map(|(p, &c)| sq_dist(p, &centroids[c * dim..(c + 1) * dim]))
        .sum()
}
