//! Clustering evaluation: v-measure, adjusted mutual information, top-1
//! accuracy and silhouette.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::map_indexed;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("cluster {cluster} has no assigned label")]
    MissingClusterLabel { cluster: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
}

/// Counts `n_ij` between true classes (rows) and clusters (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

fn dense_ids<L: Ord>(labels: &[L]) -> (Vec<usize>, usize) {
    let mut ids: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        ids.entry(l).or_insert(0);
    }
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl ContingencyTable {
    pub fn new<A: Ord, B: Ord>(labels_true: &[A], labels_pred: &[B]) -> Result<Self, MetricsError> {
        if labels_true.len() != labels_pred.len() {
            return Err(MetricsError::LengthMismatch { left: labels_true.len(), right: labels_pred.len() });
        }
        let (t, r) = dense_ids(labels_true);
        let (p, c) = dense_ids(labels_pred);
        let mut counts = vec![vec![0u64; c]; r];
        for (&i, &j) in t.iter().zip(&p) {
            counts[i][j] += 1;
        }
        Ok(Self::from_counts(counts))
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let row_sums: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let cols = counts.first().map_or(0, Vec::len);
        let col_sums: Vec<u64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let n = row_sums.iter().sum();
        Self { counts, row_sums, col_sums, n }
    }

    fn entropy(margin: &[u64], n: u64) -> f64 {
        let n = n as f64;
        -margin
            .iter()
            .filter(|&&m| m > 0)
            .map(|&m| {
                let p = m as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    }

    pub fn entropy_true(&self) -> f64 {
        Self::entropy(&self.row_sums, self.n)
    }

    pub fn entropy_pred(&self) -> f64 {
        Self::entropy(&self.col_sums, self.n)
    }

    pub fn mutual_information(&self) -> f64 {
        let n = self.n as f64;
        let mut mi = 0.0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &nij) in row.iter().enumerate() {
                if nij > 0 {
                    let nij = nij as f64;
                    mi += nij / n * (n * nij / (self.row_sums[i] as f64 * self.col_sums[j] as f64)).ln();
                }
            }
        }
        mi.max(0.0)
    }

    /// True when the two partitions are equal up to relabeling.
    pub fn is_bijection(&self) -> bool {
        self.counts.len() == self.col_sums.len()
            && self.counts.iter().all(|r| r.iter().filter(|&&x| x > 0).count() == 1)
            && (0..self.col_sums.len()).all(|j| self.counts.iter().filter(|r| r[j] > 0).count() == 1)
    }

    /// Expected mutual information under the hypergeometric model of
    /// random partitions with these marginals.
    pub fn expected_mutual_information(&self) -> f64 {
        let n = self.n as usize;
        let mut lf = vec![0.0f64; n + 1];
        for i in 1..=n {
            lf[i] = lf[i - 1] + (i as f64).ln();
        }
        let nf = n as f64;
        let mut emi = 0.0;
        for &a in &self.row_sums {
            let a = a as usize;
            for &b in &self.col_sums {
                let b = b as usize;
                let lo = (a + b).saturating_sub(n).max(1);
                let hi = a.min(b);
                for nij in lo..=hi {
                    let term = nij as f64 / nf * (nf * nij as f64 / (a as f64 * b as f64)).ln();
                    let log_p = lf[a] + lf[b] + lf[n - a] + lf[n - b]
                        - lf[n]
                        - lf[nij]
                        - lf[a - nij]
                        - lf[b - nij]
                        - lf[n + nij - a - b];
                    emi += term * log_p.exp();
                }
            }
        }
        emi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub v: f64,
}

pub fn v_measure<A: Ord, B: Ord>(labels_true: &[A], labels_pred: &[B]) -> Result<VMeasure, MetricsError> {
    let table = ContingencyTable::new(labels_true, labels_pred)?;
    if table.n == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(v_measure_from_table(&table))
}

pub fn v_measure_from_table(table: &ContingencyTable) -> VMeasure {
    let hc = table.entropy_true();
    let hk = table.entropy_pred();
    let mi = table.mutual_information();
    // H(C|K) = H(C) - I(C;K)
    let homogeneity = if hc == 0.0 { 1.0 } else { (mi / hc).clamp(0.0, 1.0) };
    let completeness = if hk == 0.0 { 1.0 } else { (mi / hk).clamp(0.0, 1.0) };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    VMeasure { homogeneity, completeness, v }
}

/// Adjusted mutual information with the arithmetic-mean normalizer.
pub fn ami<A: Ord, B: Ord>(labels_true: &[A], labels_pred: &[B]) -> Result<f64, MetricsError> {
    let table = ContingencyTable::new(labels_true, labels_pred)?;
    Ok(ami_from_table(&table))
}

pub fn ami_from_table(table: &ContingencyTable) -> f64 {
    if table.is_bijection() {
        return 1.0;
    }
    let mi = table.mutual_information();
    let emi = table.expected_mutual_information();
    let mean_h = 0.5 * (table.entropy_true() + table.entropy_pred());
    let denom = mean_h - emi;
    if denom.abs() < 1e-15 {
        return 0.0;
    }
    (mi - emi) / denom
}

/// Fraction of positions where the predicted label equals the true one.
pub fn accuracy<L: PartialEq>(labels_true: &[L], labels_pred: &[L]) -> Result<f64, MetricsError> {
    if labels_true.len() != labels_pred.len() {
        return Err(MetricsError::LengthMismatch { left: labels_true.len(), right: labels_pred.len() });
    }
    if labels_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = labels_true.iter().zip(labels_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels_true.len() as f64)
}

/// Maps each stay's cluster to that cluster's assigned label.
pub fn predict_from_cluster_labels<L: Clone>(
    assignments: &[usize],
    cluster_labels: &BTreeMap<usize, L>,
) -> Result<Vec<L>, MetricsError> {
    assignments
        .iter()
        .map(|c| cluster_labels.get(c).cloned().ok_or(MetricsError::MissingClusterLabel { cluster: *c }))
        .collect()
}

/// Mean silhouette with Euclidean distances over `n` row-major points.
pub fn silhouette(data: &[f64], n: usize, dim: usize, assignments: &[usize]) -> Result<f64, MetricsError> {
    if assignments.len() != n {
        return Err(MetricsError::LengthMismatch { left: n, right: assignments.len() });
    }
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let (ids, k) = dense_ids(assignments);
    if k < 2 {
        return Err(MetricsError::SingleCluster);
    }
    let mut sizes = vec![0usize; k];
    for &c in &ids {
        sizes[c] += 1;
    }
    let scores = map_indexed(n, |i| {
        let own = ids[i];
        if sizes[own] == 1 {
            return 0.0;
        }
        let xi = &data[i * dim..(i + 1) * dim];
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if j != i {
                let xj = &data[j * dim..(j + 1) * dim];
                sums[ids[j]] += xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m == 0.0 {
            0.0
        } else {
            (b - a) / m
        }
    });
    Ok(scores.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub v_measure: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub ami: f64,
    pub accuracy_top1: Option<f64>,
    pub silhouette: Option<f64>,
}
