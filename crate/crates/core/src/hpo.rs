//! Seeded random search over the number of clusters and t-SNE settings.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Split, SplitAssignment};
use crate::embedding::EmbeddingMatrix;
use crate::kmeans::{kmeans_fit, KmeansConfig};
use crate::metrics;
use crate::par::map_indexed;
use crate::rng::{stream, stream_seed};
use crate::stratify::{LevelLabels, StratifyError};
use crate::tsne::{tsne_fit, TsneConfig};

#[derive(Debug, Error, PartialEq)]
pub enum HpoError {
    #[error("search space is empty: {0}")]
    EmptySpace(String),
    #[error("no validation stays to score trials on")]
    NoValidationStays,
    #[error("n_trials must be >= 1")]
    NoTrials,
    #[error(transparent)]
    Stratify(#[from] StratifyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub k_min: usize,
    pub k_max: usize,
    pub use_tsne: Vec<bool>,
    pub perplexity_min: f64,
    pub perplexity_max: f64,
    pub out_dims: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 64,
            use_tsne: vec![false, true],
            perplexity_min: 5.0,
            perplexity_max: 50.0,
            out_dims: vec![2, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoConfig {
    pub n_trials: usize,
    pub space: SearchSpace,
    /// Iterations of each t-SNE run inside a trial.
    pub tsne_iterations: usize,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self { n_trials: 50, space: SearchSpace::default(), tsne_iterations: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub k: usize,
    pub use_tsne: bool,
    pub perplexity: f64,
    pub out_dims: usize,
    pub objective: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
    pub seed: u64,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.objective.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HpoOutcome {
    pub best: Option<TrialRecord>,
    pub trials: Vec<TrialRecord>,
}

fn sample(space: &SearchSpace, k_hi: usize, seed: u64, trial: usize) -> TrialRecord {
    let mut rng = stream(seed, "hpo", trial as u64);
    let k = rng.random_range(space.k_min..=k_hi);
    let use_tsne = space.use_tsne[rng.random_range(0..space.use_tsne.len())];
    let perplexity = if space.perplexity_max > space.perplexity_min {
        rng.random_range(space.perplexity_min..=space.perplexity_max)
    } else {
        space.perplexity_min
    };
    let out_dims = space.out_dims[rng.random_range(0..space.out_dims.len())];
    TrialRecord {
        trial,
        k,
        use_tsne,
        perplexity,
        out_dims,
        objective: None,
        status: String::new(),
        seed: stream_seed(seed, "hpo-trial", trial as u64),
    }
}

/// Runs `n_trials` independent trials; each clusters every stay and is scored
/// by v-measure over the validation stays only.
pub fn hpo_run(
    emb: &EmbeddingMatrix,
    labels: &LevelLabels,
    level: u8,
    split: &SplitAssignment,
    config: &HpoConfig,
    kmeans: &KmeansConfig,
    seed: u64,
) -> Result<HpoOutcome, HpoError> {
    if config.n_trials == 0 {
        return Err(HpoError::NoTrials);
    }
    let space = &config.space;
    let n = emb.len();
    let k_hi = space.k_max.min(n.saturating_sub(1));
    if space.k_min < 1 || space.k_min > k_hi {
        return Err(HpoError::EmptySpace(format!("k range [{}, {}]", space.k_min, k_hi)));
    }
    if space.use_tsne.is_empty() || space.out_dims.is_empty() || space.out_dims.contains(&0) {
        return Err(HpoError::EmptySpace("use_tsne and out_dims need at least one valid value".into()));
    }
    if !(space.perplexity_min.is_finite() && space.perplexity_min <= space.perplexity_max) {
        return Err(HpoError::EmptySpace("perplexity range".into()));
    }
    let truth = labels.at(level)?;
    let val: Vec<usize> = (0..n).filter(|&i| split.get(&emb.stay_ids[i]) == Some(Split::Val)).collect();
    if val.is_empty() {
        return Err(HpoError::NoValidationStays);
    }
    let val_truth: Vec<&String> = val.iter().map(|&i| &truth[i]).collect();

    let trials = map_indexed(config.n_trials, |t| {
        let mut rec = sample(space, k_hi, seed, t);
        let outcome = (|| -> Result<f64, String> {
            let (data, dim) = if rec.use_tsne {
                let cfg = TsneConfig {
                    out_dims: rec.out_dims,
                    perplexity: rec.perplexity,
                    iterations: config.tsne_iterations,
                    seed: stream_seed(rec.seed, "tsne", 0),
                    ..TsneConfig::default()
                };
                let r = tsne_fit(&emb.data, n, emb.dim, &cfg).map_err(|e| e.to_string())?;
                (r.layout, r.out_dims)
            } else {
                (emb.data.clone(), emb.dim)
            };
            let fit = kmeans_fit(&data, n, dim, rec.k, stream_seed(rec.seed, "kmeans", 0), kmeans)
                .map_err(|e| e.to_string())?;
            let pred: Vec<usize> = val.iter().map(|&i| fit.assignments[i]).collect();
            let v = metrics::v_measure(&val_truth, &pred).map_err(|e| e.to_string())?.v;
            if v.is_finite() {
                Ok(v)
            } else {
                Err("non-finite objective".into())
            }
        })();
        match outcome {
            Ok(v) => {
                rec.objective = Some(v);
                rec.status = "ok".into();
            }
            Err(e) => rec.status = format!("failed: {e}"),
        }
        rec
    });
    let best = trials
        .iter()
        .filter(|t| t.is_ok())
        .fold(None::<&TrialRecord>, |best, t| match best {
            Some(b) if b.objective >= t.objective => Some(b),
            _ => Some(t),
        })
        .cloned();
    Ok(HpoOutcome { best, trials })
}

/// `trial,k,use_tsne,perplexity,out_dims,objective,status`
pub fn trials_csv(trials: &[TrialRecord]) -> String {
    let mut out = String::from("trial,k,use_tsne,perplexity,out_dims,objective,status\n");
    for t in trials {
        let objective = t.objective.map(|v| v.to_string()).unwrap_or_default();
        let status = t.status.replace([',', '\n'], ";");
        let _ = writeln!(out, "{},{},{},{},{},{},{}", t.trial, t.k, t.use_tsne, t.perplexity, t.out_dims, objective, status);
    }
    out
}
