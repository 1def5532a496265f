//! Flat stratification per taxonomy level, iterative hierarchy rediscovery
//! and cluster label assignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, Split, SplitAssignment};
use crate::embedding::EmbeddingMatrix;
use crate::kmeans::{kmeans_fit, KmeansConfig, KmeansError};
use crate::metrics::{self, ClusterMetrics, MetricsError};
use crate::par::map_indexed;
use crate::rng::stream_seed;
use crate::taxonomy::{TaxonomyError, TaxonomyTree, MAX_LEVEL};
use crate::tsne::{tsne_fit, TsneConfig, TsneError};

#[derive(Debug, Error, PartialEq)]
pub enum StratifyError {
    #[error("no label for stay {0}")]
    MissingLabel(String),
    #[error("level must be in 1..=4, got {0}")]
    InvalidLevel(u8),
    #[error("k must be >= 2 and <= N (k = {k}, N = {n})")]
    InvalidK { k: usize, n: usize },
    #[error("level-1 clustering needs more stays ({n}) than codes ({k})")]
    TooFewStays { n: usize, k: usize },
    #[error("the train split is empty")]
    NoTrainMembersAnywhere,
    #[error("unknown labeling strategy {0:?}")]
    UnknownStrategy(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Kmeans(#[from] KmeansError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tsne(#[from] TsneError),
}

/// `y_{p,i}` for every embedded stay and level, aligned with embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelLabels {
    pub stay_ids: Vec<String>,
    levels: Vec<Vec<String>>,
}

impl LevelLabels {
    /// Projects each stay's leaf code onto every level of the taxonomy.
    pub fn new(
        stay_ids: &[String],
        leaf_codes: &HashMap<String, String>,
        taxonomy: &TaxonomyTree,
    ) -> Result<Self, StratifyError> {
        let mut levels = vec![Vec::with_capacity(stay_ids.len()); MAX_LEVEL as usize];
        for id in stay_ids {
            let leaf = leaf_codes.get(id).ok_or_else(|| StratifyError::MissingLabel(id.clone()))?;
            for (l, out) in levels.iter_mut().enumerate() {
                out.push(taxonomy.ancestor_at_level(leaf, l as u8 + 1)?.to_string());
            }
        }
        Ok(Self { stay_ids: stay_ids.to_vec(), levels })
    }

    pub fn from_cohort(
        embeddings: &EmbeddingMatrix,
        cohort: &Cohort,
        taxonomy: &TaxonomyTree,
    ) -> Result<Self, StratifyError> {
        let leaf: HashMap<String, String> =
            cohort.stays.iter().map(|s| (s.stay_id.clone(), s.label_code.clone())).collect();
        Self::new(&embeddings.stay_ids, &leaf, taxonomy)
    }

    pub fn len(&self) -> usize {
        self.stay_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stay_ids.is_empty()
    }

    pub fn at(&self, level: u8) -> Result<&[String], StratifyError> {
        if level == 0 || level > MAX_LEVEL {
            return Err(StratifyError::InvalidLevel(level));
        }
        Ok(&self.levels[level as usize - 1])
    }

    /// Number of distinct codes at `level` present among the stays.
    pub fn present(&self, level: u8) -> Result<usize, StratifyError> {
        Ok(self.at(level)?.iter().collect::<BTreeSet<_>>().len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Row indices into the embedding matrix.
    pub members: Vec<usize>,
    pub parent: Option<usize>,
    pub evaluated: bool,
    pub label: Option<String>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLevelResult {
    pub level: u8,
    pub clusters: Vec<Cluster>,
}

impl ClusterLevelResult {
    fn from_assignments(level: u8, assignments: &[usize], k: usize) -> Self {
        let mut clusters: Vec<Cluster> = (0..k)
            .map(|id| Cluster { id, members: Vec::new(), parent: None, evaluated: true, label: None, fallback: false })
            .collect();
        for (i, &c) in assignments.iter().enumerate() {
            clusters[c].members.push(i);
        }
        Self { level, clusters }
    }

    /// Cluster id per embedding row; `None` for rows outside every cluster.
    pub fn assignment_of(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for c in &self.clusters {
            for &m in &c.members {
                out[m] = Some(c.id);
            }
        }
        out
    }

    pub fn n_evaluated(&self) -> usize {
        self.clusters.iter().filter(|c| c.evaluated).count()
    }

    pub fn n_skipped(&self) -> usize {
        self.clusters.len() - self.n_evaluated()
    }
}

/// Points handed to k-means, either the embeddings or a t-SNE layout of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpace {
    pub data: Vec<f64>,
    pub dim: usize,
    pub used_tsne: bool,
}

impl ClusterSpace {
    pub fn build(emb: &EmbeddingMatrix, tsne: Option<&TsneConfig>) -> Result<Self, StratifyError> {
        match tsne {
            None => Ok(Self { data: emb.data.clone(), dim: emb.dim, used_tsne: false }),
            Some(cfg) => {
                let r = tsne_fit(&emb.data, emb.len(), emb.dim, cfg)?;
                Ok(Self { data: r.layout, dim: r.out_dims, used_tsne: true })
            }
        }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatOptions {
    /// Defaults to the number of level codes present.
    pub k: Option<usize>,
    pub tsne: Option<TsneConfig>,
    pub kmeans: KmeansConfig,
    pub silhouette: bool,
    pub seed: u64,
}

impl Default for FlatOptions {
    fn default() -> Self {
        Self { k: None, tsne: None, kmeans: KmeansConfig::default(), silhouette: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatOutcome {
    pub result: ClusterLevelResult,
    pub assignments: Vec<usize>,
    pub k: usize,
    pub space: ClusterSpace,
    pub metrics: ClusterMetrics,
}

/// Clusters every stay once and scores the partition against level `level`.
pub fn stratify_flat(
    emb: &EmbeddingMatrix,
    labels: &LevelLabels,
    level: u8,
    opts: &FlatOptions,
) -> Result<FlatOutcome, StratifyError> {
    let truth = labels.at(level)?;
    if truth.len() != emb.len() {
        return Err(StratifyError::MissingLabel(format!("{} embedded stays, {} labels", emb.len(), truth.len())));
    }
    let k = opts.k.unwrap_or(labels.present(level)?);
    let n = emb.len();
    if k < 2 || k > n {
        return Err(StratifyError::InvalidK { k, n });
    }
    let space = ClusterSpace::build(emb, opts.tsne.as_ref())?;
    let fit = kmeans_fit(&space.data, n, space.dim, k, opts.seed, &opts.kmeans)?;
    let vm = metrics::v_measure(truth, &fit.assignments)?;
    let ami = metrics::ami(truth, &fit.assignments)?;
    let silhouette = if opts.silhouette {
        Some(metrics::silhouette(&space.data, n, space.dim, &fit.assignments).unwrap_or(0.0))
    } else {
        None
    };
    Ok(FlatOutcome {
        result: ClusterLevelResult::from_assignments(level, &fit.assignments, k),
        assignments: fit.assignments,
        k,
        space,
        metrics: ClusterMetrics {
            v_measure: vm.v,
            homogeneity: vm.homogeneity,
            completeness: vm.completeness,
            ami,
            accuracy_top1: None,
            silhouette,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RediscoverOptions {
    pub min_cluster_size: usize,
    pub kmeans: KmeansConfig,
    pub seed: u64,
}

impl Default for RediscoverOptions {
    fn default() -> Self {
        Self { min_cluster_size: 10, kmeans: KmeansConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionResult {
    pub from_level: u8,
    pub to_level: u8,
    /// Unweighted mean over evaluated parent clusters; `None` if none were.
    pub mean_accuracy: Option<f64>,
    /// (parent cluster id, accuracy) for each evaluated parent.
    pub per_cluster: Vec<(usize, f64)>,
    pub n_evaluated_clusters: usize,
    pub n_skipped_clusters: usize,
}

impl TransitionResult {
    pub fn name(&self) -> String {
        format!("L{}->L{}", self.from_level, self.to_level)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rediscovery {
    /// Levels 1..=4 in order.
    pub levels: Vec<ClusterLevelResult>,
    pub transitions: Vec<TransitionResult>,
}

fn majority<'a>(codes: impl Iterator<Item = &'a String>) -> Option<&'a String> {
    let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
    for c in codes {
        *counts.entry(c).or_default() += 1;
    }
    // BTreeMap iterates codes in ascending order, so the first maximum wins.
    counts.into_iter().fold(None, |best: Option<(&String, usize)>, (c, n)| match best {
        Some((_, bn)) if bn >= n => best,
        _ => Some((c, n)),
    })
    .map(|(c, _)| c)
}

/// Top-down re-clustering: level-1 k-means over everything, then each
/// sufficiently large cluster is split among its own members into as many
/// clusters as it holds distinct child codes.
pub fn rediscover(
    emb: &EmbeddingMatrix,
    labels: &LevelLabels,
    opts: &RediscoverOptions,
) -> Result<Rediscovery, StratifyError> {
    let n = emb.len();
    let k1 = labels.present(1)?;
    if n <= k1 {
        return Err(StratifyError::TooFewStays { n, k: k1 });
    }
    if k1 < 2 {
        return Err(StratifyError::InvalidK { k: k1, n });
    }
    let fit = kmeans_fit(&emb.data, n, emb.dim, k1, stream_seed(opts.seed, "rediscover", 1), &opts.kmeans)?;
    let mut levels = vec![ClusterLevelResult::from_assignments(1, &fit.assignments, k1)];
    let mut transitions = Vec::new();

    for level in 1..MAX_LEVEL {
        let child_truth = labels.at(level + 1)?;
        let parents = levels.last_mut().expect("level 1 exists");
        let plans: Vec<Option<usize>> = parents
            .clusters
            .iter()
            .map(|c| {
                let distinct = c.members.iter().map(|&m| &child_truth[m]).collect::<BTreeSet<_>>().len();
                (c.members.len() > opts.min_cluster_size && distinct >= 2).then_some(distinct)
            })
            .collect();
        for (c, plan) in parents.clusters.iter_mut().zip(&plans) {
            c.evaluated = plan.is_some();
        }
        let parents = &*parents;
        let splits = map_indexed(parents.clusters.len(), |j| -> Result<Option<Vec<usize>>, StratifyError> {
            let Some(k_child) = plans[j] else { return Ok(None) };
            let members = &parents.clusters[j].members;
            let sub = emb.select(members);
            let seed = stream_seed(opts.seed, &format!("rediscover/L{}", level + 1), j as u64);
            Ok(Some(kmeans_fit(&sub.data, sub.len(), sub.dim, k_child, seed, &opts.kmeans)?.assignments))
        });
        let mut children = Vec::new();
        let mut per_cluster = Vec::new();
        for (j, split) in splits.into_iter().enumerate() {
            let Some(assign) = split? else { continue };
            let members = &parents.clusters[j].members;
            let k_child = plans[j].expect("planned");
            let mut groups = vec![Vec::new(); k_child];
            for (&m, &a) in members.iter().zip(&assign) {
                groups[a].push(m);
            }
            let mut correct = 0usize;
            for g in groups {
                let label = majority(g.iter().map(|&m| &child_truth[m])).cloned();
                correct += g.iter().filter(|&&m| Some(&child_truth[m]) == label.as_ref()).count();
                children.push(Cluster {
                    id: children.len(),
                    members: g,
                    parent: Some(parents.clusters[j].id),
                    evaluated: true,
                    label,
                    fallback: false,
                });
            }
            per_cluster.push((parents.clusters[j].id, correct as f64 / members.len() as f64));
        }
        let n_eval = per_cluster.len();
        transitions.push(TransitionResult {
            from_level: level,
            to_level: level + 1,
            mean_accuracy: (n_eval > 0).then(|| per_cluster.iter().map(|x| x.1).sum::<f64>() / n_eval as f64),
            per_cluster,
            n_evaluated_clusters: n_eval,
            n_skipped_clusters: parents.clusters.len() - n_eval,
        });
        levels.push(ClusterLevelResult { level: level + 1, clusters: children });
    }
    // Leaf-level clusters are terminal; mark them by the same size rule.
    if let Some(last) = levels.last_mut() {
        for c in &mut last.clusters {
            c.evaluated = c.members.len() > opts.min_cluster_size;
        }
    }
    Ok(Rediscovery { levels, transitions })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Centroid,
    Medoid,
    Majority,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Centroid, Strategy::Medoid, Strategy::Majority];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Centroid => "centroid",
            Strategy::Medoid => "medoid",
            Strategy::Majority => "majority",
        }
    }

    pub fn parse(s: &str) -> Result<Self, StratifyError> {
        match s {
            "centroid" => Ok(Strategy::Centroid),
            "medoid" => Ok(Strategy::Medoid),
            "majority" => Ok(Strategy::Majority),
            other => Err(StratifyError::UnknownStrategy(other.to_string())),
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Label of the member minimizing `score`, smallest code among exact ties.
fn argmin_label(members: &[usize], truth: &[String], score: impl Fn(usize) -> f64) -> String {
    let mut best: Option<(f64, &String)> = None;
    for &m in members {
        let s = score(m);
        best = match best {
            Some((bs, bl)) if bs < s || (bs == s && bl <= &truth[m]) => Some((bs, bl)),
            _ => Some((s, &truth[m])),
        };
    }
    best.expect("non-empty").1.clone()
}

/// Picks one training label per cluster. `vectors` is the space the clusters
/// were formed in, row-aligned with `labels`.
pub fn assign_cluster_labels(
    result: &ClusterLevelResult,
    vectors: &ClusterSpace,
    labels: &LevelLabels,
    split: &SplitAssignment,
    strategy: Strategy,
) -> Result<ClusterLevelResult, StratifyError> {
    let truth = labels.at(result.level)?;
    let is_train: Vec<bool> = labels.stay_ids.iter().map(|id| split.get(id) == Some(Split::Train)).collect();
    let global = majority(truth.iter().zip(&is_train).filter(|(_, &t)| t).map(|(l, _)| l))
        .ok_or(StratifyError::NoTrainMembersAnywhere)?
        .clone();
    let mut out = result.clone();
    for c in &mut out.clusters {
        let train: Vec<usize> = c.members.iter().copied().filter(|&m| is_train[m]).collect();
        if train.is_empty() {
            c.label = Some(global.clone());
            c.fallback = true;
            continue;
        }
        c.fallback = false;
        let label = match strategy {
            Strategy::Majority => majority(train.iter().map(|&m| &truth[m])).expect("non-empty").clone(),
            Strategy::Centroid => {
                let d = vectors.dim;
                let mut mu = vec![0.0; d];
                for &m in &train {
                    for (a, x) in mu.iter_mut().zip(vectors.row(m)) {
                        *a += x;
                    }
                }
                for a in &mut mu {
                    *a /= train.len() as f64;
                }
                argmin_label(&train, truth, |m| dist(vectors.row(m), &mu))
            }
            Strategy::Medoid => {
                let totals = map_indexed(train.len(), |a| {
                    train.iter().map(|&q| dist(vectors.row(train[a]), vectors.row(q))).sum::<f64>()
                });
                let pos: HashMap<usize, usize> = train.iter().enumerate().map(|(i, &m)| (m, i)).collect();
                argmin_label(&train, truth, |m| totals[pos[&m]])
            }
        };
        c.label = Some(label);
    }
    Ok(out)
}

/// Top-1 accuracy of cluster labels over the stays of `which` that belong to
/// a cluster; `None` when there are no such stays.
pub fn evaluate_assignment(
    labeled: &ClusterLevelResult,
    labels: &LevelLabels,
    split: &SplitAssignment,
    which: Split,
) -> Result<Option<f64>, StratifyError> {
    let truth = labels.at(labeled.level)?;
    let mut total = 0usize;
    let mut hits = 0usize;
    for c in &labeled.clusters {
        for &m in &c.members {
            if split.get(&labels.stay_ids[m]) == Some(which) {
                total += 1;
                if c.label.as_ref() == Some(&truth[m]) {
                    hits += 1;
                }
            }
        }
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}
