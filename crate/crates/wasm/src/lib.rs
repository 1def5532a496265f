//! Browser bindings: generate a small planted-signal cohort, lay it out with
//! t-SNE, cluster it at any taxonomy level and run hierarchy rediscovery.
//! Every exported method returns a JSON string for the page to draw.

use serde::Serialize;
use tsb_core::cohort::Split;
use tsb_core::kmeans::KmeansConfig;
use tsb_core::pipeline::{self, EmbedSection};
use tsb_core::preprocess::EncodingOptions;
use tsb_core::rng::stream_seed;
use tsb_core::stratify::{
    assign_cluster_labels, evaluate_assignment, rediscover, stratify_flat, FlatOptions, LevelLabels, RediscoverOptions,
    Strategy,
};
use tsb_core::synth::SynthConfig;
use tsb_core::tsne::{tsne_fit, TsneConfig};
use tsb_core::{Embedder, EmbeddingMatrix, SplitAssignment};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    seed: u64,
    emb: EmbeddingMatrix,
    labels: LevelLabels,
    split: SplitAssignment,
    layout: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct CohortSummary {
    n_stays: usize,
    dim: usize,
    codes_per_level: Vec<usize>,
    /// Code of every stay at levels 1..=4.
    labels: Vec<Vec<String>>,
}

#[derive(Serialize)]
struct Layout {
    x: Vec<f64>,
    y: Vec<f64>,
    initial_kl: f64,
    final_kl: f64,
}

#[derive(Serialize)]
struct StrategyAccuracy {
    strategy: &'static str,
    test_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct Clustering {
    level: u8,
    k: usize,
    assignments: Vec<usize>,
    v_measure: f64,
    homogeneity: f64,
    completeness: f64,
    ami: f64,
    silhouette: Option<f64>,
    label_assignment: Vec<StrategyAccuracy>,
}

#[derive(Serialize)]
struct Transition {
    name: String,
    mean_accuracy: Option<f64>,
    evaluated: usize,
    skipped: usize,
}

#[derive(Serialize)]
struct Hierarchy {
    transitions: Vec<Transition>,
    /// Cluster id per stay at each level; `null` once a stay's parent was skipped.
    assignments: Vec<Vec<Option<usize>>>,
}

fn preset(name: &str) -> Result<SynthConfig, String> {
    match name {
        "strong" => Ok(SynthConfig::strong_signal()),
        "weak" => Ok(SynthConfig::weak_signal()),
        "noiseless" => Ok(SynthConfig::noiseless()),
        other => Err(format!("unknown preset `{other}` (strong, weak, noiseless)")),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

impl Demo {
    /// Synthesizes `n_stays` stays, preprocesses them and computes STAT
    /// embeddings. Hours and features are kept small so this runs in a tab.
    pub fn build(preset_name: &str, n_stays: usize, seed: u64) -> Result<Demo, String> {
        let synth = SynthConfig {
            n_stays,
            n_features: 6,
            n_statics: 2,
            hours: 24,
            seed: stream_seed(seed, "synth", 0),
            ..preset(preset_name)?
        };
        let (tree, cohort) = pipeline::synth_dataset(&synth).map_err(|e| e.to_string())?;
        let (split, prepared, _) = pipeline::split_and_prepare(
            &cohort,
            [0.7, 0.15, 0.15],
            stream_seed(seed, "split", 0),
            &EncodingOptions::default(),
        )
        .map_err(|e| e.to_string())?;
        let emb = pipeline::embed(Embedder::Stat, &prepared, &split, &EmbedSection::default(), |_| {})
            .map_err(|e| e.to_string())?
            .matrix;
        let labels = LevelLabels::from_cohort(&emb, &cohort, &tree).map_err(|e| e.to_string())?;
        Ok(Demo { seed, emb, labels, split, layout: None })
    }

    pub fn summary(&self) -> Result<String, String> {
        let mut labels = Vec::new();
        let mut codes_per_level = Vec::new();
        for level in 1..=4 {
            labels.push(self.labels.at(level).map_err(|e| e.to_string())?.to_vec());
            codes_per_level.push(self.labels.present(level).map_err(|e| e.to_string())?);
        }
        Ok(to_json(&CohortSummary { n_stays: self.emb.len(), dim: self.emb.dim, codes_per_level, labels }))
    }

    pub fn tsne(&mut self, perplexity: f64, iterations: usize) -> Result<String, String> {
        let cfg = TsneConfig { perplexity, iterations, seed: stream_seed(self.seed, "tsne", 0), ..TsneConfig::default() };
        let r = tsne_fit(&self.emb.data, self.emb.len(), self.emb.dim, &cfg).map_err(|e| e.to_string())?;
        let out = Layout {
            x: r.layout.iter().step_by(2).copied().collect(),
            y: r.layout.iter().skip(1).step_by(2).copied().collect(),
            initial_kl: r.initial_kl,
            final_kl: r.final_kl(),
        };
        self.layout = Some(r.layout);
        Ok(to_json(&out))
    }

    /// k-means at `level` (k = number of level codes when `k` is 0), in the
    /// current t-SNE layout if `in_layout` and one exists.
    pub fn cluster(&self, level: u8, k: usize, in_layout: bool) -> Result<String, String> {
        let emb = match (&self.layout, in_layout) {
            (Some(l), true) => {
                let rows = l.chunks(2).map(<[f64]>::to_vec).collect();
                EmbeddingMatrix::from_rows(self.emb.stay_ids.clone(), rows, Embedder::Stat).map_err(|e| e.to_string())?
            }
            _ => self.emb.clone(),
        };
        let opts = FlatOptions {
            k: (k > 0).then_some(k),
            kmeans: KmeansConfig { n_init: 4, ..KmeansConfig::default() },
            seed: stream_seed(self.seed, "kmeans/flat", level as u64),
            ..FlatOptions::default()
        };
        let flat = stratify_flat(&emb, &self.labels, level, &opts).map_err(|e| e.to_string())?;
        let mut label_assignment = Vec::new();
        for s in Strategy::ALL {
            let labeled =
                assign_cluster_labels(&flat.result, &flat.space, &self.labels, &self.split, s).map_err(|e| e.to_string())?;
            let acc = evaluate_assignment(&labeled, &self.labels, &self.split, Split::Test).map_err(|e| e.to_string())?;
            label_assignment.push(StrategyAccuracy { strategy: s.as_str(), test_accuracy: acc });
        }
        let m = &flat.metrics;
        Ok(to_json(&Clustering {
            level,
            k: flat.k,
            v_measure: m.v_measure,
            homogeneity: m.homogeneity,
            completeness: m.completeness,
            ami: m.ami,
            silhouette: m.silhouette,
            assignments: flat.assignments,
            label_assignment,
        }))
    }

    pub fn hierarchy(&self, min_cluster_size: usize) -> Result<String, String> {
        let opts = RediscoverOptions {
            min_cluster_size,
            kmeans: KmeansConfig { n_init: 4, ..KmeansConfig::default() },
            seed: stream_seed(self.seed, "kmeans/rediscover", 1),
        };
        let r = rediscover(&self.emb, &self.labels, &opts).map_err(|e| e.to_string())?;
        Ok(to_json(&Hierarchy {
            transitions: r
                .transitions
                .iter()
                .map(|t| Transition {
                    name: t.name(),
                    mean_accuracy: t.mean_accuracy,
                    evaluated: t.n_evaluated_clusters,
                    skipped: t.n_skipped_clusters,
                })
                .collect(),
            assignments: r.levels.iter().map(|l| l.assignment_of(self.emb.len())).collect(),
        }))
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(preset: &str, n_stays: usize, seed: u32) -> Result<Demo, JsError> {
        Demo::build(preset, n_stays, seed as u64).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = summary)]
    pub fn summary_js(&self) -> Result<String, JsError> {
        self.summary().map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = tsne)]
    pub fn tsne_js(&mut self, perplexity: f64, iterations: usize) -> Result<String, JsError> {
        self.tsne(perplexity, iterations).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = cluster)]
    pub fn cluster_js(&self, level: u8, k: usize, in_layout: bool) -> Result<String, JsError> {
        self.cluster(level, k, in_layout).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = hierarchy)]
    pub fn hierarchy_js(&self, min_cluster_size: usize) -> Result<String, JsError> {
        self.hierarchy(min_cluster_size).map_err(|e| JsError::new(&e))
    }
}
