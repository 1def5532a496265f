//! Run configuration and the glue between pipeline stages.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{self, Cohort, CohortConfig, SplitAssignment};
use crate::embed_rnn::{self, EpochLoss, RnnConfig, RnnModel};
use crate::embed_stat::{self, StatConfig};
use crate::embedding::{Embedder, EmbeddingMatrix};
use crate::hpo::HpoConfig;
use crate::kmeans::KmeansConfig;
use crate::preprocess::{self, EncodingOptions, PreparedCohort, PreprocessParams};
use crate::rng::stream_seed;
use crate::stratify::Strategy;
use crate::synth::{self, SynthConfig};
use crate::taxonomy::TaxonomyTree;
use crate::tsne::TsneConfig;
use crate::Result;

/// Bumped whenever a section gains, loses or renames a key.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    pub features: Option<Vec<String>>,
    pub categorical_statics: Vec<String>,
    pub max_hours: usize,
    /// train/val/test fractions.
    pub split: [f64; 3],
    /// Keep only stays whose leaf code is among the most frequent `n`.
    pub top_codes: Option<usize>,
}

impl Default for CohortSection {
    fn default() -> Self {
        let c = CohortConfig::default();
        Self {
            features: c.features,
            categorical_statics: c.categorical_statics,
            max_hours: c.max_hours,
            split: [0.7, 0.15, 0.15],
            top_codes: None,
        }
    }
}

impl CohortSection {
    pub fn cohort_config(&self) -> CohortConfig {
        CohortConfig {
            features: self.features.clone(),
            categorical_statics: self.categorical_statics.clone(),
            max_hours: self.max_hours,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub stat: StatConfig,
    pub rnn: RnnConfig,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self { stat: StatConfig::default(), rnn: RnnConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StratifySection {
    pub levels: Vec<u8>,
    /// Fixed k for flat stratification; the number of level codes otherwise.
    pub k: Option<usize>,
    pub use_tsne: bool,
    pub min_cluster_size: usize,
    pub strategies: Vec<Strategy>,
}

impl Default for StratifySection {
    fn default() -> Self {
        Self {
            levels: vec![1, 2, 3, 4],
            k: None,
            use_tsne: false,
            min_cluster_size: 10,
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub run_dir: Option<String>,
    pub timeseries: Option<String>,
    pub statics: Option<String>,
    pub labels: Option<String>,
    pub taxonomy: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub cohort: CohortSection,
    pub synth: SynthConfig,
    pub preprocess: EncodingOptions,
    pub embed: EmbedSection,
    pub tsne: TsneConfig,
    pub kmeans: KmeansConfig,
    pub stratify: StratifySection,
    pub hpo: HpoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoSection {
    pub level: u8,
    pub n_trials: usize,
    pub tsne_iterations: usize,
    pub space: crate::hpo::SearchSpace,
}

impl Default for HpoSection {
    fn default() -> Self {
        let h = HpoConfig::default();
        Self { level: 1, n_trials: h.n_trials, tsne_iterations: h.tsne_iterations, space: h.space }
    }
}

impl HpoSection {
    pub fn hpo_config(&self) -> HpoConfig {
        HpoConfig { n_trials: self.n_trials, space: self.space.clone(), tsne_iterations: self.tsne_iterations }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            cohort: CohortSection::default(),
            synth: SynthConfig::default(),
            preprocess: EncodingOptions::default(),
            embed: EmbedSection::default(),
            tsne: TsneConfig::default(),
            kmeans: KmeansConfig::default(),
            stratify: StratifySection::default(),
            hpo: HpoSection::default(),
        }
    }
}

impl RunConfig {
    /// Replaces every per-section seed with a sub-stream of the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.synth.seed = stream_seed(self.seed, "synth", 0);
        c.embed.rnn.seed = stream_seed(self.seed, "rnn", 0);
        c.tsne.seed = stream_seed(self.seed, "tsne", 0);
        c
    }

    pub fn split_seed(&self) -> u64 {
        stream_seed(self.seed, "split", 0)
    }

    pub fn kmeans_seed(&self, task: &str, level: u8) -> u64 {
        stream_seed(self.seed, &format!("kmeans/{task}"), level as u64)
    }
}

/// Taxonomy and cohort from the planted-signal generator.
pub fn synth_dataset(config: &SynthConfig) -> Result<(TaxonomyTree, Cohort)> {
    let tree = synth::generate_taxonomy(config)?;
    let cohort = synth::generate_cohort(config, &tree)?;
    Ok((tree, cohort))
}

/// Split assignment, then scaling/imputation/encoding fitted on train.
pub fn split_and_prepare(
    cohort: &Cohort,
    ratios: [f64; 3],
    seed: u64,
    options: &EncodingOptions,
) -> Result<(SplitAssignment, PreparedCohort, PreprocessParams)> {
    let split = cohort::split(cohort, ratios, seed)?;
    let (prepared, params) = preprocess::prepare(cohort, &split, options)?;
    Ok((split, prepared, params))
}

pub struct EmbedOutput {
    pub matrix: EmbeddingMatrix,
    pub model: Option<RnnModel>,
    pub curve: Vec<EpochLoss>,
}

pub fn embed(
    method: Embedder,
    prepared: &PreparedCohort,
    split: &SplitAssignment,
    section: &EmbedSection,
    on_epoch: impl FnMut(&EpochLoss),
) -> Result<EmbedOutput> {
    match method {
        Embedder::Stat => Ok(EmbedOutput {
            matrix: embed_stat::embed_stat(prepared, &section.stat)?,
            model: None,
            curve: Vec::new(),
        }),
        Embedder::Gru | Embedder::Lstm => {
            let mut cfg = section.rnn.clone();
            cfg.cell = if method == Embedder::Gru {
                embed_rnn::CellKind::Gru
            } else {
                embed_rnn::CellKind::Lstm
            };
            let out = embed_rnn::train_with(prepared, split, &cfg, on_epoch)?;
            let matrix = embed_rnn::embed_rnn(&out.model, prepared)?;
            Ok(EmbedOutput { matrix, model: Some(out.model), curve: out.curve })
        }
    }
}

/// Leaf code per stay id.
pub fn leaf_codes(cohort: &Cohort) -> HashMap<String, String> {
    cohort.stays.iter().map(|s| (s.stay_id.clone(), s.label_code.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_seeds_follow_the_global_seed() {
        let a = RunConfig { seed: 1, ..Default::default() }.resolved();
        let b = RunConfig { seed: 2, ..Default::default() }.resolved();
        assert_ne!(a.synth.seed, b.synth.seed);
        assert_eq!(a, RunConfig { seed: 1, ..Default::default() }.resolved());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
