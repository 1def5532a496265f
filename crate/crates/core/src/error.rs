use thiserror::Error;

use crate::{
    cohort::CohortError, embed_rnn::RnnError, embed_stat::StatError, embedding::EmbeddingError,
    hpo::HpoError, kmeans::KmeansError, metrics::MetricsError, preprocess::PreprocessError,
    report::ReportError, stratify::StratifyError, synth::SynthError, taxonomy::TaxonomyError,
    tsne::TsneError,
};

/// Any failure raised by the pipeline, tagged with the stage that produced it.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Rnn(#[from] RnnError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Tsne(#[from] TsneError),
    #[error(transparent)]
    Kmeans(#[from] KmeansError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stratify(#[from] StratifyError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
