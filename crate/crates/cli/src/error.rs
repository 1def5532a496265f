use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, or inputs that violate a stage precondition.
    #[error("{0}")]
    Invalid(String),
    /// An earlier pipeline stage has not been run.
    #[error("{what}: {path} not found (run `tsb {producer}` first)")]
    Missing { what: &'static str, path: String, producer: &'static str },
    /// A run-directory artifact exists but cannot be parsed.
    #[error("malformed intermediate file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Core(#[from] tsb_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::Missing { .. } | CliError::Core(_) => 1,
            CliError::Malformed { .. } | CliError::Io { .. } => 2,
        }
    }

    pub fn malformed(path: &Path, reason: impl ToString) -> Self {
        CliError::Malformed { path: path.display().to_string(), reason: reason.to_string() }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), reason: err.to_string() }
    }
}

macro_rules! core_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

core_from!(
    tsb_core::cohort::CohortError,
    tsb_core::taxonomy::TaxonomyError,
    tsb_core::synth::SynthError,
    tsb_core::preprocess::PreprocessError,
    tsb_core::embed_rnn::RnnError,
    tsb_core::tsne::TsneError,
    tsb_core::kmeans::KmeansError,
    tsb_core::metrics::MetricsError,
    tsb_core::stratify::StratifyError,
    tsb_core::hpo::HpoError,
    tsb_core::report::ReportError,
    tsb_core::embedding::EmbeddingError
);

pub type Result<T, E = CliError> = std::result::Result<T, E>;
