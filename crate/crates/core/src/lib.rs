//! Temporal patient stratification benchmark.
//!
//! Builds fixed-size stay embeddings from hourly multivariate clinical time
//! series (windowed statistical moments, or autoregressive GRU/LSTM hidden
//! states), clusters them with k-means (optionally after t-SNE), and scores
//! the clusters against a four-level disease taxonomy in three ways: flat
//! stratification per level, iterative hierarchy rediscovery, and
//! centroid/medoid/majority cluster labeling.
//!
//! The modules follow the pipeline order:
//! [`synth`] / [`cohort`] → [`preprocess`] → [`embed_stat`] / [`embed_rnn`]
//! → [`tsne`] → [`kmeans`] → [`metrics`] / [`stratify`] / [`hpo`] → [`report`].

pub mod cohort;
pub mod embed_rnn;
pub mod embed_stat;
pub mod embedding;
mod error;
pub mod hpo;
pub mod kmeans;
pub mod metrics;
mod par;
pub mod pipeline;
pub mod preprocess;
pub mod report;
pub mod rng;
pub mod stratify;
pub mod synth;
pub mod taxonomy;
pub mod tsne;

pub use cohort::{Cohort, SplitAssignment, StayRecord};
pub use embedding::{Embedder, EmbeddingMatrix};
pub use error::{Error, Result};
pub use taxonomy::TaxonomyTree;
