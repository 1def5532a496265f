use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tsb_core::Embedder;

#[derive(Debug, Parser)]
#[command(name = "tsb", about = "Temporal patient stratification benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory holding every intermediate artifact.
    #[arg(long = "out-dir", visible_alias = "run-dir")]
    pub out_dir: Option<PathBuf>,
    /// Global seed; every random stream derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker thread cap (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Strong,
    Weak,
    Noiseless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Stat,
    Gru,
    Lstm,
}

impl Method {
    pub fn embedder(self) -> Embedder {
        match self {
            Method::Stat => Embedder::Stat,
            Method::Gru => Embedder::Gru,
            Method::Lstm => Embedder::Lstm,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.embedder().as_str()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Centroid,
    Medoid,
    Majority,
}

#[derive(Debug, Clone, Args)]
pub struct MethodArg {
    /// Which embedding to read.
    #[arg(long, value_enum, default_value = "stat")]
    pub method: Method,
}

#[derive(Debug, Clone, Args)]
pub struct TsneArgs {
    /// Cluster in a t-SNE layout of the embeddings.
    #[arg(long)]
    pub tsne: bool,
    /// t-SNE perplexity (overrides the config)
    #[arg(long)]
    pub perplexity: Option<f64>,
    /// t-SNE output dimensions
    #[arg(long = "out-dims")]
    pub out_dims: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-signal cohort and taxonomy.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Signal preset (overrides the synth section)
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Number of stays to generate
        #[arg(long = "n-stays")]
        n_stays: Option<usize>,
    },
    /// Validate external cohort files and copy them into the run directory.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Time-series CSV (stay_id, hour, feature, value)
        #[arg(long)]
        timeseries: Option<PathBuf>,
        /// Static covariates CSV (stay_id, one column per covariate)
        #[arg(long)]
        statics: Option<PathBuf>,
        /// Diagnosis labels CSV (stay_id, code)
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Taxonomy TSV (code, parent, level, name)
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Split, scale, impute and encode the cohort.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Compute stay embeddings (STAT moments or a trained GRU/LSTM).
    Embed {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArg,
        /// Training epochs for gru/lstm
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// t-SNE layout of an embedding, for plotting.
    Reduce {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArg,
        /// t-SNE perplexity (overrides the config)
        #[arg(long)]
        perplexity: Option<f64>,
        /// t-SNE output dimensions
        #[arg(long = "out-dims")]
        out_dims: Option<usize>,
    },
    /// k-means over an embedding.
    Cluster {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArg,
        /// Level whose code count sets k when --k is absent.
        #[arg(long, default_value_t = 1)]
        level: u8,
        /// Number of clusters
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        tsne: TsneArgs,
    },
    /// Flat stratification at each configured level.
    Stratify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArg,
        /// Comma-separated taxonomy levels, e.g. 1,2,4
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u8>>,
        /// Number of clusters
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        tsne: TsneArgs,
    },
    /// Iterative top-down hierarchy rediscovery.
    Rediscover {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArg,
        /// Clusters smaller than this are not split further
        #[arg(long = "min-cluster-size")]
        min_cluster_size: Option<usize>,
    },
    /// Label clusters from training stays and score held-out stays.
    AssignLabels {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArg,
        /// Comma-separated labeling strategies
        #[arg(long, value_enum, value_delimiter = ',')]
        strategy: Option<Vec<StrategyArg>>,
        /// Comma-separated taxonomy levels, e.g. 1,2,4
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<u8>>,
    },
    /// Score a clusters file against one taxonomy level.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArg,
        /// Taxonomy level to score against
        #[arg(long, default_value_t = 1)]
        level: u8,
    },
    /// Random search over k and t-SNE settings, scored on validation stays.
    Hpo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        method: MethodArg,
        /// Number of random-search trials
        #[arg(long)]
        trials: Option<usize>,
        /// Taxonomy level the search optimizes
        #[arg(long)]
        level: Option<u8>,
    },
    /// Aggregate every results file into report.json and report.csv.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Preprocess { .. } => "preprocess",
            Command::Embed { .. } => "embed",
            Command::Reduce { .. } => "reduce",
            Command::Cluster { .. } => "cluster",
            Command::Stratify { .. } => "stratify",
            Command::Rediscover { .. } => "rediscover",
            Command::AssignLabels { .. } => "assign-labels",
            Command::Evaluate { .. } => "evaluate",
            Command::Hpo { .. } => "hpo",
            Command::Report { .. } => "report",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Ingest { common, .. }
            | Command::Preprocess { common }
            | Command::Embed { common, .. }
            | Command::Reduce { common, .. }
            | Command::Cluster { common, .. }
            | Command::Stratify { common, .. }
            | Command::Rediscover { common, .. }
            | Command::AssignLabels { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Hpo { common, .. }
            | Command::Report { common } => common,
        }
    }
}
