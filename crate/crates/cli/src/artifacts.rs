//! Run-directory layout, provenance stamps and atomic file output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tsb_core::pipeline::{RunConfig, CONFIG_SCHEMA_VERSION};
use tsb_core::rng::fnv1a64;

use crate::error::{CliError, Result};

pub const TIMESERIES: &str = "timeseries.csv";
pub const STATICS: &str = "static.csv";
pub const LABELS: &str = "labels.csv";
pub const TAXONOMY: &str = "taxonomy.tsv";
pub const SPLIT: &str = "split.csv";
pub const PARAMS: &str = "preprocess_params.json";
pub const PREPARED: &str = "prepared.json";
pub const RESULTS_DIR: &str = "results";

/// JSON artifact body with its provenance stamp.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Value,
    pub data: T,
}

/// Hash of the resolved config with the path section removed, so that the
/// same settings hash identically whichever directory they run in.
pub fn config_hash(cfg: &RunConfig) -> String {
    let bytes = serde_json::to_vec(&portable(cfg)).expect("config serializes");
    format!("{:016x}", fnv1a64(&bytes))
}

pub fn portable(cfg: &RunConfig) -> RunConfig {
    RunConfig { paths: Default::default(), ..cfg.clone() }
}

pub struct RunContext {
    pub subcommand: &'static str,
    pub cfg: RunConfig,
    pub dir: PathBuf,
    pub config_hash: String,
}

impl RunContext {
    pub fn new(subcommand: &'static str, cfg: RunConfig, dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(dir.join(RESULTS_DIR)).map_err(|e| CliError::io(&dir, e))?;
        let config_hash = config_hash(&cfg);
        Ok(Self { subcommand, cfg, dir, config_hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn provenance(&self) -> Value {
        json!({
            "subcommand": self.subcommand,
            "version": env!("CARGO_PKG_VERSION"),
            "config_schema": CONFIG_SCHEMA_VERSION,
            "config_hash": self.config_hash,
            "seed": self.cfg.seed,
        })
    }

    pub fn header(&self) -> String {
        format!(
            "# tsb {} version={} config={} seed={}\n",
            self.subcommand,
            env!("CARGO_PKG_VERSION"),
            self.config_hash,
            self.cfg.seed
        )
    }

    /// Writes `body` behind a provenance comment line.
    pub fn write_text(&self, name: &str, body: &str) -> Result<()> {
        write_atomic(&self.path(name), format!("{}{body}", self.header()).as_bytes())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, data: &T, pretty: bool) -> Result<()> {
        let stamped = Stamped { provenance: self.provenance(), data };
        let path = self.path(name);
        let mut bytes = if pretty { serde_json::to_vec_pretty(&stamped) } else { serde_json::to_vec(&stamped) }
            .map_err(|e| CliError::Io { path: path.display().to_string(), reason: e.to_string() })?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)
    }

    pub fn read(&self, name: &str, what: &'static str, producer: &'static str) -> Result<(PathBuf, String)> {
        let path = self.path(name);
        if !path.exists() {
            return Err(CliError::Missing { what, path: path.display().to_string(), producer });
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok((path, text))
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, what: &'static str, producer: &'static str) -> Result<T> {
        let (path, text) = self.read(name, what, producer)?;
        let stamped: Stamped<T> = serde_json::from_str(&text).map_err(|e| CliError::malformed(&path, e))?;
        Ok(stamped.data)
    }
}

/// Temp file in the target directory, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.run_dir = Some("elsewhere".into());
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = RunConfig { seed: 9, ..a.clone() };
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
