//! Run configuration: JSON with flat dotted keys, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crsn::error::{Error, Result};
use crsn::spectral::SpectralConfig;
use crsn::train::TrainConfig;

pub const DATA_DIR_ENV: &str = "CRSN_DATA_DIR";
pub const DEFAULT_MIRROR: &str = "https://storage.googleapis.com/cvdf-datasets/mnist/";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data_dir: None, checkpoint: PathBuf::from("out/crsn.ckpt"), out_dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    pub download: bool,
    pub url: String,
    /// Check lengths and SHA-256 digests against the official release.
    pub verify: bool,
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions { download: false, url: DEFAULT_MIRROR.into(), verify: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: SpectralConfig,
    pub train: TrainConfig,
    pub paths: Paths,
    pub data: DataOptions,
    pub classes: usize,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: SpectralConfig::default(),
            train: TrainConfig::default(),
            paths: Paths::default(),
            data: DataOptions::default(),
            classes: 10,
            precision: Precision::F64,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

/// Writes `value` at the dotted `key` inside `root`, creating objects as needed.
fn insert_dotted(root: &mut Map<String, Value>, key: &str, value: Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(invalid(format!("malformed key `{key}`")));
        }
        if parts.peek().is_none() {
            node.insert(part.to_string(), value);
            return Ok(());
        }
        let child = node.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        node = child.as_object_mut().ok_or_else(|| invalid(format!("key `{key}` descends into a scalar")))?;
    }
    Ok(())
}

/// Deep merge: objects merge key by key, anything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `key=value`; the value is read as JSON when possible, else as a string.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s.split_once('=').ok_or_else(|| invalid(format!("expected key=value, got `{s}`")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Defaults, then the flat-keyed file, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut flat = Map::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
            if !text.trim().is_empty() {
                let v: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("config is not JSON: {e}")))?;
                let obj = v.as_object().ok_or_else(|| invalid("config must be a JSON object"))?;
                for (k, v) in obj {
                    insert_dotted(&mut flat, k, v.clone())?;
                }
            }
        }
        for (k, v) in overrides {
            insert_dotted(&mut flat, k, v.clone())?;
        }
        let mut merged = serde_json::to_value(RunConfig::default())?;
        merge(&mut merged, Value::Object(flat));
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| invalid(e.to_string()))?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Explicit setting, then the environment, then `data/mnist`.
    pub fn data_dir(&self) -> PathBuf {
        self.paths
            .data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/mnist"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "{}").unwrap();
        let cfg = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.n_total, 1000);
        assert_eq!(cfg.model.n_nonlinear, 800);
        assert_eq!(cfg.model.window, 20);
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train.epochs": 2, "model.seed": 9, "paths.out_dir": "x"}"#).unwrap();
        let cfg = RunConfig::load(Some(&p), &[parse_assignment("train.epochs=5").unwrap()]).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.model.seed, 9);
        assert_eq!(cfg.paths.out_dir, PathBuf::from("x"));
    }

    #[test]
    fn periods_accept_inf() {
        let o = parse_assignment(r#"model.periods=["inf", 4]"#).unwrap();
        let n = parse_assignment("model.n_fixed=2").unwrap();
        let cfg = RunConfig::load(None, &[o, n]).unwrap();
        assert_eq!(cfg.model.periods.len(), 2);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::load(None, &[parse_assignment("train.bogus=1").unwrap()]).is_err());
        assert!(RunConfig::load(None, &[parse_assignment("model.n_total=1").unwrap()]).is_err());
        assert!(RunConfig::load(None, &[parse_assignment("train.learning_rate=-1").unwrap()]).is_err());
    }
}
