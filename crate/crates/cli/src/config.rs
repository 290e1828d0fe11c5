//! Run configuration: defaults, then a JSON file, then `SCADAVAE_*`
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use scadavae::dataio::ColumnMap;
use scadavae::training::TrainConfig;
use scadavae::vae::{Sampling, VaeConfig};
use scadavae::{Error, Result};

/// Prefix of environment overrides; `__` separates nested keys, so
/// `SCADAVAE_TRAIN__EPOCHS=5` sets `train.epochs`.
pub const ENV_PREFIX: &str = "SCADAVAE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single seed for every random stream; when unset the per-module seeds apply.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub columns: ColumnMap,
    pub model: Option<PathBuf>,
    pub lrp: Option<PathBuf>,
    pub network_meta: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub vae: VaeConfig,
    pub train: TrainConfig,
    /// Trailing share of training rows held out for validation ELBO.
    pub valid_fraction: Option<f64>,
    /// Adam steps for `train --online`; one pass over the windows when unset.
    pub online_steps: Option<usize>,
    pub thresholds: Vec<f64>,
    pub quantile: Option<f64>,
    pub sampling: Sampling,
    pub smoothing_hours: usize,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: PathBuf::from("out"),
            data: None,
            columns: ColumnMap::labelled(),
            model: None,
            lrp: None,
            network_meta: None,
            scenario: None,
            vae: VaeConfig::default(),
            train: TrainConfig::default(),
            valid_fraction: None,
            online_steps: None,
            thresholds: Vec::new(),
            quantile: None,
            sampling: Sampling::Mode,
            smoothing_hours: 48,
            svg: false,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `file` (if any) and the given environment pairs.
    pub fn load(file: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let overlay: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut tree, overlay);
        }
        for (key, raw) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(str::to_lowercase).collect();
            if path.iter().any(String::is_empty) {
                return Err(Error::Config(format!("malformed override {key}")));
            }
            let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
            set_path(&mut tree, &path, value);
        }
        serde_json::from_value(tree).map_err(|e| Error::Config(format!("configuration: {e}")))
    }

    /// Pushes the run seed into every seeded component.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.vae.seed = s;
            self.train.seed = s;
            if let Sampling::Mc { samples, .. } = self.sampling {
                self.sampling = Sampling::Mc { samples, seed: s };
            }
        }
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(tree: &mut Value, path: &[String], value: Value) {
    let mut node = tree;
    for key in path {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node = node
            .as_object_mut()
            .expect("object")
            .entry(key.clone())
            .or_insert(Value::Null);
    }
    *node = value;
}
