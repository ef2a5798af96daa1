use std::fs;
use std::path::Path;

use anyhow::Context;
use clozemem::corpus::SyntheticConfig;
use clozemem::models::ModelConfig;
use clozemem::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{Common, ModelArgs, OptimArgs};

/// Settings shared by all commands. The run seed is copied into every
/// component seed, so one number reproduces the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 13,
            synthetic: SyntheticConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then `--seed`.
    pub fn load(common: &Common) -> anyhow::Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        cfg.synthetic.seed = cfg.seed;
        cfg.model.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn apply_model(&mut self, a: &ModelArgs) {
        let m = &mut self.model;
        set(&mut m.variant, a.variant);
        set(&mut m.anonymized, a.anonymized);
        set(&mut m.hops, a.hops);
        set(&mut m.dim, a.dim);
        set(&mut m.radius, a.radius);
        set(&mut m.memory_size, a.memory_size);
        set(&mut m.key_value, a.key_value);
        set(&mut m.pretrained_output, a.pretrained_output);
        set(&mut m.min_count, a.min_count);
    }

    pub fn apply_optim(&mut self, a: &OptimArgs) {
        let t = &mut self.train;
        set(&mut t.lr, a.lr);
        set(&mut t.epochs, a.epochs);
        set(&mut t.batch_size, a.batch_size);
        set(&mut t.selection, a.selection.map(Into::into));
    }
}

pub fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> anyhow::Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
