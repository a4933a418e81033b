use std::fs;
use std::path::{Path, PathBuf};

use hada::featstore::{Split, SyntheticConfig};
use hada::model::ModelConfig;
use hada::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "HADA_SEED";

/// One JSON document describing a run. Every CLI flag overrides a key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub store: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Upstream models to fuse, in order; empty means all in the store.
    pub models: Vec<String>,
    /// Overrides `train.seed` and `synth.seed` when set.
    pub seed: Option<u64>,
    pub score_mode: String,
    pub split: Split,
    pub split_fractions: [f64; 3],
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            store: None,
            out_dir: None,
            models: Vec::new(),
            seed: None,
            score_mode: "weighted".into(),
            split: Split::Test,
            split_fractions: [0.8, 0.1, 0.1],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SyntheticConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Applies `HADA_SEED`, then an explicit seed flag, and propagates the
    /// result to the training and synthetic seeds.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<(), CliError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse().map_err(|_| {
                CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
            self.seed = Some(seed);
        }
        if flag.is_some() {
            self.seed = flag;
        }
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.synth.seed = s;
        }
        Ok(())
    }

    pub fn store_path(&self) -> Result<&Path, CliError> {
        self.store.as_deref().ok_or_else(|| {
            CliError::Usage("no store given (--store or \"store\" in the config)".into())
        })
    }

    pub fn out_path(&self) -> Result<&Path, CliError> {
        self.out_dir.as_deref().ok_or_else(|| {
            CliError::Usage("no output directory given (--out or \"out_dir\")".into())
        })
    }

    /// Prints the effective configuration for provenance.
    pub fn print_header(&self, command: &str) {
        println!("# hada {command}");
        println!(
            "# config {}",
            serde_json::to_string(self).expect("config serializes")
        );
    }
}
