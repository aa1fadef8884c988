//! Run configuration: one TOML file covering every subcommand.
//!
//! Precedence, lowest to highest: built-in defaults, the `--config` file,
//! command-line flags. The resolved value is written back as
//! `run_config.toml` into every output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use psvma_core::data::GenConfig;
use psvma_core::gradprobe::ProbeConfig;
use psvma_core::model::ModelConfig;
use psvma_core::trainer::TrainConfig;
use psvma_oracle::DEFAULT_H;

use crate::exit::CliError;

pub const ECHO_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub h: f64,
    pub threshold: f64,
    /// Elements probed per parameter without `--full`.
    pub per_param: usize,
    pub probe: ProbeConfig,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            h: DEFAULT_H,
            threshold: 1e-4,
            per_param: 4,
            probe: ProbeConfig::small(),
        }
    }
}

/// The command line that produced an output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Invocation {
    pub command: String,
    pub args: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, replaces `data.seed`, `model.seed` and `train.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub data: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gradcheck: GradcheckConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invocation: Option<Invocation>,
}

impl RunConfig {
    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    /// Pushes `seed` into every component that draws random numbers.
    pub fn apply_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed.or(self.seed) {
            self.seed = Some(s);
            self.data.seed = s;
            self.model.seed = s;
            self.train.seed = s;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }

    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(ECHO_FILE);
        fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))
    }
}
