//! TOML config file. Every field is optional; command-line flags win over
//! the file, the file wins over built-in defaults. Each command writes the
//! fully resolved values back out as `effective_config.toml`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub basis: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub pca_fit: PcaFitSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub ablate: AblateSection,
    #[serde(default)]
    pub serve: ServeSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub sigma: Option<f64>,
    pub lr: Option<f64>,
    pub restarts: Option<usize>,
    pub restart_iters: Option<u64>,
    pub main_iters: Option<u64>,
    pub trace_every: Option<u64>,
    pub init_std: Option<f64>,
    pub clamp_probes: Option<bool>,
    pub parallel_restarts: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub oracle: Option<String>,
    pub budget: Option<u64>,
    pub quantize_bits: Option<u32>,
    pub noise_std: Option<f64>,
    pub enroll: Option<String>,
    pub targets: Option<Vec<String>>,
    pub transfer: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaFitSection {
    pub images: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub rank: Option<usize>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub channels: Option<u32>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub pairs: Option<PathBuf>,
    pub recon_dir: Option<PathBuf>,
    pub embedder: Option<String>,
    pub folds: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub k: Option<usize>,
    pub sweep_k: Option<Vec<usize>>,
    pub sweep_sigma: Option<Vec<f64>>,
    pub sweep_restarts: Option<Vec<usize>>,
    pub sweep_main_iters: Option<Vec<u64>>,
    pub trials: Option<u64>,
    pub threads: Option<usize>,
    pub train_size: Option<usize>,
    pub corpus_seed: Option<u64>,
    pub target_embedder: Option<String>,
    pub transfer_embedder: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub bind: Option<String>,
    pub latency_ms: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::general(format!("cannot serialize config: {e}")))?;
        std::fs::write(dir.join("effective_config.toml"), text).map_err(|e| CliError::io(dir, e))
    }
}
