//! TOML run configuration: one optional section per subcommand, every key
//! optional. Flags override config values; unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub extract: ExtractSection,
    #[serde(default)]
    pub bayes: BayesSection,
    #[serde(default)]
    pub unroll: UnrollSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub export_ply: ExportPlySection,
}

impl RunConfig {
    /// Loads and parses a config file; all failures are usage errors.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub bins: Option<usize>,
    pub ppp: Option<f64>,
    pub sbr: Option<f64>,
    pub irf_sigma: Option<f64>,
    pub scene: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub truth_out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSection {
    pub cube: Option<PathBuf>,
    pub irf_sigma: Option<f64>,
    pub scales: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesSection {
    pub cube: Option<PathBuf>,
    pub irf_sigma: Option<f64>,
    pub scales: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub bandwidth: Option<f64>,
    pub radius: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub out: Option<PathBuf>,
    pub uncertainty: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnrollSection {
    pub cube: Option<PathBuf>,
    pub irf_sigma: Option<f64>,
    pub weights: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub uncertainty: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub data: Option<PathBuf>,
    pub irf_sigma: Option<f64>,
    pub stages: Option<usize>,
    pub scales: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_halve_epoch: Option<usize>,
    pub patch_size: Option<usize>,
    pub patch_stride: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub loss_out: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub pred: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub canny_low: Option<f64>,
    pub canny_high: Option<f64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportPlySection {
    pub depth: Option<PathBuf>,
    pub intensity: Option<PathBuf>,
    pub bins: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}
