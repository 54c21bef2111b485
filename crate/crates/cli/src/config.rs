use std::path::{Path, PathBuf};

use anyhow::Context;
use frk_core::pipeline::ReconstructOptions;
use frk_harness::{DatasetOptions, HeatmapSpec};
use serde::Deserialize;

/// Defaults read from `--config`; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub trials: Option<usize>,
    pub phantom_spacing_mm: Option<f64>,
    pub dataset: Option<DatasetOptions>,
    pub recon: Option<ReconstructOptions>,
    pub heatmap: Option<HeatmapSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
