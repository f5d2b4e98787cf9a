use std::path::{Path, PathBuf};

use hiermil::data::{GenConfig, MixedConfig, DEFAULT_RATIOS};
use hiermil::taxonomy::Taxonomy;
use hiermil::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which parts of the framework are switched on. Any subset may be off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub use_iha: bool,
    pub use_uhd: bool,
    pub use_subsite: bool,
    pub use_remix: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_iha: true,
            use_uhd: true,
            use_subsite: true,
            use_remix: true,
        }
    }
}

/// Everything a run needs, as read from a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub taxonomy: Taxonomy,
    pub generator: GenConfig,
    pub mixed: MixedConfig,
    pub split_ratios: [f64; 3],
    pub train: TrainConfig,
    pub ablation: Ablation,
    pub seed: u64,
    pub out: PathBuf,
    /// Dataset manifest for `train`, `eval` and `ablate`.
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            taxonomy: Taxonomy::default(),
            generator: GenConfig::default(),
            mixed: MixedConfig::default(),
            split_ratios: DEFAULT_RATIOS,
            train: TrainConfig::default(),
            ablation: Ablation::default(),
            seed: 0,
            out: PathBuf::from("runs"),
            data: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// The file at `path`, or the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }

    /// Training settings with the ablation flags applied: disabled losses
    /// are dropped, a disabled subsite keeps the gate closed and disabled
    /// remixing sets its probability to zero.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.loss.use_iha &= self.ablation.use_iha;
        t.loss.use_uhd &= self.ablation.use_uhd;
        t.use_subsite &= self.ablation.use_subsite;
        if !self.ablation.use_remix {
            t.remix.remix_probability = 0.0;
        }
        t
    }

    pub fn data_path(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("no dataset: pass --data or set \"data\" in the config".into()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}
