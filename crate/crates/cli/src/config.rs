//! JSON run configuration. Every block has defaults, so `{}` is a valid
//! config; unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use aclkit::attack::AttackConfig;
use aclkit::corruption::CorruptionKind;
use aclkit::training::TrainConfig;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory holding `manifest.csv`.
    pub dataset: Option<PathBuf>,
    pub output: PathBuf,
    /// Single source of randomness; copied into the training block.
    pub seed: u64,
    pub gen: GenBlock,
    pub corrupt: CorruptBlock,
    pub attack: AttackBlock,
    pub train: TrainBlock,
    pub eval: EvalBlock,
    pub report: ReportBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            output: PathBuf::from("out"),
            seed: 0,
            gen: GenBlock::default(),
            corrupt: CorruptBlock::default(),
            attack: AttackBlock::default(),
            train: TrainBlock::default(),
            eval: EvalBlock::default(),
            report: ReportBlock::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenBlock {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
}

impl Default for GenBlock {
    fn default() -> Self {
        Self { classes: 4, per_class: 500, size: 32 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptBlock {
    pub kind: Option<CorruptionKind>,
    pub severity: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackBlock {
    pub checkpoint: Option<PathBuf>,
    pub config: AttackConfig,
}

impl Default for AttackBlock {
    fn default() -> Self {
        Self { checkpoint: None, config: AttackConfig::eval_default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    Standard,
    #[default]
    Acl,
}

impl Recipe {
    pub fn label(self) -> &'static str {
        match self {
            Recipe::Standard => "Standard training",
            Recipe::Acl => "ACL",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub recipe: Recipe,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub checkpoint: Option<PathBuf>,
    /// Column title in reports; defaults to the checkpoint's file stem.
    pub label: Option<String>,
    /// PGD settings for the adversarial score; `null` skips it.
    pub attack: Option<AttackConfig>,
    /// Also write the 95 corrupted copies under `<output>/corrupted`.
    pub materialize: bool,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            checkpoint: None,
            label: None,
            attack: Some(AttackConfig::eval_default()),
            materialize: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportBlock {
    pub records: Vec<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn dataset(&self) -> Result<&Path> {
        self.dataset.as_deref().context("no dataset given (set \"dataset\" or pass --dataset)")
    }
}
