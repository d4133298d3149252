//! Run configuration shared by every command-line subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::inference::InferenceConfig;
use crate::knowledge::AcquireConfig;
use crate::learning::{LossConfig, TrainConfig};
use crate::promptgraph::{PromptKind, TokenComposition, DEFAULT_INIT_SIGMA};

/// Everything a run needs. Missing keys take their defaults; unknown keys
/// are rejected. Relative paths resolve against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// One category name per line.
    pub categories: Option<PathBuf>,
    /// Training corpora. Empty means every `corpus_*.jsonl` in `out_dir`.
    pub corpus: Vec<PathBuf>,
    /// Evaluation corpora for `eval --input corpus`.
    pub eval_corpus: Vec<PathBuf>,
    /// Subgroup partition. Defaults to `out_dir/partition.json`.
    pub partition: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Seeds the mock LLM and the prompt initialization.
    pub seed: u64,
    pub prompts: PromptKind,
    /// Band sizes of the hierarchical variant; its total is M for the others.
    pub composition: TokenComposition,
    pub init_sigma: f64,
    pub acquire: AcquireConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            categories: None,
            corpus: Vec::new(),
            eval_corpus: Vec::new(),
            partition: None,
            out_dir: PathBuf::from("run"),
            seed: 0,
            prompts: PromptKind::Hierarchical,
            composition: TokenComposition::default(),
            init_sigma: DEFAULT_INIT_SIGMA,
            acquire: AcquireConfig::default(),
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Composition of the configured prompt variant, `None` for hand-craft.
    pub fn variant_composition(&self) -> Option<TokenComposition> {
        match self.prompts {
            PromptKind::Hierarchical => Some(self.composition),
            kind => kind.composition(self.composition.total()),
        }
    }

    pub fn partition_path(&self) -> PathBuf {
        self.partition.clone().unwrap_or_else(|| self.out_dir.join("partition.json"))
    }

    pub fn categories_path(&self) -> Result<&Path> {
        self.categories
            .as_deref()
            .ok_or_else(|| Error::Config("no categories file given (config key `categories` or --categories)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.d == 0 {
            return Err(Error::Config("encoder.d must be positive".into()));
        }
        if self.composition.total() == 0 {
            return Err(Error::Config("composition has no learnable tokens".into()));
        }
        if !(self.init_sigma > 0.0) {
            return Err(Error::Config(format!("init_sigma must be positive, got {}", self.init_sigma)));
        }
        self.loss.validate()?;
        self.train.validate()?;
        self.inference.validate()
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    /// Writes the resolved config as `<out_dir>/<command>.config.json`.
    pub fn write_resolved(&self, command: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join(format!("{command}.config.json"));
        std::fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
