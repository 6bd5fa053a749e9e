//! The pipeline manifest.
//!
//! ```toml
//! seed = 13
//! registry = ["Gene", "Disease"]
//! rules = "rules.tsv"        # or "builtin"; omit for none
//! mode = "aio"               # aio | ind | combined
//!
//! [[corpus]]
//! name = "GeneCorpus"
//! path = "gene.pubtator"
//! format = "pubtator"        # pubtator | conll
//! entity_types = ["Gene"]
//! task = "Gene"              # a type or "ALL"; omit to split by type
//! role = "train"             # train | test
//!
//! [train]
//! max_epochs = 20
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Relative paths are resolved against the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use aioner_core::corpus::SplitConfig;
use aioner_core::predict::DecodeMode;
use aioner_core::scheme::{EntityTypeRegistry, LabelSet, NormalizationRule, TaskTag};
use aioner_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::rules::{parse_rules, retyped_sources};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Pubtator,
    Conll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: CorpusFormat,
    pub entity_types: Vec<String>,
    /// `None` splits the corpus into one single-type view per type.
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub merged: PathBuf,
    pub merge_report: PathBuf,
    pub model: PathBuf,
    pub train_log: PathBuf,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            dir: PathBuf::from("out"),
            merged: PathBuf::from("merged.conll"),
            merge_report: PathBuf::from("merge_report.json"),
            model: PathBuf::from("model.bin"),
            train_log: PathBuf::from("train.jsonl"),
        }
    }
}

impl OutputPaths {
    fn in_dir(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }
    pub fn merged(&self) -> PathBuf {
        self.in_dir(&self.merged)
    }
    pub fn merge_report(&self) -> PathBuf {
        self.in_dir(&self.merge_report)
    }
    pub fn model(&self) -> PathBuf {
        self.in_dir(&self.model)
    }
    pub fn train_log(&self) -> PathBuf {
        self.in_dir(&self.train_log)
    }
}

fn default_registry() -> Vec<String> {
    EntityTypeRegistry::DEFAULT_TYPES.iter().map(|s| s.to_string()).collect()
}

fn default_max_tokens() -> usize {
    SplitConfig::default().max_tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_registry")]
    pub registry: Vec<String>,
    #[serde(default)]
    pub rules: Option<String>,
    #[serde(default)]
    pub mode: DecodeMode,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub keep_longest: bool,
    #[serde(default, rename = "corpus")]
    pub corpora: Vec<CorpusEntry>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::from_toml(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        for c in &mut self.corpora {
            if c.path.is_relative() {
                c.path = base.join(&c.path);
            }
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
        if let Some(r) = &self.rules {
            if r != "builtin" && Path::new(r).is_relative() {
                self.rules = Some(base.join(r).to_string_lossy().into_owned());
            }
        }
    }

    pub fn registry(&self) -> Result<EntityTypeRegistry, PipelineError> {
        if self.registry.is_empty() {
            return Err(PipelineError::Config("registry is empty".into()));
        }
        EntityTypeRegistry::new(self.registry.iter().cloned()).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn label_set(&self) -> Result<LabelSet, PipelineError> {
        Ok(LabelSet::new(self.registry()?))
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            max_tokens: self.max_tokens,
            ..SplitConfig::default()
        }
    }

    pub fn load_rules(&self) -> Result<Vec<NormalizationRule>, PipelineError> {
        match self.rules.as_deref() {
            None => Ok(Vec::new()),
            Some("builtin") => Ok(NormalizationRule::builtin()),
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("rules {path}: {e}")))?;
                parse_rules(&text).map_err(|e| PipelineError::parse(path, e))
            }
        }
    }

    /// Task tag of a manifest entry, `None` when it is to be split by type.
    pub fn task_of(&self, entry: &CorpusEntry) -> Result<Option<TaskTag>, PipelineError> {
        let registry = self.registry()?;
        entry
            .task
            .as_deref()
            .map(|t| registry.parse_task(t).map_err(|e| PipelineError::Config(format!("corpus `{}`: {e}", entry.name))))
            .transpose()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let registry = self.registry()?;
        if self.max_tokens == 0 {
            return Err(PipelineError::Config("max_tokens must be positive".into()));
        }
        self.train.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        let rules = self.load_rules()?;
        let renamed = retyped_sources(&rules);
        let mut names = BTreeSet::new();
        for c in &self.corpora {
            if !names.insert(c.name.as_str()) {
                return Err(PipelineError::Config(format!("duplicate corpus name `{}`", c.name)));
            }
            if c.entity_types.is_empty() {
                return Err(PipelineError::Config(format!("corpus `{}` declares no entity types", c.name)));
            }
            for t in &c.entity_types {
                if !registry.contains(t) && !renamed.contains(&t.as_str()) {
                    return Err(PipelineError::Config(format!(
                        "corpus `{}` declares type `{t}` which is not in the registry ({})",
                        c.name,
                        registry.names().join(", ")
                    )));
                }
            }
            if let Some(TaskTag::Single(t)) = self.task_of(c)? {
                if c.entity_types.iter().any(|d| d != &t && !renamed.contains(&d.as_str())) {
                    return Err(PipelineError::Config(format!("corpus `{}` has task {t} but declares {:?}", c.name, c.entity_types)));
                }
            }
            if !c.path.exists() {
                return Err(PipelineError::Config(format!("corpus `{}`: {} does not exist", c.name, c.path.display())));
            }
        }
        Ok(())
    }

    pub fn corpora_with_role(&self, role: Role) -> impl Iterator<Item = &CorpusEntry> {
        self.corpora.iter().filter(move |c| c.role == role)
    }
}
