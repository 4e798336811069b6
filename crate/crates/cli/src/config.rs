use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use evaudit_core::audit::{AuditOptions, ChancePolicy, PermutationKind, Thresholds};
use evaudit_core::bridge::DEFAULT_BATCH_SIZE;
use evaudit_core::consequence::ConsequenceSpecs;
use evaudit_core::readers::{InputView, LrHyper};
use serde::{Deserialize, Serialize};

/// Which reader the audit intervenes on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReaderChoice {
    /// TF-IDF + LR for text views, the metadata-majority predictor for
    /// `metadata_only`.
    Internal {
        #[serde(default = "full_view")]
        view: InputView,
        #[serde(default)]
        hyper: LrHyper,
    },
    /// A process speaking the line protocol; `command[0]` is the program.
    External {
        command: Vec<String>,
        #[serde(default)]
        view: Option<InputView>,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

fn full_view() -> InputView {
    InputView::Full
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

impl Default for ReaderChoice {
    fn default() -> Self {
        ReaderChoice::Internal {
            view: InputView::Full,
            hyper: LrHyper::default(),
        }
    }
}

impl ReaderChoice {
    pub fn is_external(&self) -> bool {
        matches!(self, ReaderChoice::External { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default)]
    pub case: Option<String>,
    pub dataset: PathBuf,
    pub schema: PathBuf,
    /// Construction record written by `gen`, copied into provenance.
    #[serde(default)]
    pub generator: Option<PathBuf>,
    #[serde(default)]
    pub reader: ReaderChoice,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub chance: ChancePolicy,
    #[serde(default)]
    pub permutation: PermutationKind,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_views")]
    pub ablation_views: Vec<InputView>,
    /// Hyperparameters of the freshly trained ablation readers.
    #[serde(default)]
    pub ablation_hyper: LrHyper,
    #[serde(default)]
    pub consequences: Option<ConsequenceSpecs>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_k() -> usize {
    8
}

fn default_views() -> Vec<InputView> {
    InputView::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("audit-out")
}

impl AuditConfig {
    pub fn new(dataset: PathBuf, schema: PathBuf) -> Self {
        AuditConfig {
            case: None,
            dataset,
            schema,
            generator: None,
            reader: ReaderChoice::default(),
            k: default_k(),
            seed: 0,
            chance: ChancePolicy::default(),
            permutation: PermutationKind::default(),
            thresholds: Thresholds::default(),
            ablation_views: default_views(),
            ablation_hyper: LrHyper::default(),
            consequences: None,
            out: default_out(),
        }
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: AuditConfig = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset);
        resolve(&mut cfg.schema);
        resolve(&mut cfg.out);
        if let Some(g) = cfg.generator.as_mut() {
            resolve(g);
        }
        Ok(cfg)
    }

    pub fn options(&self) -> AuditOptions {
        AuditOptions {
            k: self.k,
            seed: self.seed,
            chance: self.chance,
            permutation: self.permutation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            bail!("k must be at least 1");
        }
        self.thresholds.validate()?;
        for (what, p) in [("dataset", &self.dataset), ("schema", &self.schema)] {
            if !p.is_file() {
                bail!("{what} file {} does not exist", p.display());
            }
        }
        if let Some(g) = &self.generator {
            if !g.is_file() {
                bail!("generator record {} does not exist", g.display());
            }
        }
        if let ReaderChoice::External { command, .. } = &self.reader {
            if command.is_empty() {
                bail!("external reader needs a command");
            }
        }
        Ok(())
    }
}
