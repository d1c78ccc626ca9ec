//! Run configuration recorded next to every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bos_topics::model::FitParams;
use bos_topics::triplets::FtParams;
use clap::Args;
use serde::{Deserialize, Serialize};

/// Every parameter and path that went into an artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub n_s: usize,
    pub k: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub f_pos: f64,
    pub f_tri: f64,
    pub n_neg: usize,
    pub margin: f64,
    pub ft_epochs: usize,
    pub top_n: usize,
    pub corpus: Option<String>,
    pub embeddings: Option<String>,
    pub provider: Option<String>,
    pub finetune: Option<String>,
    pub model: Option<String>,
    pub reference: Option<String>,
    pub output: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitParams::default();
        let ft = FtParams::default();
        RunConfig {
            command: String::new(),
            seed: 0,
            n_s: fit.n_s,
            k: fit.k,
            alpha: fit.alpha,
            epochs: fit.epochs,
            f_pos: ft.f_pos,
            f_tri: ft.f_tri,
            n_neg: ft.n_neg,
            margin: ft.margin,
            ft_epochs: ft.epochs,
            top_n: 10,
            corpus: None,
            embeddings: None,
            provider: None,
            finetune: None,
            model: None,
            reference: None,
            output: None,
        }
    }
}

impl RunConfig {
    pub fn fit_params(&self) -> FitParams {
        FitParams {
            k: self.k,
            alpha: self.alpha,
            epochs: self.epochs,
            n_s: self.n_s,
            seed: self.seed,
        }
    }

    pub fn ft_params(&self) -> FtParams {
        FtParams {
            f_pos: self.f_pos,
            f_tri: self.f_tri,
            n_neg: self.n_neg,
            margin: self.margin,
            epochs: self.ft_epochs,
            seed: self.seed,
        }
    }

    /// Read the config embedded in an artifact (`run_config` field) or a bare config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(inner) = value.get_mut("run_config") {
            value = inner.take();
        }
        serde_json::from_value(value).with_context(|| format!("config {} has unexpected fields", path.display()))
    }

    /// Fail when an output path would overwrite one of the inputs.
    pub fn check_distinct(&self) -> Result<()> {
        let Some(out) = &self.output else { return Ok(()) };
        for input in [&self.corpus, &self.embeddings, &self.model, &self.reference].into_iter().flatten() {
            if Path::new(input) == Path::new(out) {
                bail!("output path {out} is also an input");
            }
        }
        Ok(())
    }
}

/// Sidecar holding the run config of artifacts that cannot embed it.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

/// Parameter flags shared by all subcommands. Unset flags fall back to
/// `--config`, then to the defaults.
#[derive(Debug, Default, Args)]
pub struct Params {
    /// Take unset parameters and paths from this config or artifact.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sentences per group.
    #[arg(long = "n-s")]
    pub n_s: Option<usize>,
    /// Number of topics.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Inference epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Fraction of triplets dropped for distant anchor and positive.
    #[arg(long = "f-pos")]
    pub f_pos: Option<f64>,
    /// Fraction of triplets dropped for a close negative.
    #[arg(long = "f-tri")]
    pub f_tri: Option<f64>,
    /// Negatives per anchor-positive pair.
    #[arg(long = "n-neg")]
    pub n_neg: Option<usize>,
    /// Triplet loss margin passed to the trainer.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Fine-tuning epochs passed to the trainer.
    #[arg(long = "ft-epochs")]
    pub ft_epochs: Option<usize>,
    /// Words listed per topic.
    #[arg(long = "top-n")]
    pub top_n: Option<usize>,
}

impl Params {
    pub fn resolve(&self, command: &str) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.command = command.to_owned();
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { cfg.$f = v; } )* };
        }
        apply!(seed, n_s, k, alpha, epochs, f_pos, f_tri, n_neg, margin, ft_epochs, top_n);
        Ok(cfg)
    }
}

/// Take a value from the flag, else from the config; record it in the config.
pub fn required_arg(flag: &Option<String>, slot: &mut Option<String>, name: &str) -> Result<String> {
    match optional_arg(flag, slot) {
        Some(v) => Ok(v),
        None => bail!("missing required --{name}"),
    }
}

/// Like [`required_arg`] for optional values.
pub fn optional_arg(flag: &Option<String>, slot: &mut Option<String>) -> Option<String> {
    if let Some(v) = flag {
        *slot = Some(v.clone());
    }
    slot.clone()
}
