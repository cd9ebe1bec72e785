//! Experiment configuration: a sectioned `key = value` file (TOML subset).
//!
//! ```text
//! [run]
//! mode = "bilingual"        # bilingual | multilingual | backtranslation
//! seed = 1
//! output_dir = "run"
//!
//! [data]
//! train_src = "prep/train.src"
//! train_tgt = "prep/train.tgt"
//! dev_src = "prep/dev.src"
//! dev_tgt = "prep/dev.tgt"
//! vocab = "prep/vocab.txt"
//!
//! [model]
//! layers = 2
//!
//! [train]
//! max_steps = 2000
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use simtrans::model::TransformerConfig;
use simtrans::numerics::{AdamConfig, LrSchedule};
use simtrans::training::TrainConfig;

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Bilingual,
    Multilingual,
    Backtranslation,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub train_src: Option<PathBuf>,
    pub train_tgt: Option<PathBuf>,
    pub dev_src: Option<PathBuf>,
    pub dev_tgt: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub src_lang: Option<String>,
    pub tgt_lang: Option<String>,
    /// Monolingual target-side text (backtranslation mode).
    pub mono: Option<PathBuf>,
    /// Target-to-source model used to back-translate `mono`.
    pub reverse_checkpoint: Option<PathBuf>,
    /// Keep this many monolingual sentences after a seeded shuffle; 0 keeps all.
    pub mono_subset: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_positions: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub max_steps: Option<u64>,
    pub validate_every: Option<u64>,
    pub lr: Option<f64>,
    pub warmup: Option<u64>,
    pub label_smoothing: Option<f64>,
    pub dropout: Option<f64>,
    pub clip_norm: Option<f64>,
    pub max_tokens: Option<usize>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub valid_beam: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Data(format!("config {}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        resolve(&mut cfg.run.output_dir);
        for p in [
            &mut cfg.data.train_src,
            &mut cfg.data.train_tgt,
            &mut cfg.data.dev_src,
            &mut cfg.data.dev_tgt,
            &mut cfg.data.vocab,
            &mut cfg.data.mono,
            &mut cfg.data.reverse_checkpoint,
        ] {
            resolve(p);
        }
        Ok(cfg)
    }

    /// Architecture with the configured overrides; `d_ff` defaults to `4·d_model`.
    pub fn model_config(&self, vocab_size: usize) -> TransformerConfig {
        let base = TransformerConfig::full_scale(vocab_size);
        let m = &self.model;
        let d_model = m.d_model.unwrap_or(base.d_model);
        TransformerConfig {
            num_layers: m.layers.unwrap_or(base.num_layers),
            num_heads: m.heads.unwrap_or(base.num_heads),
            d_model,
            d_ff: m.d_ff.unwrap_or(4 * d_model),
            max_positions: m.max_positions.unwrap_or(base.max_positions),
            ..base
        }
    }

    pub fn train_config(&self, seed: u64, threads: usize) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let t = &self.train;
        let schedule = LrSchedule::new(
            t.lr.unwrap_or(d.schedule.base_rate()),
            t.warmup.unwrap_or(d.schedule.warmup_steps()),
        )
        .map_err(|e| CliError::Usage(format!("[train] {e}")))?;
        let a = AdamConfig::default();
        let cfg = TrainConfig {
            max_steps: t.max_steps.unwrap_or(d.max_steps),
            validate_every: t.validate_every.unwrap_or(d.validate_every),
            adam: AdamConfig {
                beta1: t.beta1.unwrap_or(a.beta1),
                beta2: t.beta2.unwrap_or(a.beta2),
                eps: t.adam_eps.unwrap_or(a.eps),
                weight_decay: t.weight_decay.unwrap_or(a.weight_decay),
            },
            schedule,
            label_smoothing: t.label_smoothing.unwrap_or(d.label_smoothing),
            dropout: t.dropout.unwrap_or(d.dropout),
            clip_norm: t.clip_norm.unwrap_or(d.clip_norm),
            max_tokens: t.max_tokens.unwrap_or(d.max_tokens),
            seed,
            valid_beam: t.valid_beam.unwrap_or(d.valid_beam),
            threads,
        };
        cfg.validate().map_err(|e| CliError::Usage(format!("[train] {e}")))?;
        Ok(cfg)
    }
}
