//! One flat JSON configuration for the whole pipeline: generator, splits and
//! training read their sections from it, and `key=value` overrides merge on
//! top of the file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::autodiff::{InfoNceDirection, SoftmaxAxes};
use crate::data::{SplitMode, SplitSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::objective::KlDirection;
use crate::train::TrainConfig;

/// Which split recipe a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitModeName {
    Full,
    FewShot,
    ZeroShot,
}

/// Every knob of a run. One `seed` drives data generation, splitting and
/// training so a single integer pins the whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // Synthetic data.
    pub samples: usize,
    pub items: usize,
    pub dim: usize,
    pub item_separation: f64,
    pub score_separation: f64,
    pub noise_sigma: f64,
    pub annotation_noise_sigma: f64,
    // Splits.
    pub split: SplitModeName,
    pub few_shot_k: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    // Optimization.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_finetune: f64,
    pub lr_new: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub init_sigma: f64,
    pub grad_clip: Option<f64>,
    // Ablation switches.
    pub no_cross: bool,
    pub no_hier_units: bool,
    pub video_only: bool,
    pub text_only: bool,
    pub ce_loss: bool,
    // Variant switches.
    pub kl_direction: KlDirection,
    pub strict_mask: bool,
    pub learnable_temperature: bool,
    pub hard_targets: bool,
    pub c2_softmax: SoftmaxAxes,
    pub infonce_direction: InfoNceDirection,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            samples: synth.samples,
            items: synth.items,
            dim: synth.dim,
            item_separation: synth.item_separation,
            score_separation: synth.score_separation,
            noise_sigma: synth.noise_sigma,
            annotation_noise_sigma: synth.annotation_noise_sigma,
            split: SplitModeName::Full,
            few_shot_k: 1,
            train_frac: 0.7,
            val_frac: 0.1,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr_finetune: train.lr_finetune,
            lr_new: train.lr_new,
            weight_decay: train.weight_decay,
            warmup_epochs: train.warmup_epochs,
            lambda1: train.lambda1,
            lambda2: train.lambda2,
            init_sigma: train.init_sigma,
            grad_clip: train.grad_clip,
            no_cross: train.no_cross,
            no_hier_units: train.no_hier_units,
            video_only: train.video_only,
            text_only: train.text_only,
            ce_loss: train.ce_loss,
            kl_direction: train.kl_direction,
            strict_mask: train.strict_mask,
            learnable_temperature: train.learnable_temperature,
            hard_targets: train.hard_targets,
            c2_softmax: train.c2_softmax,
            infonce_direction: train.infonce_direction,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            samples: self.samples,
            items: self.items,
            dim: self.dim,
            item_separation: self.item_separation,
            score_separation: self.score_separation,
            noise_sigma: self.noise_sigma,
            annotation_noise_sigma: self.annotation_noise_sigma,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            mode: match self.split {
                SplitModeName::Full => SplitMode::Full,
                SplitModeName::FewShot => SplitMode::FewShot { k: self.few_shot_k },
                SplitModeName::ZeroShot => SplitMode::ZeroShot,
            },
            train_frac: self.train_frac,
            val_frac: self.val_frac,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_finetune: self.lr_finetune,
            lr_new: self.lr_new,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup_epochs,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            seed: self.seed,
            init_sigma: self.init_sigma,
            grad_clip: self.grad_clip,
            no_cross: self.no_cross,
            no_hier_units: self.no_hier_units,
            video_only: self.video_only,
            text_only: self.text_only,
            ce_loss: self.ce_loss,
            kl_direction: self.kl_direction,
            strict_mask: self.strict_mask,
            learnable_temperature: self.learnable_temperature,
            hard_targets: self.hard_targets,
            c2_softmax: self.c2_softmax,
            infonce_direction: self.infonce_direction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth().validate()?;
        self.split_spec().validate()?;
        self.train_config().validate()
    }

    /// Writes the fully resolved configuration as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Reads `path` (missing path or empty file means defaults), then merges the
/// `key=value` overrides on top. Values parse as JSON first and fall back to
/// bare strings, so `lambda1=0.5`, `grad_clip=null` and `split=few_shot` all
/// work. Unknown keys and type mismatches are rejected.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut merged = match path {
        None => Map::new(),
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            if text.trim().is_empty() {
                Map::new()
            } else {
                let value: Value = serde_json::from_str(&text).map_err(|e| Error::Json {
                    path: p.display().to_string(),
                    source: e,
                })?;
                match value {
                    Value::Object(map) => map,
                    other => {
                        return Err(Error::Config(format!(
                            "config root must be a JSON object, got {other}"
                        )))
                    }
                }
            }
        }
    };
    let mut cfg: RunConfig = serde_json::from_value(Value::Object(merged.clone()))
        .map_err(|e| Error::Config(format!("bad configuration: {e}")))?;
    for entry in overrides {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{entry}' is not of the form key=value"))
        })?;
        if key.is_empty() {
            return Err(Error::Config(format!("override '{entry}' has an empty key")));
        }
        let value = serde_json::from_str::<Value>(raw)
            .unwrap_or_else(|_| Value::String(raw.to_string()));
        merged.insert(key.to_string(), value);
        cfg = serde_json::from_value(Value::Object(merged.clone()))
            .map_err(|e| Error::Config(format!("override '{key}': {e}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}
