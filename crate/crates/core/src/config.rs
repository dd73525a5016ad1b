//! Flat `key = value` experiment configuration.
//!
//! Values are layered: defaults, then a config file, then the
//! `GAITFRAIL_SEED` environment variable (seed only), then command-line
//! overrides. [`ExperimentConfig::to_text`] writes every effective key so a
//! run can be reproduced from its output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backbones::{BackboneConfig, BackboneKind, FreezeConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::objective::HeadConfig;
use crate::trainer::{check_freeze, TrainConfig};

pub const SEED_ENV: &str = "GAITFRAIL_SEED";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub fold_plan: Option<PathBuf>,
    pub k: usize,
    pub split_seed: u64,
    pub fold: usize,
    pub backbone: BackboneKind,
    /// `toy` or `full`.
    pub scale: String,
    pub freeze: String,
    pub output: Option<PathBuf>,
    pub head: HeadConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            fold_plan: None,
            k: 5,
            split_seed: 7,
            fold: 0,
            backbone: BackboneKind::SwinGait,
            scale: "toy".into(),
            freeze: "M2".into(),
            output: None,
            head: HeadConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        let t = &mut self.train;
        let a = &mut t.augment;
        match key {
            "dataset" => self.dataset = opt_path(value),
            "fold_plan" => self.fold_plan = opt_path(value),
            "output" => self.output = opt_path(value),
            "k" => self.k = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "fold" => self.fold = parse(key, value)?,
            "backbone" => self.backbone = value.parse()?,
            "scale" => self.scale = value.trim().to_string(),
            "freeze" => self.freeze = value.trim().to_ascii_uppercase(),
            "parts" => self.head.parts = parse(key, value)?,
            "embed_dim" => self.head.embed_dim = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "clip_length" => t.clip_length = parse(key, value)?,
            "frame_skip" => t.frame_skip = parse(key, value)?,
            "eval_clip_length" => t.eval_clip_length = parse(key, value)?,
            "total_iterations" => t.total_iterations = parse(key, value)?,
            "eval_interval" => t.eval_interval = parse(key, value)?,
            "class_weighting" => t.class_weighting = parse_bool(key, value)?,
            "init_checkpoint" => t.init_checkpoint = opt_path(value),
            "ce_weight" => t.loss.ce_weight = parse(key, value)?,
            "triplet_weight" => t.loss.triplet_weight = parse(key, value)?,
            "margin" => t.loss.margin = parse(key, value)?,
            "augment.affine" => a.affine = parse_bool(key, value)?,
            "augment.affine_rotation" => a.affine_rotation = parse(key, value)?,
            "augment.affine_translate" => a.affine_translate = parse(key, value)?,
            "augment.affine_scale_min" => a.affine_scale.0 = parse(key, value)?,
            "augment.affine_scale_max" => a.affine_scale.1 = parse(key, value)?,
            "augment.flip_prob" => a.flip_prob = parse(key, value)?,
            "augment.perspective" => a.perspective = parse_bool(key, value)?,
            "augment.perspective_scale" => a.perspective_scale = parse(key, value)?,
            "augment.cut" => a.cut = parse_bool(key, value)?,
            "augment.cut_max_fraction" => a.cut_max_fraction = parse(key, value)?,
            "augment.rotation" => a.rotation = parse_bool(key, value)?,
            "augment.rotation_max" => a.rotation_max = parse(key, value)?,
            "augment.dropout_prob" => a.dropout_prob = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Layers a config file, the seed from the environment and CLI
    /// overrides over the defaults, in increasing precedence.
    pub fn layered(file: Option<&Path>, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        if let Some(seed) = env_seed {
            cfg.set("seed", seed)
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{seed}` is not an unsigned integer")))?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let t = &self.train;
        let a = &t.augment;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("dataset", path(&self.dataset));
        kv("fold_plan", path(&self.fold_plan));
        kv("output", path(&self.output));
        kv("k", self.k.to_string());
        kv("split_seed", self.split_seed.to_string());
        kv("fold", self.fold.to_string());
        kv("backbone", self.backbone.to_string());
        kv("scale", self.scale.clone());
        kv("freeze", self.freeze.clone());
        kv("parts", self.head.parts.to_string());
        kv("embed_dim", self.head.embed_dim.to_string());
        kv("seed", t.seed.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("beta1", t.beta1.to_string());
        kv("beta2", t.beta2.to_string());
        kv("epsilon", t.epsilon.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("clip_length", t.clip_length.to_string());
        kv("frame_skip", t.frame_skip.to_string());
        kv("eval_clip_length", t.eval_clip_length.to_string());
        kv("total_iterations", t.total_iterations.to_string());
        kv("eval_interval", t.eval_interval.to_string());
        kv("class_weighting", t.class_weighting.to_string());
        kv("init_checkpoint", path(&t.init_checkpoint));
        kv("ce_weight", t.loss.ce_weight.to_string());
        kv("triplet_weight", t.loss.triplet_weight.to_string());
        kv("margin", t.loss.margin.to_string());
        kv("augment.affine", a.affine.to_string());
        kv("augment.affine_rotation", a.affine_rotation.to_string());
        kv("augment.affine_translate", a.affine_translate.to_string());
        kv("augment.affine_scale_min", a.affine_scale.0.to_string());
        kv("augment.affine_scale_max", a.affine_scale.1.to_string());
        kv("augment.flip_prob", a.flip_prob.to_string());
        kv("augment.perspective", a.perspective.to_string());
        kv("augment.perspective_scale", a.perspective_scale.to_string());
        kv("augment.cut", a.cut.to_string());
        kv("augment.cut_max_fraction", a.cut_max_fraction.to_string());
        kv("augment.rotation", a.rotation.to_string());
        kv("augment.rotation_max", a.rotation_max.to_string());
        kv("augment.dropout_prob", a.dropout_prob.to_string());
        out
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            backbone: BackboneConfig::preset(self.backbone, &self.scale)?,
            head: self.head.clone(),
        })
    }

    pub fn freeze_config(&self) -> Result<FreezeConfig> {
        FreezeConfig::preset(&self.freeze)
    }

    /// Checks training values, model geometry and that the freeze preset
    /// belongs to the backbone.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let model = self.model_config()?;
        model.backbone.validate()?;
        let (_, h, _) = model.backbone.output_shape();
        if self.head.parts == 0 || h % self.head.parts != 0 {
            return Err(Error::Config(format!(
                "feature height {h} does not split into {} parts",
                self.head.parts
            )));
        }
        check_freeze(&model, &self.freeze_config()?)?;
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2 (got {})", self.k)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("backbone", "deepgaitv2").unwrap();
        cfg.set("freeze", "d3").unwrap();
        cfg.set("learning_rate", "0.0003").unwrap();
        cfg.set("augment.flip_prob", "0.25").unwrap();
        cfg.set("dataset", "/data/cohort/manifest.csv").unwrap();
        cfg.set("class_weighting", "yes").unwrap();
        let back = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.freeze, "D3");
    }

    #[test]
    fn precedence_is_cli_env_file_default() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        std::fs::write(&file, "# comment\nseed = 11\nbatch_size = 2\n").unwrap();
        let c = ExperimentConfig::layered(Some(&file), None, &[]).unwrap();
        assert_eq!((c.train.seed, c.train.batch_size), (11, 2));
        let c = ExperimentConfig::layered(Some(&file), Some("12"), &[]).unwrap();
        assert_eq!(c.train.seed, 12);
        let cli = vec![("seed".to_string(), "13".to_string())];
        let c = ExperimentConfig::layered(Some(&file), Some("12"), &cli).unwrap();
        assert_eq!(c.train.seed, 13);
        assert_eq!(ExperimentConfig::layered(None, None, &[]).unwrap().train.seed, 0);
        assert!(ExperimentConfig::layered(None, Some("x"), &[]).is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_mismatched_freeze() {
        assert!(matches!(ExperimentConfig::from_text("colour = red"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_text("seed 3"), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_text("backbone = deepgaitv2\nfreeze = M3").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_text("backbone = deepgaitv2\nfreeze = D1").unwrap();
        cfg.validate().unwrap();
        let cfg = ExperimentConfig::from_text("eval_interval = 300").unwrap();
        assert!(cfg.validate().is_err());
    }
}
