//! Run configuration: a flat `key = value` text format plus `key=value`
//! command-line overrides. Every key has a documented default; unknown keys
//! are rejected by name.

use std::path::PathBuf;

use crate::align::{ArchConfig, Temperatures, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::Dtype;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub precision: Dtype,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Binarization thresholds for multi-threshold evaluation.
    pub thresholds: Vec<f64>,
    /// Prompt template file.
    pub prompts: Option<PathBuf>,
    /// Classification softmax temperature.
    pub cls_temperature: f64,
    /// Consistency check only: must equal image_side / 8 when set.
    expected_grid: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            precision: Dtype::F32,
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            thresholds: crate::eval::DEFAULT_THRESHOLDS.to_vec(),
            prompts: None,
            cls_temperature: 1.0,
            expected_grid: None,
        }
    }
}

impl RunConfig {
    /// Desk-scale profile: small model, 64x64 inputs, temperatures and
    /// optimizer tuned for from-scratch training on the synthetic corpus.
    pub fn toy() -> Self {
        RunConfig {
            arch: ArchConfig::toy(),
            train: TrainConfig {
                batch_size: 16,
                learning_rate: 2e-3,
                lr_decay: 0.93,
                epochs: 10,
                temps: Temperatures {
                    tau1: 0.1,
                    tau2: 0.2,
                    tau3: 0.1,
                    tau3_deep_sentence: Some(0.05),
                    ..Temperatures::default()
                },
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn by_profile(name: &str) -> Result<Self> {
        match name {
            "full" | "default" => Ok(RunConfig::default()),
            "toy" => Ok(RunConfig::toy()),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }

    /// Apply a config file: one `key = value` per line, `#` comments.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set a single key. Unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad =
            |what: &str| Error::Config(format!("key {key:?}: expected {what}, got {value:?}"));
        let f64_v = |v: &str| v.parse::<f64>().map_err(|_| bad("a number"));
        let usize_v = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| bad("a non-negative integer"))
        };
        let u64_v = |v: &str| v.parse::<u64>().map_err(|_| bad("a non-negative integer"));
        let bool_v = |v: &str| match v {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(bad("a boolean")),
        };
        match key {
            "precision" => {
                self.precision = Dtype::from_name(value).ok_or_else(|| bad("f32 or f64"))?;
            }
            "dim" => self.arch.dim = usize_v(value)?,
            "image_side" => self.arch.image_side = usize_v(value)?,
            "grid" => self.expected_grid = Some(usize_v(value)?),
            "stage_channels" => {
                let parts: Vec<usize> = value
                    .split(',')
                    .map(|p| p.trim().parse::<usize>().map_err(|_| bad("4 integers")))
                    .collect::<Result<_>>()?;
                if parts.len() != 4 {
                    return Err(bad("exactly 4 comma-separated integers"));
                }
                self.arch.stage_channels = [parts[0], parts[1], parts[2], parts[3]];
            }
            "text_layers" => self.arch.text_layers = usize_v(value)?,
            "max_tokens" => self.arch.max_tokens = usize_v(value)?,
            "word_agg" => match value {
                "sum" => self.arch.word_agg_mean = false,
                "mean" => self.arch.word_agg_mean = true,
                _ => return Err(bad("sum or mean")),
            },
            "tau1" => self.train.temps.tau1 = f64_v(value)?,
            "tau2" => self.train.temps.tau2 = f64_v(value)?,
            "tau3" => self.train.temps.tau3 = f64_v(value)?,
            "tau3_sw" => self.train.temps.tau3_shallow_word = Some(f64_v(value)?),
            "tau3_ds" => self.train.temps.tau3_deep_sentence = Some(f64_v(value)?),
            "tau3_gr" => self.train.temps.tau3_global_report = Some(f64_v(value)?),
            "lr" => self.train.learning_rate = f64_v(value)?,
            "beta1" => self.train.beta1 = f64_v(value)?,
            "beta2" => self.train.beta2 = f64_v(value)?,
            "lr_decay" => self.train.lr_decay = f64_v(value)?,
            "batch" => self.train.batch_size = usize_v(value)?,
            "epochs" => self.train.epochs = usize_v(value)?,
            "seed" => self.train.seed = u64_v(value)?,
            "use_shallow_word" => self.train.switches.shallow_word = bool_v(value)?,
            "use_deep_sentence" => self.train.switches.deep_sentence = bool_v(value)?,
            "use_global_report" => self.train.switches.global_report = bool_v(value)?,
            "val_fraction" => self.train.val_fraction = f64_v(value)?,
            "augment_shuffle" => self.train.augment_shuffle = bool_v(value)?,
            "augment_keep_ratio" => self.train.augment_keep_ratio = f64_v(value)?,
            "thresholds" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| p.trim().parse::<f64>().map_err(|_| bad("numbers")))
                    .collect::<Result<_>>()?;
                if parts.is_empty() {
                    return Err(bad("at least one threshold"));
                }
                self.thresholds = parts;
            }
            "prompts" => self.prompts = Some(PathBuf::from(value)),
            "cls_temperature" => self.cls_temperature = f64_v(value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.train.validate()?;
        if let Some(g) = self.expected_grid {
            if g != self.arch.grid() {
                return Err(Error::Config(format!(
                    "grid = {g} is inconsistent with image_side = {} (grid must be side/8 = {})",
                    self.arch.image_side,
                    self.arch.grid()
                )));
            }
        }
        if self.thresholds.iter().any(|t| !(-1.0..=1.0).contains(t)) {
            return Err(Error::Config("thresholds must lie in [-1, 1]".into()));
        }
        if !(self.cls_temperature > 0.0) {
            return Err(Error::Config("cls_temperature must be positive".into()));
        }
        Ok(())
    }

    /// Dump in the file format, every key explicit.
    pub fn render(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        s.push_str(&format!("precision = {}\n", self.precision.name()));
        s.push_str(&format!("dim = {}\n", self.arch.dim));
        s.push_str(&format!("image_side = {}\n", self.arch.image_side));
        s.push_str(&format!("grid = {}\n", self.arch.grid()));
        s.push_str(&format!(
            "stage_channels = {},{},{},{}\n",
            self.arch.stage_channels[0],
            self.arch.stage_channels[1],
            self.arch.stage_channels[2],
            self.arch.stage_channels[3]
        ));
        s.push_str(&format!("text_layers = {}\n", self.arch.text_layers));
        s.push_str(&format!("max_tokens = {}\n", self.arch.max_tokens));
        s.push_str(&format!(
            "word_agg = {}\n",
            if self.arch.word_agg_mean {
                "mean"
            } else {
                "sum"
            }
        ));
        s.push_str(&format!("tau1 = {}\n", t.temps.tau1));
        s.push_str(&format!("tau2 = {}\n", t.temps.tau2));
        s.push_str(&format!("tau3 = {}\n", t.temps.tau3));
        if let Some(v) = t.temps.tau3_shallow_word {
            s.push_str(&format!("tau3_sw = {v}\n"));
        }
        if let Some(v) = t.temps.tau3_deep_sentence {
            s.push_str(&format!("tau3_ds = {v}\n"));
        }
        if let Some(v) = t.temps.tau3_global_report {
            s.push_str(&format!("tau3_gr = {v}\n"));
        }
        s.push_str(&format!("lr = {}\n", t.learning_rate));
        s.push_str(&format!("beta1 = {}\n", t.beta1));
        s.push_str(&format!("beta2 = {}\n", t.beta2));
        s.push_str(&format!("lr_decay = {}\n", t.lr_decay));
        s.push_str(&format!("batch = {}\n", t.batch_size));
        s.push_str(&format!("epochs = {}\n", t.epochs));
        s.push_str(&format!("seed = {}\n", t.seed));
        s.push_str(&format!("use_shallow_word = {}\n", t.switches.shallow_word));
        s.push_str(&format!(
            "use_deep_sentence = {}\n",
            t.switches.deep_sentence
        ));
        s.push_str(&format!(
            "use_global_report = {}\n",
            t.switches.global_report
        ));
        s.push_str(&format!("val_fraction = {}\n", t.val_fraction));
        s.push_str(&format!("augment_shuffle = {}\n", t.augment_shuffle));
        s.push_str(&format!("augment_keep_ratio = {}\n", t.augment_keep_ratio));
        s.push_str(&format!(
            "thresholds = {}\n",
            self.thresholds
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        if let Some(p) = &self.prompts {
            s.push_str(&format!("prompts = {}\n", p.display()));
        }
        s.push_str(&format!("cls_temperature = {}\n", self.cls_temperature));
        s
    }
}
