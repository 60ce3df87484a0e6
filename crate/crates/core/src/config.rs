//! `key = value` experiment files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! repeated keys are errors.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};
use crate::recognizer::RecognizerConfig;
use crate::trainer::TrainConfig;

/// Architecture fields of [`RecognizerConfig`]; the label count comes from
/// the vocabulary and the input width from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    pub context_radius: usize,
    pub feature_dim: usize,
    pub recurrent_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let d = RecognizerConfig::new(1);
        ArchConfig {
            context_radius: d.context_radius,
            feature_dim: d.feature_dim,
            recurrent_dim: d.recurrent_dim,
        }
    }
}

impl ArchConfig {
    pub fn recognizer(&self, input_dim: usize, label_count: usize, seed: u64) -> RecognizerConfig {
        RecognizerConfig {
            input_dim,
            context_radius: self.context_radius,
            feature_dim: self.feature_dim,
            recurrent_dim: self.recurrent_dim,
            label_count,
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataPaths {
    pub source_data: Option<PathBuf>,
    pub target_data: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub init_checkpoint: Option<PathBuf>,
    pub out_checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub decoder: DecoderConfig,
    pub arch: ArchConfig,
    pub paths: DataPaths,
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        message: format!("invalid value {value:?} for {key}"),
    })
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "lambda",
        "batch_size",
        "source_fraction",
        "outer_iters",
        "prior_pass_batches",
        "train_pass_batches",
        "epochs",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "seed",
        "select_best",
        "w",
        "alpha",
        "beam_width",
        "prior_floor",
        "context_radius",
        "feature_dim",
        "recurrent_dim",
        "source_data",
        "target_data",
        "lm",
        "init_checkpoint",
        "out_checkpoint",
        "log",
    ];

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: "expected `key = value`".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key {key}"),
                });
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.decoder;
        let a = &mut self.arch;
        let p = &mut self.paths;
        let path = || Some(PathBuf::from(value));
        match key {
            "lambda" => t.lambda = parse_value(line, key, value)?,
            "batch_size" => t.batch_size = parse_value(line, key, value)?,
            "source_fraction" => t.source_fraction = parse_value(line, key, value)?,
            "outer_iters" => t.outer_iters = parse_value(line, key, value)?,
            "prior_pass_batches" => t.prior_pass_batches = parse_value(line, key, value)?,
            "train_pass_batches" => t.train_pass_batches = parse_value(line, key, value)?,
            "epochs" => t.epochs = parse_value(line, key, value)?,
            "lr" => t.adam.lr = parse_value(line, key, value)?,
            "beta1" => t.adam.beta1 = parse_value(line, key, value)?,
            "beta2" => t.adam.beta2 = parse_value(line, key, value)?,
            "eps" => t.adam.eps = parse_value(line, key, value)?,
            "seed" => t.seed = parse_value(line, key, value)?,
            "select_best" => t.select_best = parse_value(line, key, value)?,
            "w" => d.w = parse_value(line, key, value)?,
            "alpha" => d.alpha = parse_value(line, key, value)?,
            "beam_width" => d.beam_width = parse_value(line, key, value)?,
            "prior_floor" => d.prior_floor = parse_value(line, key, value)?,
            "context_radius" => a.context_radius = parse_value(line, key, value)?,
            "feature_dim" => a.feature_dim = parse_value(line, key, value)?,
            "recurrent_dim" => a.recurrent_dim = parse_value(line, key, value)?,
            "source_data" => p.source_data = path(),
            "target_data" => p.target_data = path(),
            "lm" => p.lm = path(),
            "init_checkpoint" => p.init_checkpoint = path(),
            "out_checkpoint" => p.out_checkpoint = path(),
            "log" => p.log = path(),
            _ => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown key {key}"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.decoder.validate()?;
        if self.arch.feature_dim == 0 || self.arch.recurrent_dim == 0 {
            return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
        }
        Ok(())
    }

    /// Serializes every key, so `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let d = &self.decoder;
        let a = &self.arch;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("lambda", t.lambda.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("source_fraction", t.source_fraction.to_string());
        kv("outer_iters", t.outer_iters.to_string());
        kv("prior_pass_batches", t.prior_pass_batches.to_string());
        kv("train_pass_batches", t.train_pass_batches.to_string());
        kv("epochs", t.epochs.to_string());
        kv("lr", t.adam.lr.to_string());
        kv("beta1", t.adam.beta1.to_string());
        kv("beta2", t.adam.beta2.to_string());
        kv("eps", t.adam.eps.to_string());
        kv("seed", t.seed.to_string());
        kv("select_best", t.select_best.to_string());
        kv("w", d.w.to_string());
        kv("alpha", d.alpha.to_string());
        kv("beam_width", d.beam_width.to_string());
        kv("prior_floor", d.prior_floor.to_string());
        kv("context_radius", a.context_radius.to_string());
        kv("feature_dim", a.feature_dim.to_string());
        kv("recurrent_dim", a.recurrent_dim.to_string());
        let p = &self.paths;
        for (k, v) in [
            ("source_data", &p.source_data),
            ("target_data", &p.target_data),
            ("lm", &p.lm),
            ("init_checkpoint", &p.init_checkpoint),
            ("out_checkpoint", &p.out_checkpoint),
            ("log", &p.log),
        ] {
            if let Some(v) = v {
                kv(k, v.display().to_string());
            }
        }
        out
    }
}
