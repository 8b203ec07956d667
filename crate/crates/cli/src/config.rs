//! Flat `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default (see [`RunConfig::default`]); unknown keys are rejected. Empty
//! values for path keys mean "not set"; `0` for `max_updates`, `clip_norm`
//! and `holdout` means "off".

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rwta::engine::Precision;
use rwta::eval::{CodeSource, FeatureMode, SvmConfig};
use rwta::model::{ModelConfig, WtaRule};
use rwta::train::{AdamConfig, TrainConfig};

use crate::error::CliError;

/// How `synth` builds videos and how `eval` classifies them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Rotate,
    Scan,
    Svm,
    Vote,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rotate => "rotate",
            Mode::Scan => "scan",
            Mode::Svm => "svm",
            Mode::Vote => "vote",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rotate" => Ok(Mode::Rotate),
            "scan" => Ok(Mode::Scan),
            "svm" => Ok(Mode::Svm),
            "vote" => Ok(Mode::Vote),
            _ => Err(format!("unknown mode `{s}` (rotate, scan, svm, vote)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub deterministic: bool,

    pub channels: usize,
    pub enc_kernel: usize,
    pub dec_kernel: usize,
    pub input_channels: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub frames: usize,
    pub max_updates: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub wta_rule: WtaRule,
    pub log_every: usize,
    pub classes: usize,

    pub mode: Mode,
    pub step: f64,
    pub window: usize,
    pub stride: usize,
    pub zca: bool,
    pub zca_epsilon: f64,
    pub holdout: usize,
    pub synth_digits: usize,
    pub digit_size: usize,

    pub feature_mode: FeatureMode,
    pub code_source: CodeSource,
    pub svm_reg: f64,
    pub svm_epochs: usize,
    pub svm_eta0: f64,
    pub vote_window: usize,

    pub gradcheck_eps: f64,
    pub gradcheck_samples: usize,
    pub gradcheck_threshold: f64,

    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            deterministic: false,
            channels: 16,
            enc_kernel: 3,
            dec_kernel: 11,
            input_channels: 1,
            epochs: 1,
            batch_size: 100,
            frames: 5,
            max_updates: 0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 0.0,
            wta_rule: WtaRule::Mask,
            log_every: 1,
            classes: 10,
            mode: Mode::Rotate,
            step: 18.0,
            window: 16,
            stride: 8,
            zca: false,
            zca_epsilon: 1e-2,
            holdout: 0,
            synth_digits: 0,
            digit_size: 28,
            feature_mode: FeatureMode::SumCollapse,
            code_source: CodeSource::Sparse,
            svm_reg: 1e-4,
            svm_epochs: 50,
            svm_eta0: 0.01,
            vote_window: 5,
            gradcheck_eps: 1e-5,
            gradcheck_samples: 20,
            gradcheck_threshold: 1e-4,
            images: None,
            labels: None,
            data: None,
            val_data: None,
            test_data: None,
            checkpoint: None,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("bad value `{value}` for `{key}`: {e}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Every key in serialisation order.
    pub const KEYS: &'static [&'static str] = &[
        "seed", "precision", "deterministic", "channels", "enc_kernel", "dec_kernel",
        "input_channels", "epochs", "batch_size", "frames", "max_updates", "lr", "beta1",
        "beta2", "adam_eps", "clip_norm", "wta_rule", "log_every", "classes", "mode", "step",
        "window", "stride", "zca", "zca_epsilon", "holdout", "synth_digits", "digit_size",
        "feature_mode", "code_source", "svm_reg", "svm_epochs", "svm_eta0", "vote_window",
        "gradcheck_eps", "gradcheck_samples", "gradcheck_threshold", "images", "labels", "data",
        "val_data", "test_data", "checkpoint", "out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "precision" => {
                self.precision = v
                    .parse::<u32>()
                    .ok()
                    .and_then(Precision::from_bits)
                    .ok_or_else(|| CliError::Usage(format!("precision must be 32 or 64, got `{v}`")))?
            }
            "deterministic" => self.deterministic = parse(key, v)?,
            "channels" => self.channels = parse(key, v)?,
            "enc_kernel" => self.enc_kernel = parse(key, v)?,
            "dec_kernel" => self.dec_kernel = parse(key, v)?,
            "input_channels" => self.input_channels = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "frames" => self.frames = parse(key, v)?,
            "max_updates" => self.max_updates = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "wta_rule" => {
                self.wta_rule = WtaRule::parse(v)
                    .ok_or_else(|| CliError::Usage(format!("unknown wta_rule `{v}` (mask, literal)")))?
            }
            "log_every" => self.log_every = parse(key, v)?,
            "classes" => self.classes = parse(key, v)?,
            "mode" => self.mode = parse(key, v)?,
            "step" => self.step = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "zca" => self.zca = parse(key, v)?,
            "zca_epsilon" => self.zca_epsilon = parse(key, v)?,
            "holdout" => self.holdout = parse(key, v)?,
            "synth_digits" => self.synth_digits = parse(key, v)?,
            "digit_size" => self.digit_size = parse(key, v)?,
            "feature_mode" => self.feature_mode = parse(key, v)?,
            "code_source" => {
                self.code_source = match v {
                    "sparse" => CodeSource::Sparse,
                    "dense" => CodeSource::Dense,
                    _ => return Err(CliError::Usage(format!("unknown code_source `{v}` (sparse, dense)"))),
                }
            }
            "svm_reg" => self.svm_reg = parse(key, v)?,
            "svm_epochs" => self.svm_epochs = parse(key, v)?,
            "svm_eta0" => self.svm_eta0 = parse(key, v)?,
            "vote_window" => self.vote_window = parse(key, v)?,
            "gradcheck_eps" => self.gradcheck_eps = parse(key, v)?,
            "gradcheck_samples" => self.gradcheck_samples = parse(key, v)?,
            "gradcheck_threshold" => self.gradcheck_threshold = parse(key, v)?,
            "images" => self.images = path(v),
            "labels" => self.labels = path(v),
            "data" => self.data = path(v),
            "val_data" => self.val_data = path(v),
            "test_data" => self.test_data = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "out" => self.out = PathBuf::from(v),
            _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "precision" => self.precision.bits().to_string(),
            "deterministic" => self.deterministic.to_string(),
            "channels" => self.channels.to_string(),
            "enc_kernel" => self.enc_kernel.to_string(),
            "dec_kernel" => self.dec_kernel.to_string(),
            "input_channels" => self.input_channels.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "frames" => self.frames.to_string(),
            "max_updates" => self.max_updates.to_string(),
            "lr" => self.lr.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "clip_norm" => self.clip_norm.to_string(),
            "wta_rule" => self.wta_rule.as_str().to_string(),
            "log_every" => self.log_every.to_string(),
            "classes" => self.classes.to_string(),
            "mode" => self.mode.as_str().to_string(),
            "step" => self.step.to_string(),
            "window" => self.window.to_string(),
            "stride" => self.stride.to_string(),
            "zca" => self.zca.to_string(),
            "zca_epsilon" => self.zca_epsilon.to_string(),
            "holdout" => self.holdout.to_string(),
            "synth_digits" => self.synth_digits.to_string(),
            "digit_size" => self.digit_size.to_string(),
            "feature_mode" => self.feature_mode.as_str().to_string(),
            "code_source" => match self.code_source {
                CodeSource::Sparse => "sparse".into(),
                CodeSource::Dense => "dense".into(),
            },
            "svm_reg" => self.svm_reg.to_string(),
            "svm_epochs" => self.svm_epochs.to_string(),
            "svm_eta0" => self.svm_eta0.to_string(),
            "vote_window" => self.vote_window.to_string(),
            "gradcheck_eps" => self.gradcheck_eps.to_string(),
            "gradcheck_samples" => self.gradcheck_samples.to_string(),
            "gradcheck_threshold" => self.gradcheck_threshold.to_string(),
            "images" => show(&self.images),
            "labels" => show(&self.labels),
            "data" => show(&self.data),
            "val_data" => show(&self.val_data),
            "test_data" => show(&self.test_data),
            "checkpoint" => show(&self.checkpoint),
            "out" => self.out.display().to_string(),
            _ => unreachable!("KEYS and get disagree on `{key}`"),
        }
    }

    /// Applies `key=value` lines on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        c.merge_text(text)?;
        Ok(c)
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k));
        }
        s
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            enc_kernel: self.enc_kernel,
            dec_kernel: self.dec_kernel,
            input_channels: self.input_channels,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            frames: self.frames,
            seed: self.seed,
            wta_rule: self.wta_rule,
            log_every: self.log_every,
            adam: self.adam(),
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            max_updates: (self.max_updates > 0).then_some(self.max_updates),
            deterministic: self.deterministic,
        }
    }

    pub fn svm(&self) -> SvmConfig {
        SvmConfig {
            reg: self.svm_reg,
            epochs: self.svm_epochs,
            eta0: self.svm_eta0,
            seed: self.seed,
        }
    }
}
