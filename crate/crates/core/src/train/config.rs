use std::fmt::Write as _;
use std::path::Path;

use crate::data::PretrainStrategy;
use crate::error::{Error, Result};
use crate::zoo::{LossWeights, ZooOptions};

/// Training hyperparameters. Serialized as flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    pub lr_pretrain: f64,
    pub lr_finetune: f64,
    pub weights: LossWeights,
    pub lambda: f64,
    pub lambda_schedule: LambdaSchedule,
    pub strategy: PretrainStrategy,
    /// Epochs without improvement of the mean reconstruction loss before
    /// pretraining stops; 0 disables early stopping.
    pub patience: usize,
    /// Update the shared encoder during fine-tuning.
    pub finetune_encoder: bool,
    pub sim_on_private: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs_pretrain: 50,
            epochs_finetune: 20,
            batch_size: 64,
            lr_pretrain: 1e-3,
            lr_finetune: 1e-4,
            weights: LossWeights::default(),
            lambda: 1.0,
            lambda_schedule: LambdaSchedule::Constant,
            strategy: PretrainStrategy::Adaptive,
            patience: 10,
            finetune_encoder: false,
            sim_on_private: false,
        }
    }
}

/// Gradient-reversal strength over pretraining epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaSchedule {
    Constant,
    /// `λ·(2/(1 + e^{−10p}) − 1)` with `p` the fraction of epochs completed.
    Ramp,
}

impl LambdaSchedule {
    /// Reversal strength for 1-based `epoch` out of `epochs`.
    pub fn at(self, lambda: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            Self::Constant => lambda,
            Self::Ramp => {
                let p = epoch.saturating_sub(1) as f64 / epochs.max(1) as f64;
                lambda * (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
            }
        }
    }
}

impl std::fmt::Display for LambdaSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Constant => "constant",
            Self::Ramp => "ramp",
        })
    }
}

impl std::str::FromStr for LambdaSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "constant" => Ok(Self::Constant),
            "ramp" => Ok(Self::Ramp),
            other => Err(Error::invalid(format!("unknown lambda schedule `{other}`"))),
        }
    }
}

pub const CONFIG_KEYS: [&str; 15] = [
    "seed",
    "epochs_pretrain",
    "epochs_finetune",
    "batch_size",
    "lr_pretrain",
    "lr_finetune",
    "w_recon",
    "w_sim",
    "w_ortho",
    "lambda",
    "lambda_schedule",
    "strategy",
    "patience",
    "finetune_encoder",
    "sim_on_private",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("config key {key}: cannot parse `{value}`")))
}

impl TrainConfig {
    pub fn zoo_options(&self) -> ZooOptions {
        ZooOptions {
            weights: self.weights,
            lambda: self.lambda,
            sim_on_private: self.sim_on_private,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        for (k, v) in [("lr_pretrain", self.lr_pretrain), ("lr_finetune", self.lr_finetune)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        self.weights.validate()
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_value(key, value)?,
            "epochs_pretrain" => self.epochs_pretrain = parse_value(key, value)?,
            "epochs_finetune" => self.epochs_finetune = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr_pretrain" => self.lr_pretrain = parse_value(key, value)?,
            "lr_finetune" => self.lr_finetune = parse_value(key, value)?,
            "w_recon" => self.weights.recon = parse_value(key, value)?,
            "w_sim" => self.weights.sim = parse_value(key, value)?,
            "w_ortho" => self.weights.ortho = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "lambda_schedule" => self.lambda_schedule = value.parse()?,
            "strategy" => self.strategy = value.parse()?,
            "patience" => self.patience = parse_value(key, value)?,
            "finetune_encoder" => self.finetune_encoder = parse_value(key, value)?,
            "sim_on_private" => self.sim_on_private = parse_value(key, value)?,
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// `(key, value)` pairs in [`CONFIG_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = |v: f64| format!("{v:?}");
        let values = [
            self.seed.to_string(),
            self.epochs_pretrain.to_string(),
            self.epochs_finetune.to_string(),
            self.batch_size.to_string(),
            f(self.lr_pretrain),
            f(self.lr_finetune),
            f(self.weights.recon),
            f(self.weights.sim),
            f(self.weights.ortho),
            f(self.lambda),
            self.lambda_schedule.to_string(),
            self.strategy.to_string(),
            self.patience.to_string(),
            self.finetune_encoder.to_string(),
            self.sim_on_private.to_string(),
        ];
        CONFIG_KEYS.into_iter().zip(values).collect()
    }
}
