//! Run configuration and its `key=value` text form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Pipeline variant applied at snapshots `t > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Finetune on affected seeds plus top-m trustworthy alignment.
    Full,
    /// Finetune on affected seeds only.
    NoTa,
    /// No finetuning: inductive initialization and search only.
    NoTaNoAsa,
    /// Train from scratch at every snapshot and replace the alignment.
    Retrain,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::NoTa, Mode::NoTaNoAsa, Mode::Retrain];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoTa => "no_ta",
            Mode::NoTaNoAsa => "no_ta_no_asa",
            Mode::Retrain => "retrain",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Cosine,
    Csls,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Cosine => "cosine",
            MetricKind::Csls => "csls",
        }
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(MetricKind::Cosine),
            "csls" => Ok(MetricKind::Csls),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Embedding dimension d.
    pub dim: usize,
    /// Weight of the reconstruction loss.
    pub alpha: f64,
    /// Weight of the alignment loss over replayed trustworthy pairs.
    pub beta: f64,
    /// How many trustworthy pairs to replay during finetuning.
    pub top_m: usize,
    /// Scale of the alignment loss.
    pub gamma: f64,
    /// Margin of the alignment loss.
    pub lambda: f64,
    pub proxy_count: usize,
    pub metric: MetricKind,
    pub csls_k: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epoch budget for training from scratch.
    pub epochs: usize,
    /// Epoch budget for each finetuning round.
    pub finetune_epochs: usize,
    /// Evaluate on the validation links every this many epochs.
    pub eval_every: usize,
    /// Non-improving evaluations tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 100,
            alpha: 0.1,
            beta: 0.1,
            top_m: 500,
            gamma: 15.0,
            lambda: 0.5,
            proxy_count: 64,
            metric: MetricKind::Csls,
            csls_k: 10,
            batch_size: 512,
            lr: 1e-3,
            epochs: 300,
            finetune_epochs: 30,
            eval_every: 5,
            patience: 5,
            seed: 0,
            mode: Mode::Full,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 17] = [
        "dim",
        "alpha",
        "beta",
        "m",
        "gamma",
        "lambda",
        "proxy_count",
        "metric",
        "csls_k",
        "batch_size",
        "lr",
        "epochs",
        "finetune_epochs",
        "eval_every",
        "patience",
        "seed",
        "mode",
    ];

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dim" => self.dim = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "m" => self.top_m = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "proxy_count" => self.proxy_count = parse(key, v)?,
            "metric" => self.metric = v.parse()?,
            "csls_k" => self.csls_k = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a `key=value` assignment string.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Apply a line-oriented `key=value` text. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                self.apply(line)?;
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        if self.proxy_count < 1 {
            return fail("proxy_count must be at least 1");
        }
        if !(self.gamma > 0.0) {
            return fail("gamma must be positive");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return fail("alpha and beta must be non-negative");
        }
        if !self.lambda.is_finite() {
            return fail("lambda must be finite");
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if self.batch_size < 1 || self.eval_every < 1 || self.csls_k < 1 {
            return fail("batch_size, eval_every and csls_k must be positive");
        }
        Ok(())
    }

    /// The configuration as `key=value` lines in [`RunConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let v = match key {
                "dim" => self.dim.to_string(),
                "alpha" => self.alpha.to_string(),
                "beta" => self.beta.to_string(),
                "m" => self.top_m.to_string(),
                "gamma" => self.gamma.to_string(),
                "lambda" => self.lambda.to_string(),
                "proxy_count" => self.proxy_count.to_string(),
                "metric" => self.metric.as_str().to_owned(),
                "csls_k" => self.csls_k.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "lr" => self.lr.to_string(),
                "epochs" => self.epochs.to_string(),
                "finetune_epochs" => self.finetune_epochs.to_string(),
                "eval_every" => self.eval_every.to_string(),
                "patience" => self.patience.to_string(),
                "seed" => self.seed.to_string(),
                "mode" => self.mode.as_str().to_owned(),
                _ => unreachable!(),
            };
            s.push_str(key);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }
}
