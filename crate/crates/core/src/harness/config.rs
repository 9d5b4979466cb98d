use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::appr::ApprParams;
use crate::error::{DparError, Result};
use crate::graph::SplitSpec;
use crate::inference::EvalConfig;
use crate::rng::{SeedStreams, STREAM_SPLIT};

/// Every knob of a run. Key names in config files and flag overrides equal
/// the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub train_fraction: f64,
    pub q_prime: f64,
    pub m: usize,
    pub alpha: f64,
    pub rho: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub k: usize,
    /// C₂, entrywise clip of the exponential mechanism.
    pub clip_entry: f64,
    /// C₁, ℓ2 clip of the Gaussian mechanism.
    pub clip_l2: f64,
    /// Part of each row's ε that em1 spends on reported values.
    pub value_share: f64,
    pub mechanism: String,
    pub eps_total: f64,
    pub delta_total: f64,
    pub ratio_pr: f64,
    /// Part of δ_total given to the structure stage.
    pub delta_share_pr: f64,
    pub tau: f64,
    /// Noise multiplier; calibrated from the SGD budget when unset.
    pub sigma: Option<f64>,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub clip_grad: f64,
    pub power_iters: usize,
    pub eval_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_fraction: 0.8,
            q_prime: 0.09,
            m: 70,
            alpha: 0.25,
            rho: 1e-4,
            gamma: 1e-4,
            max_iters: 10_000,
            k: 2,
            clip_entry: 0.001,
            clip_l2: 0.01,
            value_share: 0.5,
            mechanism: "em1".into(),
            eps_total: 8.0,
            delta_total: 2e-3,
            ratio_pr: 0.5,
            delta_share_pr: 0.5,
            tau: 1.0,
            sigma: None,
            hidden: 32,
            lr: 0.005,
            batch: 60,
            epochs: 200,
            clip_grad: 1.0,
            power_iters: 2,
            eval_alpha: 0.25,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| DparError::Config(format!("bad value {value:?} for {key}: {e}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 26] = [
        "seed",
        "train_fraction",
        "q_prime",
        "m",
        "alpha",
        "rho",
        "gamma",
        "max_iters",
        "k",
        "clip_entry",
        "clip_l2",
        "value_share",
        "mechanism",
        "eps_total",
        "delta_total",
        "ratio_pr",
        "delta_share_pr",
        "tau",
        "sigma",
        "hidden",
        "lr",
        "batch",
        "epochs",
        "clip_grad",
        "power_iters",
        "eval_alpha",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "q_prime" => self.q_prime = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "clip_entry" => self.clip_entry = parse(key, value)?,
            "clip_l2" => self.clip_l2 = parse(key, value)?,
            "value_share" => self.value_share = parse(key, value)?,
            "mechanism" => self.mechanism = value.trim().to_string(),
            "eps_total" => self.eps_total = parse(key, value)?,
            "delta_total" => self.delta_total = parse(key, value)?,
            "ratio_pr" => self.ratio_pr = parse(key, value)?,
            "delta_share_pr" => self.delta_share_pr = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "sigma" => {
                self.sigma = match value.trim() {
                    "auto" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "hidden" => self.hidden = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "clip_grad" => self.clip_grad = parse(key, value)?,
            "power_iters" => self.power_iters = parse(key, value)?,
            "eval_alpha" => self.eval_alpha = parse(key, value)?,
            _ => return Err(DparError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DparError::parse(origin, i + 1, "expected key = value"))?;
            self.set(key.trim(), value)
                .map_err(|e| DparError::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| DparError::io(path, e))?;
            cfg.apply_text(&text, path)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for key in Self::KEYS {
            let v = &json[key];
            let text = match v {
                serde_json::Value::Null => "auto".to_string(),
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{key} = {text}\n"));
        }
        out
    }

    pub fn streams(&self) -> SeedStreams {
        SeedStreams::new(self.seed)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            q_prime: self.q_prime,
            m: self.m,
            seed: self.streams().seed_for(STREAM_SPLIT),
        }
    }

    pub fn appr_params(&self) -> ApprParams {
        ApprParams {
            alpha: self.alpha,
            rho: self.rho,
            gamma: self.gamma,
            max_iters: self.max_iters,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            power_iters: self.power_iters,
            alpha: self.eval_alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split_spec().validate()?;
        self.appr_params().validate()?;
        self.eval_config().validate()?;
        let positive = [
            ("clip_entry", self.clip_entry),
            ("clip_l2", self.clip_l2),
            ("tau", self.tau),
            ("lr", self.lr),
            ("clip_grad", self.clip_grad),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DparError::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.eps_total > 0.0 && self.eps_total.is_finite()) {
            return Err(DparError::Config(format!("eps_total must be positive, got {}", self.eps_total)));
        }
        if !(self.delta_total > 0.0 && self.delta_total < 1.0) {
            return Err(DparError::Config(format!("delta_total must be in (0, 1), got {}", self.delta_total)));
        }
        for (name, v) in [("ratio_pr", self.ratio_pr), ("delta_share_pr", self.delta_share_pr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DparError::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if !(self.value_share > 0.0 && self.value_share < 1.0) {
            return Err(DparError::Config(format!("value_share must be in (0, 1), got {}", self.value_share)));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(DparError::Config(format!("sigma must be finite and >= 0, got {s}")));
            }
        }
        if self.k == 0 || self.hidden == 0 || self.epochs == 0 {
            return Err(DparError::Config("k, hidden and epochs must be positive".into()));
        }
        if self.batch == 0 || self.batch > self.m {
            return Err(DparError::Config(format!("batch must be in 1..=m ({}), got {}", self.m, self.batch)));
        }
        Ok(())
    }
}
