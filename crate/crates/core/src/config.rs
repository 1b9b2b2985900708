//! Training configuration and its `key = value` text format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::TiePolicy;
use crate::model::ScorerKind;
use crate::optim::OptimizerKind;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown config key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required config key `{0}`")]
    MissingKey(&'static str),
    #[error("config key `{key}`: cannot parse `{value}`")]
    BadValue { key: &'static str, value: String },
    #[error("config key `{key}`: {message}")]
    OutOfRange { key: &'static str, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub scorer: ScorerKind,
    pub dim: usize,
    /// Margin γ.
    pub gamma: f64,
    /// Negatives per positive per side.
    pub num_negatives: usize,
    /// Softmax temperature for negative weights; 0 gives uniform weights.
    pub adv_temperature: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    /// Weight μ of the soft rule penalty.
    pub rule_weight: f64,
    /// `None` uses the scorer's own default.
    pub squared_distance: Option<bool>,
    pub optimizer: OptimizerKind,
    /// Reject sampled negatives that are known true triples.
    pub filtered_negatives: bool,
    /// Steps between validation evaluations; 0 evaluates only after the last step.
    pub eval_every: usize,
    /// Steps between training-log rows.
    pub log_every: usize,
    pub tie_policy: TiePolicy,
}

const KEYS: &[&str] = &[
    "scorer",
    "dim",
    "gamma",
    "num_negatives",
    "adv_temperature",
    "learning_rate",
    "batch_size",
    "max_steps",
    "seed",
    "rule_weight",
    "squared_distance",
    "optimizer",
    "filtered_negatives",
    "eval_every",
    "log_every",
    "tie_policy",
];

impl TrainConfig {
    /// A configuration with the given shape and margin and defaults elsewhere.
    pub fn new(scorer: ScorerKind, dim: usize, gamma: f64) -> Self {
        TrainConfig {
            scorer,
            dim,
            gamma,
            num_negatives: 16,
            adv_temperature: 1.0,
            learning_rate: 0.01,
            batch_size: 128,
            max_steps: 1000,
            seed: 0,
            rule_weight: 0.0,
            squared_distance: None,
            optimizer: OptimizerKind::Sgd,
            filtered_negatives: false,
            eval_every: 0,
            log_every: 100,
            tie_policy: TiePolicy::Mean,
        }
    }

    pub fn squared_distance(&self) -> bool {
        self.squared_distance
            .unwrap_or_else(|| self.scorer.default_squared_distance())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key: &'static str, message: &str| ConfigError::OutOfRange {
            key,
            message: message.to_owned(),
        };
        self.scorer
            .validate_dim(self.dim)
            .map_err(|e| range("dim", &e.to_string()))?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(range("gamma", "must be a finite value > 0"));
        }
        if self.num_negatives == 0 {
            return Err(range("num_negatives", "must be at least 1"));
        }
        if !(self.adv_temperature >= 0.0 && self.adv_temperature.is_finite()) {
            return Err(range("adv_temperature", "must be finite and >= 0"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(range("learning_rate", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(range("batch_size", "must be at least 1"));
        }
        if !(self.rule_weight >= 0.0 && self.rule_weight.is_finite()) {
            return Err(range("rule_weight", "must be finite and >= 0"));
        }
        if self.log_every == 0 {
            return Err(range("log_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        text.parse()
    }

    /// Renders every field as `key = value`, in a form [`FromStr`] reads back.
    pub fn to_config_string(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scorer = {}", self.scorer)?;
        writeln!(f, "dim = {}", self.dim)?;
        writeln!(f, "gamma = {}", self.gamma)?;
        writeln!(f, "num_negatives = {}", self.num_negatives)?;
        writeln!(f, "adv_temperature = {}", self.adv_temperature)?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "max_steps = {}", self.max_steps)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "rule_weight = {}", self.rule_weight)?;
        if let Some(sq) = self.squared_distance {
            writeln!(f, "squared_distance = {sq}")?;
        }
        writeln!(f, "optimizer = {}", self.optimizer)?;
        writeln!(f, "filtered_negatives = {}", self.filtered_negatives)?;
        writeln!(f, "eval_every = {}", self.eval_every)?;
        writeln!(f, "log_every = {}", self.log_every)?;
        writeln!(f, "tie_policy = {}", self.tie_policy)
    }
}

impl FromStr for TrainConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut values: BTreeMap<&'static str, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: line_no })?;
            let key = key.trim();
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_owned(),
                })?;
            if values.insert(known, value.trim().to_owned()).is_some() {
                return Err(ConfigError::DuplicateKey {
                    line: line_no,
                    key: key.to_owned(),
                });
            }
        }

        fn parse<T: FromStr>(key: &'static str, raw: &str) -> Result<T, ConfigError> {
            raw.parse().map_err(|_| ConfigError::BadValue {
                key,
                value: raw.to_owned(),
            })
        }
        let required = |key: &'static str| values.get(key).ok_or(ConfigError::MissingKey(key));

        let scorer = match values.get("scorer") {
            Some(v) => parse("scorer", v)?,
            None => ScorerKind::PairRE,
        };
        let dim = parse("dim", required("dim")?)?;
        let gamma = parse("gamma", required("gamma")?)?;
        let mut cfg = TrainConfig::new(scorer, dim, gamma);
        cfg.num_negatives = parse("num_negatives", required("num_negatives")?)?;
        cfg.learning_rate = parse("learning_rate", required("learning_rate")?)?;
        cfg.batch_size = parse("batch_size", required("batch_size")?)?;
        cfg.max_steps = parse("max_steps", required("max_steps")?)?;
        if let Some(v) = values.get("adv_temperature") {
            cfg.adv_temperature = parse("adv_temperature", v)?;
        }
        if let Some(v) = values.get("seed") {
            cfg.seed = parse("seed", v)?;
        }
        if let Some(v) = values.get("rule_weight") {
            cfg.rule_weight = parse("rule_weight", v)?;
        }
        if let Some(v) = values.get("squared_distance") {
            cfg.squared_distance = Some(parse("squared_distance", v)?);
        }
        if let Some(v) = values.get("optimizer") {
            cfg.optimizer = parse("optimizer", v)?;
        }
        if let Some(v) = values.get("filtered_negatives") {
            cfg.filtered_negatives = parse("filtered_negatives", v)?;
        }
        if let Some(v) = values.get("eval_every") {
            cfg.eval_every = parse("eval_every", v)?;
        }
        if let Some(v) = values.get("log_every") {
            cfg.log_every = parse("log_every", v)?;
        }
        if let Some(v) = values.get("tie_policy") {
            cfg.tie_policy = parse("tie_policy", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
