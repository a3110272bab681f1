use std::fmt::Write as _;
use std::path::Path;

use crate::episode::{Dataset, EpisodeSpec, Split};
use crate::error::{Error, Result};
use crate::inference::LossWeights;
use crate::model::{Ablation, ModelConfig};

/// Training and evaluation settings. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub label_ratio: f64,
    pub dim: usize,
    pub enc_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub semantic_dim: usize,
    pub leaky_slope: f64,
    pub episodes_per_iteration: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub lambda_adj: f64,
    pub lambda_assign: f64,
    pub lambda_cls: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Validate every this many iterations (and after the last one).
    pub eval_every: usize,
    pub val_episodes: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ways: 5,
            shots: 1,
            queries: 5,
            label_ratio: 1.0,
            dim: 64,
            enc_dim: 32,
            heads: 8,
            layers: 3,
            semantic_dim: 16,
            leaky_slope: 0.2,
            episodes_per_iteration: 4,
            iterations: 2000,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            lr_decay_factor: 0.1,
            lr_decay_every: 15_000,
            lambda_adj: 1.0,
            lambda_assign: 0.5,
            lambda_cls: 1.0,
            seed: 0,
            ablation: Ablation::Full,
            eval_every: 100,
            val_episodes: 50,
            eval_episodes: 200,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 24] = [
        "ways",
        "shots",
        "queries",
        "label_ratio",
        "dim",
        "enc_dim",
        "heads",
        "layers",
        "semantic_dim",
        "leaky_slope",
        "episodes_per_iteration",
        "iterations",
        "learning_rate",
        "weight_decay",
        "lr_decay_factor",
        "lr_decay_every",
        "lambda_adj",
        "lambda_assign",
        "lambda_cls",
        "seed",
        "ablation",
        "eval_every",
        "val_episodes",
        "eval_episodes",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "ways" => self.ways = parse(key, v)?,
            "shots" => self.shots = parse(key, v)?,
            "queries" => self.queries = parse(key, v)?,
            "label_ratio" => self.label_ratio = parse(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "enc_dim" => self.enc_dim = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "semantic_dim" => self.semantic_dim = parse(key, v)?,
            "leaky_slope" => self.leaky_slope = parse(key, v)?,
            "episodes_per_iteration" => self.episodes_per_iteration = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, v)?,
            "lr_decay_every" => self.lr_decay_every = parse(key, v)?,
            "lambda_adj" => self.lambda_adj = parse(key, v)?,
            "lambda_assign" => self.lambda_assign = parse(key, v)?,
            "lambda_cls" => self.lambda_cls = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "ablation" => self.ablation = v.parse()?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "val_episodes" => self.val_episodes = parse(key, v)?,
            "eval_episodes" => self.eval_episodes = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "ways" => self.ways.to_string(),
            "shots" => self.shots.to_string(),
            "queries" => self.queries.to_string(),
            "label_ratio" => self.label_ratio.to_string(),
            "dim" => self.dim.to_string(),
            "enc_dim" => self.enc_dim.to_string(),
            "heads" => self.heads.to_string(),
            "layers" => self.layers.to_string(),
            "semantic_dim" => self.semantic_dim.to_string(),
            "leaky_slope" => self.leaky_slope.to_string(),
            "episodes_per_iteration" => self.episodes_per_iteration.to_string(),
            "iterations" => self.iterations.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "lr_decay_factor" => self.lr_decay_factor.to_string(),
            "lr_decay_every" => self.lr_decay_every.to_string(),
            "lambda_adj" => self.lambda_adj.to_string(),
            "lambda_assign" => self.lambda_assign.to_string(),
            "lambda_cls" => self.lambda_cls.to_string(),
            "seed" => self.seed.to_string(),
            "ablation" => self.ablation.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "val_episodes" => self.val_episodes.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            _ => return None,
        })
    }

    /// Applies a flat `key=value` document on top of `self`. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            writeln!(out, "{key}={}", self.get(key).expect("known key")).unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ways", self.ways),
            ("shots", self.shots),
            ("queries", self.queries),
            ("dim", self.dim),
            ("enc_dim", self.enc_dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("semantic_dim", self.semantic_dim),
            ("episodes_per_iteration", self.episodes_per_iteration),
            ("lr_decay_every", self.lr_decay_every),
            ("eval_every", self.eval_every),
            ("val_episodes", self.val_episodes),
            ("eval_episodes", self.eval_episodes),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("dim {} is not divisible by heads {}", self.dim, self.heads)));
        }
        if !(self.label_ratio > 0.0 && self.label_ratio <= 1.0) {
            return Err(Error::Config(format!("label_ratio {} outside (0, 1]", self.label_ratio)));
        }
        let reals = [
            ("learning_rate", self.learning_rate),
            ("lr_decay_factor", self.lr_decay_factor),
        ];
        if let Some((k, _)) = reals.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        let nonneg = [
            ("weight_decay", self.weight_decay),
            ("lambda_adj", self.lambda_adj),
            ("lambda_assign", self.lambda_assign),
            ("lambda_cls", self.lambda_cls),
            ("leaky_slope", self.leaky_slope),
        ];
        if let Some((k, _)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{k} must be >= 0")));
        }
        Ok(())
    }

    /// Checks the dataset can serve this configuration.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.semantic_dim != self.semantic_dim {
            return Err(Error::Config(format!(
                "semantic_dim {} does not match the dataset's {}",
                self.semantic_dim, ds.semantic_dim
            )));
        }
        for split in Split::ALL {
            if ds.classes(split).len() < self.ways {
                return Err(Error::Config(format!(
                    "{split} split has {} classes, fewer than ways={}",
                    ds.classes(split).len(),
                    self.ways
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, raw_dim: usize) -> ModelConfig {
        ModelConfig {
            ways: self.ways,
            raw_dim,
            enc_dim: self.enc_dim,
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            semantic_dim: self.semantic_dim,
            leaky_slope: self.leaky_slope,
            ablation: self.ablation,
        }
    }

    pub fn episode_spec(&self) -> EpisodeSpec {
        EpisodeSpec {
            ways: self.ways,
            shots: self.shots,
            queries: self.queries,
            label_ratio: self.label_ratio,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            adjacency: self.lambda_adj,
            assignment: self.lambda_assign,
            classification: self.lambda_cls,
        }
    }

    /// Step size in effect at 0-based `iteration`.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((iteration / self.lr_decay_every) as i32)
    }
}
