//! `key = value` engine configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory holding the config file. Command-line flags
//! override file values.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::activation::{EpsilonMode, DEFAULT_BETA, DEFAULT_MIN_IMAGES};
use crate::concepts::DEFAULT_SCORE_THRESHOLD;
use crate::error::{Error, Result};
use crate::explain::DEFAULT_TOP_M;
use crate::groups::DEFAULT_GAMMA;
use crate::retrieval::{DEFAULT_BLOCK_SIZE, DEFAULT_TOP_K};
use crate::transfer::{
    TransferMode, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_LAMBDA, DEFAULT_LEARNING_RATE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub representations: Option<PathBuf>,
    pub image_embeddings: Option<PathBuf>,
    pub caption_embeddings: Option<PathBuf>,
    pub captions: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Directory of `crops_<features>.femb` files; whole images are used for
    /// targets without one.
    pub crops_dir: Option<PathBuf>,
    pub head: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub transfer_target: Option<PathBuf>,
    pub out: PathBuf,

    pub alpha: Option<f64>,
    pub group_alpha: Option<f64>,
    pub beta: f64,
    pub epsilon: EpsilonMode,
    pub gamma: f64,
    pub score_threshold: f64,
    pub low_score_threshold: Option<f64>,
    pub min_images: usize,
    pub top_k: usize,
    pub block_size: usize,
    pub top_m: usize,
    pub max_concepts: Option<usize>,

    pub transfer_mode: TransferMode,
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub threads: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            representations: None,
            image_embeddings: None,
            caption_embeddings: None,
            captions: None,
            lexicon: None,
            crops_dir: None,
            head: None,
            classes: None,
            labels: None,
            transfer_target: None,
            out: PathBuf::from("out"),
            alpha: None,
            group_alpha: None,
            beta: DEFAULT_BETA,
            epsilon: EpsilonMode::FeatureMean,
            gamma: DEFAULT_GAMMA,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            low_score_threshold: None,
            min_images: DEFAULT_MIN_IMAGES,
            top_k: DEFAULT_TOP_K,
            block_size: DEFAULT_BLOCK_SIZE,
            top_m: DEFAULT_TOP_M,
            max_concepts: None,
            transfer_mode: TransferMode::ClosedForm,
            lambda: DEFAULT_LAMBDA,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            shuffle: false,
            seed: 0,
            threads: 0,
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub top_k: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

fn parse_value<V: FromStr>(key: &str, value: &str, line: usize) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "line {line}: bad value {value:?} for {key}"
        ))),
    }
}

impl EngineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.out = base.join(&cfg.out);
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value")))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {line}: duplicate key {key}")));
            }
            let path = || Some(base.join(value));
            match key {
                "representations" => cfg.representations = path(),
                "image_embeddings" => cfg.image_embeddings = path(),
                "caption_embeddings" => cfg.caption_embeddings = path(),
                "captions" => cfg.captions = path(),
                "lexicon" => cfg.lexicon = path(),
                "crops_dir" => cfg.crops_dir = path(),
                "head" => cfg.head = path(),
                "classes" => cfg.classes = path(),
                "labels" => cfg.labels = path(),
                "transfer_target" => cfg.transfer_target = path(),
                "out" => cfg.out = base.join(value),
                "alpha" => cfg.alpha = Some(parse_value(key, value, line)?),
                "group_alpha" => cfg.group_alpha = Some(parse_value(key, value, line)?),
                "beta" => cfg.beta = parse_value(key, value, line)?,
                "epsilon" => cfg.epsilon = parse_value(key, value, line)?,
                "gamma" => cfg.gamma = parse_value(key, value, line)?,
                "score_threshold" => cfg.score_threshold = parse_value(key, value, line)?,
                "low_score_threshold" => {
                    cfg.low_score_threshold = Some(parse_value(key, value, line)?)
                }
                "min_images" => cfg.min_images = parse_value(key, value, line)?,
                "top_k" => cfg.top_k = parse_value(key, value, line)?,
                "block_size" => cfg.block_size = parse_value(key, value, line)?,
                "top_m" => cfg.top_m = parse_value(key, value, line)?,
                "max_concepts" => cfg.max_concepts = Some(parse_value(key, value, line)?),
                "transfer_mode" => cfg.transfer_mode = parse_value(key, value, line)?,
                "lambda" => cfg.lambda = parse_value(key, value, line)?,
                "epochs" => cfg.epochs = parse_value(key, value, line)?,
                "learning_rate" => cfg.learning_rate = parse_value(key, value, line)?,
                "batch_size" => cfg.batch_size = parse_value(key, value, line)?,
                "shuffle" => cfg.shuffle = parse_bool(key, value, line)?,
                "seed" => cfg.seed = parse_value(key, value, line)?,
                "threads" => cfg.threads = parse_value(key, value, line)?,
                _ => return Err(Error::Config(format!("line {line}: unknown key {key}"))),
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.alpha {
            self.alpha = Some(v);
        }
        if let Some(v) = o.gamma {
            self.gamma = v;
        }
        if let Some(v) = o.top_k {
            self.top_k = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
    }

    fn paths(&self) -> [(&'static str, &Option<PathBuf>); 10] {
        [
            ("representations", &self.representations),
            ("image_embeddings", &self.image_embeddings),
            ("caption_embeddings", &self.caption_embeddings),
            ("captions", &self.captions),
            ("lexicon", &self.lexicon),
            ("crops_dir", &self.crops_dir),
            ("head", &self.head),
            ("classes", &self.classes),
            ("labels", &self.labels),
            ("transfer_target", &self.transfer_target),
        ]
    }

    /// Check ranges and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        for (key, p) in self.paths() {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "{key}: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(-1.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [-1, 1]");
        }
        for (name, v) in [("alpha", self.alpha), ("group_alpha", self.group_alpha)] {
            if v.is_some_and(|a| !a.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if let EpsilonMode::Explicit(e) = self.epsilon {
            if !e.is_finite() {
                return bad("epsilon must be finite");
            }
        }
        if !self.gamma.is_finite() {
            return bad("gamma must be finite");
        }
        let non_negative = |t: f64| t >= 0.0;
        if !non_negative(self.score_threshold)
            || self.low_score_threshold.is_some_and(|t| !non_negative(t))
        {
            return bad("score thresholds must be >= 0");
        }
        if self.min_images < 1 {
            return bad("min_images must be at least 1");
        }
        if self.top_k < 1 || self.block_size < 1 || self.top_m < 1 {
            return bad("top_k, block_size and top_m must be at least 1");
        }
        if self.max_concepts == Some(0) {
            return bad("max_concepts must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }

    /// The path for `key`, or a configuration error naming the missing key.
    pub fn require<'a>(&self, key: &'static str, value: &'a Option<PathBuf>) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing config key {key}")))
    }

    pub fn low_threshold(&self) -> f64 {
        self.low_score_threshold.unwrap_or(self.score_threshold)
    }
}
