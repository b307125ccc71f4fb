//! Flat `key=value` configuration covering the model, feature extraction
//! and training. Blank lines and `#` comments are ignored; unknown keys are
//! errors. Missing keys keep their defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
}

const MODEL_KEYS: &[&str] = &[
    "variant",
    "model_dim",
    "heads",
    "b",
    "s",
    "k",
    "use_goal_features",
    "goal_embed_dim",
    "goal_hidden",
    "ff_hidden",
    "goals_as_queries",
    "obs_len",
    "pred_len",
    "lambda",
    "smoothing_normalize",
    "r",
    "horizon_s",
    "min_radius_m",
    "forward_cone_deg",
    "speed_gate_mps",
    "goal_seed",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid("config", format!("bad value `{value}` for `{key}`")))
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let f = &mut self.features;
        let t = &mut self.train;
        let v = value;
        match key {
            "variant" => m.variant = v.parse()?,
            "model_dim" => m.model_dim = parse_value(key, v)?,
            "heads" => m.heads = parse_value(key, v)?,
            "b" => m.b = parse_value(key, v)?,
            "s" => m.s = parse_value(key, v)?,
            "k" => m.k = parse_value(key, v)?,
            "use_goal_features" => m.use_goal_features = parse_value(key, v)?,
            "goal_embed_dim" => m.goal_embed_dim = parse_value(key, v)?,
            "goal_hidden" => m.goal_hidden = parse_value(key, v)?,
            "ff_hidden" => m.ff_hidden = parse_value(key, v)?,
            "goals_as_queries" => m.goals_as_queries = parse_value(key, v)?,
            "obs_len" => m.obs_len = parse_value(key, v)?,
            "pred_len" => m.pred_len = parse_value(key, v)?,
            "lambda" => f.smoothing.lambda = parse_value(key, v)?,
            "smoothing_normalize" => f.smoothing.normalize = parse_value(key, v)?,
            "r" => f.sampler.r = parse_value(key, v)?,
            "horizon_s" => f.sampler.horizon_s = parse_value(key, v)?,
            "min_radius_m" => f.sampler.min_radius_m = parse_value(key, v)?,
            "forward_cone_deg" => f.sampler.forward_cone_deg = parse_value(key, v)?,
            "speed_gate_mps" => f.sampler.speed_gate_mps = parse_value(key, v)?,
            "goal_seed" => f.sampler.seed = parse_value(key, v)?,
            "seed" => t.seed = parse_value(key, v)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "lr" => t.lr = parse_value(key, v)?,
            "max_steps" => t.max_steps = parse_value(key, v)?,
            "eval_every" => t.eval_every = parse_value(key, v)?,
            "patience" => t.patience = parse_value(key, v)?,
            "lr_factor" => t.lr_factor = parse_value(key, v)?,
            "early_stop" => t.early_stop = parse_value(key, v)?,
            "val_fraction" => t.val_fraction = parse_value(key, v)?,
            "point_dropout_p" => t.aug.point_dropout_p = parse_value(key, v)?,
            "rotate90_p" => t.aug.rotate90_p = parse_value(key, v)?,
            "jitter_sigma_m" => t.aug.jitter_sigma_m = parse_value(key, v)?,
            "alpha" => t.weights.alpha = parse_value(key, v)?,
            "beta" => t.weights.beta = parse_value(key, v)?,
            "gamma" => t.weights.gamma = parse_value(key, v)?,
            _ => return Err(Error::invalid("config", format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let (m, f, t) = (&self.model, &self.features, &self.train);
        vec![
            ("variant", m.variant.to_string()),
            ("model_dim", m.model_dim.to_string()),
            ("heads", m.heads.to_string()),
            ("b", m.b.to_string()),
            ("s", m.s.to_string()),
            ("k", m.k.to_string()),
            ("use_goal_features", m.use_goal_features.to_string()),
            ("goal_embed_dim", m.goal_embed_dim.to_string()),
            ("goal_hidden", m.goal_hidden.to_string()),
            ("ff_hidden", m.ff_hidden.to_string()),
            ("goals_as_queries", m.goals_as_queries.to_string()),
            ("obs_len", m.obs_len.to_string()),
            ("pred_len", m.pred_len.to_string()),
            ("lambda", f.smoothing.lambda.to_string()),
            ("smoothing_normalize", f.smoothing.normalize.to_string()),
            ("r", f.sampler.r.to_string()),
            ("horizon_s", f.sampler.horizon_s.to_string()),
            ("min_radius_m", f.sampler.min_radius_m.to_string()),
            ("forward_cone_deg", f.sampler.forward_cone_deg.to_string()),
            ("speed_gate_mps", f.sampler.speed_gate_mps.to_string()),
            ("goal_seed", f.sampler.seed.to_string()),
            ("seed", t.seed.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr", t.lr.to_string()),
            ("max_steps", t.max_steps.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("patience", t.patience.to_string()),
            ("lr_factor", t.lr_factor.to_string()),
            ("early_stop", t.early_stop.to_string()),
            ("val_fraction", t.val_fraction.to_string()),
            ("point_dropout_p", t.aug.point_dropout_p.to_string()),
            ("rotate90_p", t.aug.rotate90_p.to_string()),
            ("jitter_sigma_m", t.aug.jitter_sigma_m.to_string()),
            ("alpha", t.weights.alpha.to_string()),
            ("beta", t.weights.beta.to_string()),
            ("gamma", t.weights.gamma.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        crate::features::SmoothingConfig::new(self.features.smoothing.lambda)?;
        self.features.sampler.validate()?;
        self.train.validate()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got `{line}`")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            writeln!(out, "{k}={v}").expect("string write");
        }
        out
    }

    /// Short digest of every key that changes the network or its inputs.
    pub fn model_hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.pairs().into_iter().filter(|(k, _)| MODEL_KEYS.contains(k)) {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
