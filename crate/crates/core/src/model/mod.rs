//! The two predictors: an LSTM encoder with MHSA social context and an LSTM
//! decoder, and a Set Transformer with seed-query decoding. Both optionally
//! fuse an embedding of sampled goal points.

mod cost;
mod lstm_mhsa;
mod normalize;
mod set_transformer;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cost::{count_flops, count_params, FlopReport};
pub use lstm_mhsa::LstmMhsa;
pub use normalize::{normalize_scene, Frame, NormalizedScene, STEP_FEATURES};
pub use set_transformer::SetTransformer;

use crate::attention::{Linear, MhsaConfig};
use crate::error::{Error, Result};
use crate::features::{estimate_dynamic_state, sample_goal_points, FeatureConfig, GoalSet};
use crate::scene::{Occupancy, Point2, Scene};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub(crate) const GOAL_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    LstmMhsa,
    SetTransformer,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::LstmMhsa => "lstm_mhsa",
            Variant::SetTransformer => "set_transformer",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm_mhsa" => Ok(Variant::LstmMhsa),
            "set_transformer" => Ok(Variant::SetTransformer),
            _ => Err(Error::invalid("variant", format!("`{s}` (expected lstm_mhsa or set_transformer)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Attention width; also the LSTM hidden size.
    pub model_dim: usize,
    pub heads: usize,
    /// Encoder blocks (MHSA rounds for the LSTM variant).
    pub b: usize,
    /// Decoder self-attention blocks (Set Transformer only).
    pub s: usize,
    pub k: usize,
    pub use_goal_features: bool,
    pub goal_embed_dim: usize,
    pub goal_hidden: usize,
    pub ff_hidden: usize,
    /// Add the goal embedding to the seed queries instead of the keys/values.
    pub goals_as_queries: bool,
    pub obs_len: usize,
    pub pred_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::SetTransformer,
            model_dim: 64,
            heads: 4,
            b: 2,
            s: 2,
            k: 6,
            use_goal_features: true,
            goal_embed_dim: 16,
            goal_hidden: 32,
            ff_hidden: 128,
            goals_as_queries: false,
            obs_len: 20,
            pred_len: 30,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model config", msg));
        MhsaConfig::new(self.model_dim, self.heads)?;
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.obs_len < 2 || self.pred_len < 1 {
            return bad(format!("obs_len {} / pred_len {}", self.obs_len, self.pred_len));
        }
        if self.ff_hidden < 1 {
            return bad("ff_hidden must be >= 1".into());
        }
        if self.use_goal_features && (self.goal_embed_dim < 1 || self.goal_hidden < 1) {
            return bad("goal dimensions must be >= 1".into());
        }
        if self.goals_as_queries && (!self.use_goal_features || self.variant != Variant::SetTransformer) {
            return bad("goals_as_queries needs set_transformer with goal features".into());
        }
        Ok(())
    }

    pub(crate) fn attention(&self) -> MhsaConfig {
        MhsaConfig::new(self.model_dim, self.heads).expect("validated")
    }

    /// Width of the goal embedding actually fused (0 when disabled).
    pub(crate) fn goal_width(&self) -> usize {
        if self.use_goal_features {
            self.goal_embed_dim
        } else {
            0
        }
    }
}

/// Shared two-layer map over goal offsets followed by a max-pool.
#[derive(Clone, Debug)]
pub struct GoalEmbedding {
    pub l1: Linear,
    pub l2: Linear,
}

impl GoalEmbedding {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        GoalEmbedding {
            l1: Linear::new(store, "goal.l1", 2, cfg.goal_hidden, rng),
            l2: Linear::new(store, "goal.l2", cfg.goal_hidden, cfg.goal_embed_dim, rng),
        }
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        Linear::param_count(2, cfg.goal_hidden) + Linear::param_count(cfg.goal_hidden, cfg.goal_embed_dim)
    }

    /// `[goal_embed_dim]`; the zero vector for an empty offset list.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, offsets: &[Point2]) -> Result<Var> {
        if offsets.is_empty() {
            return Ok(g.constant(Tensor::zeros(&[self.l2.d_out])));
        }
        let x = Tensor::new(
            vec![offsets.len(), 2],
            offsets.iter().flat_map(|p| [GOAL_SCALE * p.x, GOAL_SCALE * p.y]).collect(),
        )?;
        let x = g.constant(x);
        let h = self.l1.forward(g, store, x)?;
        let h = g.relu(h);
        let e = self.l2.forward(g, store, h)?;
        g.max(e, 0)
    }
}

/// Everything a forward pass consumes for one scene.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub scene_id: String,
    pub normalized: NormalizedScene,
    /// `[agents, steps, STEP_FEATURES]`.
    pub features: Tensor,
    pub goals: Option<GoalSet>,
    /// Goal points in the local frame; `None` when goal features are off.
    pub goal_offsets: Option<Vec<Point2>>,
}

impl ModelInput {
    /// Normalizes the scene and, when the model uses goal features, samples
    /// goal points from `grid`. The grid is not read otherwise.
    pub fn prepare<G: Occupancy + ?Sized>(
        scene: &Scene,
        grid: &G,
        cfg: &ModelConfig,
        features: &FeatureConfig,
    ) -> Result<Self> {
        let time = scene.time();
        if time.m != cfg.obs_len || time.n != cfg.pred_len {
            return Err(Error::invalid(
                "scene",
                format!(
                    "{}: m={} n={} but the model expects m={} n={}",
                    scene.scene_id(),
                    time.m,
                    time.n,
                    cfg.obs_len,
                    cfg.pred_len
                ),
            ));
        }
        let normalized = normalize_scene(scene, &features.smoothing)?;
        let (goals, goal_offsets) = if cfg.use_goal_features {
            let state = estimate_dynamic_state(scene.target(), time.hz as f64, &features.smoothing)?;
            match sample_goal_points(grid, &state, scene.target().last(), &features.sampler) {
                Ok(set) => {
                    let offsets = set.points.iter().map(|&p| normalized.frame.to_local(p)).collect();
                    (Some(set), Some(offsets))
                }
                Err(Error::NoFeasibleCells) => (None, Some(Vec::new())),
                Err(e) => return Err(e),
            }
        } else {
            (None, None)
        };
        Ok(ModelInput {
            scene_id: scene.scene_id().to_string(),
            features: normalized.step_features(),
            normalized,
            goals,
            goal_offsets,
        })
    }
}

/// Graph outputs: `preds: [k, n, 2]` in the local frame and `logits: [k]`.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub preds: Var,
    pub logits: Var,
}

/// `k` world-frame trajectories of `n` points with softmax confidences.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub scene_id: String,
    pub trajectories: Vec<Vec<Point2>>,
    pub confidences: Vec<f64>,
}

impl PredictionSet {
    pub fn k(&self) -> usize {
        self.confidences.len()
    }

    /// Mode indices sorted by decreasing confidence (ties by index).
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.sort_by(|&a, &b| self.confidences[b].total_cmp(&self.confidences[a]).then(a.cmp(&b)));
        idx
    }

    /// The `k` most confident modes, confidences renormalized.
    pub fn top_k(&self, k: usize) -> Result<PredictionSet> {
        if k == 0 || k > self.k() {
            return Err(Error::invalid("k", format!("{k} with {} modes available", self.k())));
        }
        let keep: Vec<usize> = self.ranked().into_iter().take(k).collect();
        let total: f64 = keep.iter().map(|&i| self.confidences[i]).sum();
        Ok(PredictionSet {
            scene_id: self.scene_id.clone(),
            trajectories: keep.iter().map(|&i| self.trajectories[i].clone()).collect(),
            confidences: keep.iter().map(|&i| self.confidences[i] / total).collect(),
        })
    }
}

#[derive(Clone, Debug)]
enum Net {
    Lstm(LstmMhsa),
    Set(SetTransformer),
}

/// A predictor together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    net: Net,
    goal: Option<GoalEmbedding>,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let goal = cfg.use_goal_features.then(|| GoalEmbedding::new(&mut store, &cfg, &mut rng));
        let net = match cfg.variant {
            Variant::LstmMhsa => Net::Lstm(LstmMhsa::new(&mut store, &cfg, &mut rng)),
            Variant::SetTransformer => Net::Set(SetTransformer::new(&mut store, &cfg, &mut rng)),
        };
        Ok(Model { cfg, store, net, goal })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn forward(&self, g: &mut Graph, input: &ModelInput) -> Result<Forward> {
        let fs = input.features.shape();
        if fs.len() != 3 || fs[0] == 0 || fs[1] != self.cfg.obs_len - 1 || fs[2] != STEP_FEATURES {
            return Err(Error::shape("model input", format!("features {fs:?}")));
        }
        let goal = match (&self.goal, &input.goal_offsets) {
            (Some(embed), Some(offsets)) => Some(embed.forward(g, &self.store, offsets)?),
            (None, _) => None,
            (Some(_), None) => return Err(Error::invalid("model input", "goal features required")),
        };
        match &self.net {
            Net::Lstm(net) => net.forward(g, &self.store, input, goal),
            Net::Set(net) => net.forward(g, &self.store, input, goal),
        }
    }

    /// Runs a forward pass and maps the modes back to the world frame.
    pub fn predict(&self, input: &ModelInput) -> Result<PredictionSet> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, input)?;
        let conf = g.softmax(out.logits, 0)?;
        let (k, n) = (self.cfg.k, self.cfg.pred_len);
        let p = g.value(out.preds).data();
        let frame = input.normalized.frame;
        let trajectories = (0..k)
            .map(|m| {
                (0..n)
                    .map(|t| frame.to_world(Point2::new(p[(m * n + t) * 2], p[(m * n + t) * 2 + 1])))
                    .collect()
            })
            .collect();
        Ok(PredictionSet {
            scene_id: input.scene_id.clone(),
            trajectories,
            confidences: g.value(conf).data().to_vec(),
        })
    }
}
