//! Augmentation, deterministic minibatching and the Adam training loop with
//! plateau scheduling, early stopping and resumable checkpoints.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::loss::{total_loss, LossWeights, MetricReport};
use crate::model::{Model, ModelInput};
use crate::scene::{AgentTrack, SceneBundle};
use crate::tensor::{
    read_checkpoint, write_checkpoint, Adam, AdamState, Checkpoint, Gradients, Graph, ParamStore,
    PlateauScheduler, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub point_dropout_p: f64,
    pub rotate90_p: f64,
    pub jitter_sigma_m: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            point_dropout_p: 0.1,
            rotate90_p: 0.5,
            jitter_sigma_m: 0.2,
        }
    }
}

impl AugmentConfig {
    pub const NONE: AugmentConfig = AugmentConfig {
        point_dropout_p: 0.0,
        rotate90_p: 0.0,
        jitter_sigma_m: 0.0,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_steps: u64,
    pub eval_every: u64,
    pub patience: u32,
    pub lr_factor: f64,
    /// Stop after this many consecutive non-improving validations.
    pub early_stop: u32,
    /// Share of scenes held out for validation; 0 validates on the
    /// training scenes.
    pub val_fraction: f64,
    pub aug: AugmentConfig,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 1e-3,
            max_steps: 2000,
            eval_every: 100,
            patience: 3,
            lr_factor: 0.5,
            early_stop: 5,
            val_fraction: 0.1,
            aug: AugmentConfig::default(),
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train config", msg));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.batch_size < 1 || self.eval_every < 1 {
            return bad("batch_size and eval_every must be >= 1".into());
        }
        if !(self.lr > 0.0) || !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad(format!("lr {} / lr_factor {}", self.lr, self.lr_factor));
        }
        if !prob(self.aug.point_dropout_p) || !prob(self.aug.rotate90_p) || !(self.aug.jitter_sigma_m >= 0.0) {
            return bad(format!("augmentation {:?}", self.aug));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {}", self.val_fraction));
        }
        LossWeights::new(self.weights.alpha, self.weights.beta, self.weights.gamma)?;
        Ok(())
    }
}

/// Rotates the whole bundle (tracks, future and grid) by quarter turns
/// about the target's last observed point.
pub fn rotate_bundle(bundle: &SceneBundle, quarter_turns: u8) -> Result<SceneBundle> {
    let q = quarter_turns % 4;
    if q == 0 {
        return Ok(bundle.clone());
    }
    let pivot = bundle.scene.target().last();
    let scene = bundle.scene.map_points(|p| (p - pivot).rotate_quarter(q) + pivot);
    SceneBundle::new(scene, bundle.grid.rotate_quarter(q, pivot))
}

/// Point dropout, random quarter-turn rotation and Gaussian jitter of the
/// observed points. The future only follows the rotation.
pub fn augment<R: Rng>(bundle: &SceneBundle, cfg: &AugmentConfig, rng: &mut R) -> Result<SceneBundle> {
    let m = bundle.scene.time().m;
    let mut tracks = Vec::with_capacity(bundle.scene.tracks().len());
    for t in bundle.scene.tracks() {
        let mut mask = t.valid_mask().to_vec();
        let mut valid = t.valid_count();
        for slot in mask.iter_mut().take(m - 1) {
            let drop = rng.random::<f64>() < cfg.point_dropout_p;
            if drop && *slot && valid > 2 {
                *slot = false;
                valid -= 1;
            }
        }
        tracks.push(AgentTrack::new(t.agent_id(), t.role(), t.observed().to_vec(), mask)?);
    }
    let dropped = SceneBundle::new(bundle.scene.with_tracks(tracks), bundle.grid.clone())?;

    let rotate = rng.random::<f64>() < cfg.rotate90_p;
    let q = rng.random_range(1..4u8);
    let mut out = if rotate { rotate_bundle(&dropped, q)? } else { dropped };

    if cfg.jitter_sigma_m > 0.0 {
        let sigma = cfg.jitter_sigma_m;
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("jitter", e.to_string()))?;
        let mut draw = || loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 6.0 * sigma {
                return v;
            }
        };
        let mut tracks = Vec::with_capacity(out.scene.tracks().len());
        for t in out.scene.tracks() {
            let pts = t
                .observed()
                .iter()
                .zip(t.valid_mask())
                .map(|(p, &v)| {
                    let n = crate::scene::Point2::new(draw(), draw());
                    if v {
                        *p + n
                    } else {
                        *p
                    }
                })
                .collect();
            tracks.push(AgentTrack::new(t.agent_id(), t.role(), pts, t.valid_mask().to_vec())?);
        }
        out = SceneBundle::new(out.scene.with_tracks(tracks), out.grid)?;
    }
    Ok(out)
}

/// Deterministic train/validation split of `n` scene indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    idx.shuffle(&mut rng);
    let val = ((n as f64) * val_fraction).round() as usize;
    let val = val.min(n.saturating_sub(1));
    let mut train = idx.split_off(val);
    train.sort_unstable();
    idx.sort_unstable();
    (train, idx)
}

/// Mean loss terms of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub nll: f64,
    pub ade: f64,
    pub fde: f64,
    pub lr: f64,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "STEP {} loss={:.6} nll={:.6} ade={:.6} fde={:.6} lr={}",
            self.step, self.loss, self.nll, self.ade, self.fde, self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub step: u64,
    pub lr: f64,
    pub best_metric: f64,
    pub bad_validations: u32,
    pub scheduler: PlateauScheduler,
    pub adam: AdamState,
}

/// Outcome of [`Trainer::run`].
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps: u64,
    pub best_metric: f64,
    pub last: Option<StepLog>,
    pub early_stopped: bool,
}

pub struct Trainer {
    cfg: PipelineConfig,
    model: Model,
    best: ParamStore,
    train: Vec<SceneBundle>,
    val: Vec<SceneBundle>,
    state: TrainState,
}

struct SceneResult {
    grads: Gradients,
    terms: [f64; 4],
}

impl Trainer {
    pub fn new(cfg: PipelineConfig, data: Vec<SceneBundle>) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model, cfg.train.seed)?;
        Self::with_model(cfg, model, data)
    }

    fn with_model(cfg: PipelineConfig, model: Model, data: Vec<SceneBundle>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("dataset", "no scenes"));
        }
        let (ti, vi) = split_indices(data.len(), cfg.train.val_fraction, cfg.train.seed);
        let train: Vec<SceneBundle> = ti.iter().map(|&i| data[i].clone()).collect();
        let val: Vec<SceneBundle> = vi.iter().map(|&i| data[i].clone()).collect();
        let state = TrainState {
            step: 0,
            lr: cfg.train.lr,
            best_metric: f64::INFINITY,
            bad_validations: 0,
            scheduler: PlateauScheduler::new(cfg.train.lr_factor, cfg.train.patience),
            adam: AdamState::new(model.store()),
        };
        Ok(Trainer {
            best: model.store().clone(),
            cfg,
            model,
            train,
            val,
            state,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// The model with the best validation parameters seen so far.
    pub fn best_model(&self) -> Model {
        let mut m = self.model.clone();
        *m.store_mut() = self.best.clone();
        m
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn train_scenes(&self) -> &[SceneBundle] {
        &self.train
    }

    pub fn val_scenes(&self) -> &[SceneBundle] {
        if self.val.is_empty() {
            &self.train
        } else {
            &self.val
        }
    }

    /// Training-set index used at global sample position `p`: positions are
    /// laid out epoch by epoch, each epoch a seeded permutation.
    fn sample_index(&self, p: u64) -> usize {
        let n = self.train.len() as u64;
        let mut perm: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.train.seed);
        rng.set_stream(2 * (p / n));
        perm.shuffle(&mut rng);
        perm[(p % n) as usize]
    }

    fn scene_gradients(&self, p: u64) -> Result<(usize, SceneResult)> {
        let idx = self.sample_index(p);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.train.seed);
        rng.set_stream(2 * p + 1);
        let bundle = augment(&self.train[idx], &self.cfg.train.aug, &mut rng)?;
        let input = ModelInput::prepare(&bundle.scene, &bundle.grid, &self.cfg.model, &self.cfg.features)?;
        let future = input
            .normalized
            .future
            .clone()
            .ok_or_else(|| Error::invalid("training scene", format!("{} has no future", bundle.scene.scene_id())))?;
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, &input)?;
        let terms = total_loss(&mut g, out.preds, out.logits, &future, &self.cfg.train.weights)?;
        let values = [terms.total, terms.nll, terms.ade, terms.fde].map(|v| g.value(v).item());
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss {
                step: self.state.step,
                scene_id: bundle.scene.scene_id().to_string(),
            });
        }
        g.backward(terms.total)?;
        let mut grads = self.model.store().empty_gradients();
        g.param_grads(&mut grads);
        Ok((idx, SceneResult { grads, terms: values }))
    }

    /// One Adam step on the next minibatch.
    pub fn step(&mut self) -> Result<StepLog> {
        let bs = self.cfg.train.batch_size as u64;
        let start = self.state.step * bs;
        let results: Vec<Result<(usize, SceneResult)>> =
            (start..start + bs).into_par_iter().map(|p| self.scene_gradients(p)).collect();
        let mut grads = self.model.store().zero_gradients();
        let mut sums = [0.0; 4];
        for r in results {
            let (_, r) = r?;
            grads.merge(&r.grads);
            for (s, v) in sums.iter_mut().zip(r.terms) {
                *s += v;
            }
        }
        let scale = 1.0 / bs as f64;
        grads.scale(scale);
        Adam::new(self.state.lr).step(self.model.store_mut(), &grads, &mut self.state.adam)?;
        self.state.step += 1;
        Ok(StepLog {
            step: self.state.step,
            loss: sums[0] * scale,
            nll: sums[1] * scale,
            ade: sums[2] * scale,
            fde: sums[3] * scale,
            lr: self.state.lr,
        })
    }

    pub fn validate(&self) -> Result<MetricReport> {
        Ok(evaluate(&self.model, &self.cfg.features, self.val_scenes(), self.cfg.model.k)?.0)
    }

    /// Feeds a validation metric to the scheduler and early-stop counter.
    /// Returns true when the metric improved on the best so far.
    pub fn observe_validation(&mut self, metric: f64) -> bool {
        self.state.lr = self.state.scheduler.observe(self.state.lr, metric);
        if metric < self.state.best_metric {
            self.state.best_metric = metric;
            self.state.bad_validations = 0;
            self.best = self.model.store().clone();
            true
        } else {
            self.state.bad_validations += 1;
            false
        }
    }

    /// Trains until `max_steps` or early stop. Writes `STEP` and `EVAL`
    /// lines to `log`; with `out_dir`, keeps `last.ckpt` (resumable) and
    /// `best.ckpt` (best validation parameters) there.
    pub fn run(&mut self, log: &mut dyn Write, out_dir: Option<&Path>) -> Result<TrainSummary> {
        let io = |e: std::io::Error| Error::io("<log>", e);
        let mut last = None;
        let mut early_stopped = false;
        while self.state.step < self.cfg.train.max_steps {
            let s = self.step()?;
            writeln!(log, "{s}").map_err(io)?;
            last = Some(s);
            if self.state.step % self.cfg.train.eval_every == 0 || self.state.step == self.cfg.train.max_steps {
                let report = self.validate()?;
                writeln!(log, "{report} step={}", self.state.step).map_err(io)?;
                let improved = self.observe_validation(report.min_ade_k);
                if let Some(dir) = out_dir {
                    if improved {
                        write_checkpoint(&dir.join("best.ckpt"), &self.checkpoint(false))?;
                    }
                    write_checkpoint(&dir.join("last.ckpt"), &self.checkpoint(true))?;
                }
                if self.state.bad_validations >= self.cfg.train.early_stop {
                    early_stopped = true;
                    break;
                }
            }
        }
        if let Some(dir) = out_dir {
            write_checkpoint(&dir.join("last.ckpt"), &self.checkpoint(true))?;
            if !dir.join("best.ckpt").exists() {
                write_checkpoint(&dir.join("best.ckpt"), &self.checkpoint(false))?;
            }
        }
        Ok(TrainSummary {
            steps: self.state.step,
            best_metric: self.state.best_metric,
            last,
            early_stopped,
        })
    }

    /// Best parameters only, or (with `full`) the current parameters plus
    /// optimizer and scheduler state for resuming.
    pub fn checkpoint(&self, full: bool) -> Checkpoint {
        let mut meta: Vec<(String, String)> =
            self.cfg.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        meta.push(("config_hash".into(), self.cfg.model_hash()));
        let store = if full { self.model.store() } else { &self.best };
        let mut tensors: Vec<(String, Tensor)> =
            store.ids().map(|id| (store.name(id).to_string(), store.value(id).clone())).collect();
        if full {
            let st = &self.state;
            meta.extend([
                ("step".to_string(), st.step.to_string()),
                ("lr_now".to_string(), st.lr.to_string()),
                ("best_metric".to_string(), st.best_metric.to_string()),
                ("bad_validations".to_string(), st.bad_validations.to_string()),
                ("sched_best".to_string(), st.scheduler.best.to_string()),
                ("sched_bad".to_string(), st.scheduler.bad_evals.to_string()),
                ("adam_step".to_string(), st.adam.step.to_string()),
            ]);
            for id in store.ids() {
                let name = store.name(id);
                tensors.push((format!("{name}@m"), st.adam.m[id.index()].clone()));
                tensors.push((format!("{name}@v"), st.adam.v[id.index()].clone()));
                tensors.push((format!("{name}@best"), self.best.value(id).clone()));
            }
        }
        Checkpoint { meta, tensors }
    }

    /// Restores a trainer from a full checkpoint written by [`Trainer::run`].
    pub fn resume(ckpt: &Checkpoint, data: Vec<SceneBundle>) -> Result<Self> {
        let (cfg, model) = model_from_checkpoint(ckpt, None)?;
        let mut t = Self::with_model(cfg, model, data)?;
        let meta = |k: &str| {
            ckpt.meta(k)
                .ok_or_else(|| Error::invalid("checkpoint", format!("missing `{k}` (not a resumable checkpoint)")))
        };
        let num = |k: &str| -> Result<f64> {
            meta(k)?.parse().map_err(|_| Error::invalid("checkpoint", format!("bad `{k}`")))
        };
        let int = |k: &str| -> Result<u64> {
            meta(k)?.parse().map_err(|_| Error::invalid("checkpoint", format!("bad `{k}`")))
        };
        t.state.step = int("step")?;
        t.state.lr = num("lr_now")?;
        t.state.best_metric = num("best_metric")?;
        t.state.bad_validations = int("bad_validations")? as u32;
        t.state.scheduler.best = num("sched_best")?;
        t.state.scheduler.bad_evals = int("sched_bad")? as u32;
        t.state.adam.step = int("adam_step")?;
        let store = t.model.store().clone();
        for id in store.ids() {
            let name = store.name(id);
            let get = |suffix: &str| {
                ckpt.tensor(&format!("{name}{suffix}"))
                    .cloned()
                    .ok_or_else(|| Error::invalid("checkpoint", format!("missing `{name}{suffix}`")))
            };
            t.state.adam.m[id.index()] = get("@m")?;
            t.state.adam.v[id.index()] = get("@v")?;
            *t.best.value_mut(id) = get("@best")?;
        }
        Ok(t)
    }

    pub fn resume_from(path: &Path, data: Vec<SceneBundle>) -> Result<Self> {
        Self::resume(&read_checkpoint(path)?, data)
    }
}

/// Rebuilds the configuration and model stored in a checkpoint. When
/// `expected` is given, its model hash must match the checkpoint's.
pub fn model_from_checkpoint(ckpt: &Checkpoint, expected: Option<&PipelineConfig>) -> Result<(PipelineConfig, Model)> {
    let cfg = PipelineConfig::from_pairs(
        ckpt.meta
            .iter()
            .filter(|(k, _)| PipelineConfig::default().pairs().iter().any(|(n, _)| n == k))
            .map(|(k, v)| (k.as_str(), v.as_str())),
    )?;
    let stored = ckpt
        .meta("config_hash")
        .ok_or_else(|| Error::invalid("checkpoint", "missing config_hash"))?;
    if stored != cfg.model_hash() {
        return Err(Error::ConfigMismatch {
            expected: cfg.model_hash(),
            found: stored.to_string(),
        });
    }
    if let Some(exp) = expected {
        if exp.model_hash() != stored {
            return Err(Error::ConfigMismatch {
                expected: exp.model_hash(),
                found: stored.to_string(),
            });
        }
    }
    let mut model = Model::new(cfg.model, cfg.train.seed)?;
    let params: Vec<(String, Tensor)> = ckpt.tensors.iter().filter(|(n, _)| !n.contains('@')).cloned().collect();
    if params.len() != model.store().len() {
        return Err(Error::invalid(
            "checkpoint",
            format!("{} parameter tensors, model has {}", params.len(), model.store().len()),
        ));
    }
    model.store_mut().load_from(&params)?;
    Ok((cfg, model))
}
