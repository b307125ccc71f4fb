//! Shared test support: a central finite-difference gradient checker,
//! brute-force reference implementations and the property suites that the
//! workspace acceptance run also executes.

#![allow(dead_code)]

use std::f64::consts::PI;

use effmp::attention::{Linear, LstmCell, MhsaConfig, MultiHeadAttention, SetAttentionBlock, SetBlockConfig};
use effmp::features::{
    goal_offsets, sample_goal_points, smooth_heading, smooth_last, DynamicState, GoalSamplerConfig,
    SmoothingConfig,
};
use effmp::loss::{ade, fde, min_ade_k, min_fde_k, nll, total_loss, LossWeights};
use effmp::model::{GoalEmbedding, Model, ModelConfig, ModelInput, Variant};
use effmp::scene::{AgentTrack, FeasibleGrid, Occupancy, Point2, Role, Scene, SceneBundle, TimeBase};
use effmp::tensor::{Graph, ParamStore, Tensor, Var};
use effmp::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Suite = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

// ---- finite differences -----------------------------------------------------

pub const GRAD_RTOL: f64 = 1e-4;
/// Denominator floor for the relative error, so gradients that are zero up
/// to rounding compare in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-4;
/// Step sizes tried in order. A coordinate passes if any of them agrees with
/// the analytic gradient; the later ones only matter when a perturbation
/// crosses a relu/max kink.
pub const FD_STEPS: [f64; 3] = [1e-5, 1e-6, 1e-4];

pub type LossFn<'a> = dyn Fn(&mut Graph, &ParamStore, &[Var]) -> Var + 'a;

/// A scalar function of some input tensors and a parameter store.
pub struct Case<'a> {
    pub name: String,
    pub store: ParamStore,
    pub inputs: Vec<Tensor>,
    pub f: Box<LossFn<'a>>,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradStats {
    pub checked: usize,
    pub worst: f64,
}

impl GradStats {
    pub fn absorb(&mut self, o: GradStats) {
        self.checked += o.checked;
        self.worst = self.worst.max(o.worst);
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

fn evaluate(case: &Case, store: &ParamStore, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = (case.f)(&mut g, store, &vars);
    g.value(out).item()
}

fn pick(len: usize, per_tensor: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len > per_tensor {
        idx.shuffle(rng);
        idx.truncate(per_tensor);
    }
    idx
}

/// Compares reverse-mode gradients of `case` with central differences on up
/// to `per_tensor` random coordinates of every input and parameter tensor.
pub fn gradcheck(case: &Case, per_tensor: usize, seed: u64) -> Result<GradStats, String> {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = (case.f)(&mut g, &case.store, &vars);
    g.backward(out).map_err(|e| format!("{}: backward: {e}", case.name))?;
    let mut pgrads = case.store.zero_gradients();
    g.param_grads(&mut pgrads);
    let input_grads: Vec<Tensor> = vars
        .iter()
        .zip(&case.inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rng = rng(seed);
    let mut stats = GradStats::default();
    let mut check = |label: String, analytic: f64, numeric: &mut dyn FnMut(f64) -> f64| -> Result<(), String> {
        let mut best = f64::INFINITY;
        let mut seen = Vec::new();
        for eps in FD_STEPS {
            let n = numeric(eps);
            let e = rel_err(analytic, n);
            best = best.min(e);
            seen.push(n);
            if e <= GRAD_RTOL {
                break;
            }
        }
        stats.checked += 1;
        stats.worst = stats.worst.max(best);
        if best > GRAD_RTOL {
            return Err(format!(
                "{}: {label}: analytic {analytic:e} vs numeric {seen:?} (rel err {best:e})",
                case.name
            ));
        }
        Ok(())
    };

    for (ti, t) in case.inputs.iter().enumerate() {
        for i in pick(t.len(), per_tensor, &mut rng) {
            let a = input_grads[ti].data()[i];
            let mut numeric = |eps: f64| {
                let mut xs = case.inputs.clone();
                xs[ti].data_mut()[i] = t.data()[i] + eps;
                let up = evaluate(case, &case.store, &xs);
                xs[ti].data_mut()[i] = t.data()[i] - eps;
                let down = evaluate(case, &case.store, &xs);
                (up - down) / (2.0 * eps)
            };
            check(format!("input {ti}[{i}]"), a, &mut numeric)?;
        }
    }
    let mut store = case.store.clone();
    for id in case.store.ids() {
        let len = case.store.value(id).len();
        for i in pick(len, per_tensor, &mut rng) {
            let a = pgrads.get(id).map_or(0.0, |t| t.data()[i]);
            let x0 = case.store.value(id).data()[i];
            let mut numeric = |eps: f64| {
                store.value_mut(id).data_mut()[i] = x0 + eps;
                let up = evaluate(case, &store, &case.inputs);
                store.value_mut(id).data_mut()[i] = x0 - eps;
                let down = evaluate(case, &store, &case.inputs);
                store.value_mut(id).data_mut()[i] = x0;
                (up - down) / (2.0 * eps)
            };
            check(format!("{}[{i}]", case.store.name(id)), a, &mut numeric)?;
        }
    }
    Ok(stats)
}

/// Reduces any tensor to a scalar through fixed random weights, so every
/// output entry contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Var {
    let w = random_tensor(g.shape(x), -1.0, 1.0, &mut rng(seed ^ 0xabcd));
    let w = g.constant(w);
    let p = g.mul(x, w).unwrap();
    g.sum_all(p)
}

// ---- gradcheck cases --------------------------------------------------------

fn op_case<'a>(
    name: &str,
    shapes: &[(&[usize], f64, f64)],
    seed: u64,
    f: impl Fn(&mut Graph, &[Var]) -> Var + 'a,
) -> Case<'a> {
    let mut r = rng(seed);
    let inputs = shapes.iter().map(|(s, lo, hi)| random_tensor(s, *lo, *hi, &mut r)).collect();
    Case {
        name: format!("op {name} seed {seed}"),
        store: ParamStore::new(),
        inputs,
        f: Box::new(move |g, _, v| {
            let y = f(g, v);
            weighted_sum(g, y, seed)
        }),
    }
}

/// One case per differentiable tensor op.
pub fn op_cases(seed: u64) -> Vec<Case<'static>> {
    const A: (f64, f64) = (-2.0, 2.0);
    const POS: (f64, f64) = (0.5, 2.0);
    let s = |shape: &'static [usize], r: (f64, f64)| (shape, r.0, r.1);
    vec![
        op_case("add", &[s(&[3, 4], A), s(&[3, 4], A)], seed, |g, v| g.add(v[0], v[1]).unwrap()),
        op_case("add_broadcast", &[s(&[3, 4], A), s(&[4], A)], seed, |g, v| g.add(v[0], v[1]).unwrap()),
        op_case("sub", &[s(&[2, 5], A), s(&[5], A)], seed, |g, v| g.sub(v[0], v[1]).unwrap()),
        op_case("mul", &[s(&[3, 4], A), s(&[3, 4], A)], seed, |g, v| g.mul(v[0], v[1]).unwrap()),
        op_case("mul_broadcast", &[s(&[2, 3, 4], A), s(&[3, 4], A)], seed, |g, v| g.mul(v[0], v[1]).unwrap()),
        op_case("scale", &[s(&[6], A)], seed, |g, v| g.scale(v[0], -1.7)),
        op_case("neg", &[s(&[6], A)], seed, |g, v| g.neg(v[0])),
        op_case("add_scalar", &[s(&[6], A)], seed, |g, v| g.add_scalar(v[0], 0.3)),
        op_case("matmul", &[s(&[2, 3], A), s(&[3, 4], A)], seed, |g, v| g.matmul(v[0], v[1]).unwrap()),
        op_case("transpose", &[s(&[3, 5], A)], seed, |g, v| g.transpose(v[0]).unwrap()),
        op_case("reshape", &[s(&[2, 6], A)], seed, |g, v| g.reshape(v[0], &[3, 2, 2]).unwrap()),
        op_case("concat0", &[s(&[2, 3], A), s(&[1, 3], A)], seed, |g, v| g.concat(&[v[0], v[1]], 0).unwrap()),
        op_case("concat1", &[s(&[2, 3], A), s(&[2, 2], A)], seed, |g, v| g.concat(&[v[0], v[1]], 1).unwrap()),
        op_case("slice", &[s(&[3, 5, 2], A)], seed, |g, v| g.slice(v[0], 1, 1, 4).unwrap()),
        op_case("sum", &[s(&[3, 4], A)], seed, |g, v| g.sum(v[0], 1).unwrap()),
        op_case("mean", &[s(&[3, 4, 2], A)], seed, |g, v| g.mean(v[0], 1).unwrap()),
        op_case("sum_all", &[s(&[3, 4], A)], seed, |g, v| g.sum_all(v[0])),
        op_case("max", &[s(&[5, 3], A)], seed, |g, v| g.max(v[0], 0).unwrap()),
        op_case("cumsum", &[s(&[2, 6, 2], A)], seed, |g, v| g.cumsum(v[0], 1).unwrap()),
        op_case("exp", &[s(&[5], A)], seed, |g, v| g.exp(v[0])),
        op_case("log", &[s(&[5], POS)], seed, |g, v| g.log(v[0]).unwrap()),
        op_case("tanh", &[s(&[5], A)], seed, |g, v| g.tanh(v[0])),
        op_case("sigmoid", &[s(&[5], A)], seed, |g, v| g.sigmoid(v[0])),
        op_case("sqrt", &[s(&[5], POS)], seed, |g, v| g.sqrt(v[0]).unwrap()),
        op_case("relu", &[s(&[8], A)], seed, |g, v| g.relu(v[0])),
        op_case("softmax0", &[s(&[4, 3], A)], seed, |g, v| g.softmax(v[0], 0).unwrap()),
        op_case("softmax1", &[s(&[4, 3], A)], seed, |g, v| g.softmax(v[0], 1).unwrap()),
        op_case("logsumexp", &[s(&[4, 3], A)], seed, |g, v| g.logsumexp(v[0], 1).unwrap()),
        op_case("composite", &[s(&[3, 4], A), s(&[4, 2], A)], seed, |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let t = g.tanh(m);
            let e = g.exp(t);
            let sm = g.softmax(e, 1).unwrap();
            g.mul(sm, m).unwrap()
        }),
    ]
}

/// Every attention-core block plus the goal embedding, at small widths.
pub fn block_cases(seed: u64) -> Vec<Case<'static>> {
    let mut r = rng(seed);
    let attn = MhsaConfig::new(8, 2).unwrap();
    let mut cases = Vec::new();

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "lin", 5, 3, &mut r);
    cases.push(Case {
        name: format!("linear seed {seed}"),
        store,
        inputs: vec![random_tensor(&[4, 5], -1.0, 1.0, &mut r)],
        f: Box::new(move |g, s, v| {
            let y = lin.forward(g, s, v[0]).unwrap();
            weighted_sum(g, y, seed)
        }),
    });

    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 8, 8, attn, &mut r);
    let mask = vec![true, false, true, true];
    cases.push(Case {
        name: format!("mhsa seed {seed}"),
        store,
        inputs: vec![random_tensor(&[4, 8], -1.0, 1.0, &mut r)],
        f: Box::new(move |g, s, v| {
            let y = mha.mhsa(g, s, v[0], Some(&mask)).unwrap();
            weighted_sum(g, y, seed)
        }),
    });

    let mut store = ParamStore::new();
    let cross = MultiHeadAttention::new(&mut store, "cross", 8, 6, attn, &mut r);
    cases.push(Case {
        name: format!("cross_attention seed {seed}"),
        store,
        inputs: vec![random_tensor(&[3, 8], -1.0, 1.0, &mut r), random_tensor(&[5, 6], -1.0, 1.0, &mut r)],
        f: Box::new(move |g, s, v| {
            let y = cross.cross_attention(g, s, v[0], v[1], None).unwrap();
            weighted_sum(g, y, seed)
        }),
    });

    let mut store = ParamStore::new();
    let block = SetAttentionBlock::new(
        &mut store,
        "sab",
        SetBlockConfig {
            attention: attn,
            hidden_dim: 12,
        },
        &mut r,
    );
    cases.push(Case {
        name: format!("set_attention_block seed {seed}"),
        store,
        inputs: vec![random_tensor(&[4, 8], -1.0, 1.0, &mut r)],
        f: Box::new(move |g, s, v| {
            let y = block.forward(g, s, v[0], None).unwrap();
            weighted_sum(g, y, seed)
        }),
    });

    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", 3, 5, &mut r);
    cases.push(Case {
        name: format!("lstm x5 seed {seed}"),
        store,
        inputs: vec![
            random_tensor(&[5, 2, 3], -1.0, 1.0, &mut r),
            random_tensor(&[2, 5], -0.5, 0.5, &mut r),
            random_tensor(&[2, 5], -0.5, 0.5, &mut r),
        ],
        f: Box::new(move |g, s, v| {
            let (mut h, mut c) = (v[1], v[2]);
            let mut outs = Vec::new();
            for t in 0..5 {
                let x = g.slice(v[0], 0, t, t + 1).unwrap();
                let x = g.reshape(x, &[2, 3]).unwrap();
                (h, c) = cell.step(g, s, x, h, c).unwrap();
                outs.push(h);
            }
            let all = g.concat(&outs, 1).unwrap();
            let all = g.concat(&[all, c], 1).unwrap();
            weighted_sum(g, all, seed)
        }),
    });

    let mut store = ParamStore::new();
    let cfg = ModelConfig {
        goal_hidden: 6,
        goal_embed_dim: 4,
        ..Default::default()
    };
    let emb = GoalEmbedding::new(&mut store, &cfg, &mut r);
    let offsets: Vec<Point2> = (0..7)
        .map(|_| Point2::new(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0)))
        .collect();
    cases.push(Case {
        name: format!("goal_embedding seed {seed}"),
        store,
        inputs: vec![],
        f: Box::new(move |g, s, _| {
            let y = emb.forward(g, s, &offsets).unwrap();
            weighted_sum(g, y, seed)
        }),
    });

    cases
}

/// Random scene with `agents` tracks around the origin, a target and an
/// optional future, on a fully feasible grid.
pub fn random_bundle(agents: usize, seed: u64) -> SceneBundle {
    let mut r = rng(seed);
    let tb = TimeBase::ARGOVERSE;
    let mut tracks = Vec::new();
    for a in 0..agents {
        let start = Point2::new(r.random_range(-15.0..15.0), r.random_range(-15.0..15.0));
        let heading = r.random_range(-PI..PI);
        let speed = r.random_range(0.5..1.2);
        let turn = r.random_range(-0.05..0.05);
        let mut p = start;
        let mut h = heading;
        let pts: Vec<Point2> = (0..tb.m)
            .map(|_| {
                let out = p;
                p = p + Point2::from_polar(speed, h);
                h += turn;
                out
            })
            .collect();
        let role = if a == 0 { Role::Target } else { Role::Other };
        tracks.push(AgentTrack::fully_observed(format!("a{a}"), role, pts).unwrap());
    }
    let t = tracks[0].observed();
    let v = t[tb.m - 1] - t[tb.m - 2];
    let future: Vec<Point2> = (1..=tb.n)
        .map(|i| t[tb.m - 1] + v * i as f64 + Point2::new(0.0, 0.01 * (i * i) as f64))
        .collect();
    let scene = Scene::new(format!("rand{seed}"), tracks, Some(future), tb).unwrap();
    let grid = FeasibleGrid::filled(Point2::new(-80.0, -80.0), 1.0, 160, 160, true).unwrap();
    SceneBundle::new(scene, grid).unwrap()
}

pub fn model_config(variant: Variant, goals: bool, k: usize) -> ModelConfig {
    ModelConfig {
        variant,
        use_goal_features: goals,
        k,
        ..Default::default()
    }
}

/// Total training loss of a full model with respect to all its parameters.
pub fn model_case(cfg: ModelConfig, seed: u64) -> Case<'static> {
    let model = Model::new(cfg, seed).unwrap();
    let bundle = random_bundle(3, seed + 100);
    let input = ModelInput::prepare(&bundle.scene, &bundle.grid, &cfg, &Default::default()).unwrap();
    // Ground truth near the first mode keeps the loss O(1), so central
    // differences are not swamped by rounding in a large loss value.
    let mut g = Graph::new();
    let first = model.forward(&mut g, &input).unwrap();
    let p = g.value(first.preds).data();
    let mut r = rng(seed + 200);
    let gt: Vec<Point2> = (0..cfg.pred_len)
        .map(|t| Point2::new(p[2 * t], p[2 * t + 1]) + Point2::new(r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)))
        .collect();
    let store = model.store().clone();
    Case {
        name: format!(
            "{} goals={} k={} seed {seed}",
            cfg.variant, cfg.use_goal_features, cfg.k
        ),
        store,
        inputs: vec![],
        f: Box::new(move |g, s, _| {
            let mut m = model.clone();
            *m.store_mut() = s.clone();
            let out = m.forward(g, &input).unwrap();
            total_loss(g, out.preds, out.logits, &gt, &LossWeights::default()).unwrap().total
        }),
    }
}

pub fn model_configs() -> Vec<ModelConfig> {
    let mut v = Vec::new();
    for variant in [Variant::SetTransformer, Variant::LstmMhsa] {
        for goals in [false, true] {
            for k in [1, 6] {
                v.push(model_config(variant, goals, k));
            }
        }
    }
    v
}

pub const GRAD_SEEDS: u64 = 10;

pub fn gradcheck_ops() -> Result<GradStats, String> {
    let mut stats = GradStats::default();
    for seed in 0..GRAD_SEEDS {
        for case in op_cases(seed) {
            stats.absorb(gradcheck(&case, 12, seed)?);
        }
    }
    Ok(stats)
}

pub fn gradcheck_blocks() -> Result<GradStats, String> {
    let mut stats = GradStats::default();
    for seed in 0..GRAD_SEEDS {
        for case in block_cases(seed) {
            stats.absorb(gradcheck(&case, 6, seed)?);
        }
    }
    Ok(stats)
}

pub fn gradcheck_models() -> Result<GradStats, String> {
    let mut stats = GradStats::default();
    for cfg in model_configs() {
        for seed in 0..GRAD_SEEDS {
            stats.absorb(gradcheck(&model_case(cfg, seed), 2, seed)?);
        }
    }
    Ok(stats)
}

/// Gradients of the composite loss with respect to raw predictions and
/// confidence logits.
pub fn gradcheck_loss() -> Result<GradStats, String> {
    let mut stats = GradStats::default();
    for seed in 0..GRAD_SEEDS {
        for k in [1, 6] {
            let mut r = rng(seed);
            let gt: Vec<Point2> = (0..30).map(|_| Point2::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0))).collect();
            let case = Case {
                name: format!("total_loss k={k} seed {seed}"),
                store: ParamStore::new(),
                inputs: vec![random_tensor(&[k, 30, 2], -2.0, 2.0, &mut r), random_tensor(&[k], -1.0, 1.0, &mut r)],
                f: Box::new(move |g, _, v| total_loss(g, v[0], v[1], &gt, &LossWeights::default()).unwrap().total),
            };
            stats.absorb(gradcheck(&case, 16, seed)?);
        }
    }
    Ok(stats)
}

pub fn gradcheck_suite() -> Suite {
    let mut parts = Vec::new();
    for (name, run) in [
        ("ops", gradcheck_ops as fn() -> Result<GradStats, String>),
        ("blocks", gradcheck_blocks),
        ("loss", gradcheck_loss),
        ("models", gradcheck_models),
    ] {
        let s = run()?;
        parts.push(format!("{name} {} coords (worst rel {:.1e})", s.checked, s.worst));
    }
    Ok(parts.join(", "))
}

// ---- loss oracles -----------------------------------------------------------

pub fn oracle_ade(p: &[Point2], g: &[Point2]) -> f64 {
    let mut total = 0.0;
    for t in 0..p.len() {
        let dx = p[t].x - g[t].x;
        let dy = p[t].y - g[t].y;
        total += (dx * dx + dy * dy).sqrt();
    }
    total / p.len() as f64
}

pub fn oracle_fde(p: &[Point2], g: &[Point2]) -> f64 {
    let t = p.len() - 1;
    ((p[t].x - g[t].x).powi(2) + (p[t].y - g[t].y).powi(2)).sqrt()
}

pub fn oracle_min(preds: &[Vec<Point2>], g: &[Point2], metric: fn(&[Point2], &[Point2]) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for p in preds {
        let v = metric(p, g);
        if v < best {
            best = v;
        }
    }
    best
}

/// Mixture likelihood evaluated directly (no log-sum-exp shift).
pub fn oracle_nll(preds: &[Vec<Point2>], conf: &[f64], g: &[Point2]) -> f64 {
    let mut lik = 0.0;
    for (p, c) in preds.iter().zip(conf) {
        let mut sse = 0.0;
        for t in 0..g.len() {
            sse += (p[t].x - g[t].x).powi(2) + (p[t].y - g[t].y).powi(2);
        }
        lik += c * (-0.5 * sse).exp();
    }
    -lik.ln()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub struct LossInstance {
    pub preds: Vec<Vec<Point2>>,
    pub conf: Vec<f64>,
    pub gt: Vec<Point2>,
}

pub fn random_loss_instance(seed: u64) -> LossInstance {
    let mut r = rng(seed);
    let k = r.random_range(1..=8);
    let n = r.random_range(1..=30);
    let gt: Vec<Point2> = (0..n).map(|_| Point2::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0))).collect();
    let preds = (0..k)
        .map(|_| {
            let s = r.random_range(0.0..0.5);
            gt.iter()
                .map(|p| *p + Point2::new(r.random_range(-s..=s), r.random_range(-s..=s)))
                .collect()
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    LossInstance {
        preds,
        conf: raw.iter().map(|c| c / total).collect(),
        gt,
    }
}

pub fn loss_oracle_suite() -> Suite {
    const TOL: f64 = 1e-12;
    for seed in 0..1000 {
        let x = random_loss_instance(seed);
        let checks = [
            ("ade", ade(&x.preds[0], &x.gt).unwrap(), oracle_ade(&x.preds[0], &x.gt)),
            ("fde", fde(&x.preds[0], &x.gt).unwrap(), oracle_fde(&x.preds[0], &x.gt)),
            ("min_ade", min_ade_k(&x.preds, &x.gt).unwrap().0, oracle_min(&x.preds, &x.gt, oracle_ade)),
            ("min_fde", min_fde_k(&x.preds, &x.gt).unwrap().0, oracle_min(&x.preds, &x.gt, oracle_fde)),
            ("nll", nll(&x.preds, &x.conf, &x.gt).unwrap(), oracle_nll(&x.preds, &x.conf, &x.gt)),
        ];
        for (name, got, want) in checks {
            if !close(got, want, TOL) {
                return Err(format!("instance {seed}: {name} {got} vs oracle {want}"));
            }
        }
    }
    let gt: Vec<Point2> = (0..30).map(|i| Point2::new(i as f64, 0.5 * i as f64)).collect();
    let mut off = gt.clone();
    off[7].x += 1.0;
    let far: Vec<Point2> = gt.iter().map(|p| *p + Point2::new(1e3, 0.0)).collect();
    let worked = [
        ("exact", nll(&[gt.clone()], &[1.0], &gt).unwrap(), 0.0),
        ("one metre", nll(&[off], &[1.0], &gt).unwrap(), 0.5),
        ("half", nll(&[gt.clone(), far], &[0.5, 0.5], &gt).unwrap(), -(0.5f64).ln()),
    ];
    for (name, got, want) in worked {
        if (got - want).abs() > TOL {
            return Err(format!("worked example {name}: {got} vs {want}"));
        }
    }
    Ok("1000 random instances and 3 worked NLL examples within 1e-12".into())
}

// ---- permutation ------------------------------------------------------------

pub fn max_abs_diff(a: &[Vec<Point2>], b: &[Vec<Point2>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(p, q)| (p.x - q.x).abs().max((p.y - q.y).abs()))
        .fold(0.0, f64::max)
}

pub fn agent_permutation_gap(cfg: ModelConfig, seed: u64) -> f64 {
    let model = Model::new(cfg, seed).unwrap();
    let bundle = random_bundle(5, seed + 7);
    let mut order: Vec<usize> = (0..5).collect();
    order.shuffle(&mut rng(seed));
    let shuffled = bundle.scene.with_track_order(&order).unwrap();
    let fc = Default::default();
    let a = model
        .predict(&ModelInput::prepare(&bundle.scene, &bundle.grid, &cfg, &fc).unwrap())
        .unwrap();
    let b = model
        .predict(&ModelInput::prepare(&shuffled, &bundle.grid, &cfg, &fc).unwrap())
        .unwrap();
    let conf = a
        .confidences
        .iter()
        .zip(&b.confidences)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    max_abs_diff(&a.trajectories, &b.trajectories).max(conf)
}

pub fn cross_attention_kv_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let attn = MultiHeadAttention::new(&mut store, "x", 16, 12, MhsaConfig::new(16, 4).unwrap(), &mut r);
    let q = random_tensor(&[3, 16], -1.0, 1.0, &mut r);
    let kv = random_tensor(&[7, 12], -1.0, 1.0, &mut r);
    let mut order: Vec<usize> = (0..7).collect();
    order.shuffle(&mut r);
    let mut permuted = Vec::with_capacity(kv.len());
    for &i in &order {
        permuted.extend_from_slice(&kv.data()[i * 12..(i + 1) * 12]);
    }
    let run = |kv: Tensor| {
        let mut g = Graph::new();
        let qv = g.constant(q.clone());
        let kvv = g.constant(kv);
        let out = attn.cross_attention(&mut g, &store, qv, kvv, None).unwrap();
        g.value(out).data().to_vec()
    };
    let a = run(kv.clone());
    let b = run(Tensor::new(vec![7, 12], permuted).unwrap());
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mode_permutation_gap(seed: u64) -> f64 {
    let x = random_loss_instance(seed);
    let mut order: Vec<usize> = (0..x.preds.len()).collect();
    order.shuffle(&mut rng(seed + 1));
    let preds: Vec<Vec<Point2>> = order.iter().map(|&i| x.preds[i].clone()).collect();
    let conf: Vec<f64> = order.iter().map(|&i| x.conf[i]).collect();
    let pairs = [
        (nll(&x.preds, &x.conf, &x.gt).unwrap(), nll(&preds, &conf, &x.gt).unwrap()),
        (min_ade_k(&x.preds, &x.gt).unwrap().0, min_ade_k(&preds, &x.gt).unwrap().0),
        (min_fde_k(&x.preds, &x.gt).unwrap().0, min_fde_k(&preds, &x.gt).unwrap().0),
    ];
    pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

pub fn permutation_suite() -> Suite {
    let mut agent = 0.0f64;
    for cfg in model_configs() {
        for seed in 0..3 {
            agent = agent.max(agent_permutation_gap(cfg, seed));
        }
    }
    if agent > 1e-9 {
        return Err(format!("agent permutation changed predictions by {agent:e}"));
    }
    let kv = (0..50).map(cross_attention_kv_gap).fold(0.0, f64::max);
    if kv > 1e-9 {
        return Err(format!("kv permutation changed cross-attention by {kv:e}"));
    }
    let modes = (0..1000).map(mode_permutation_gap).fold(0.0, f64::max);
    if modes > 1e-12 {
        return Err(format!("mode permutation changed metrics by {modes:e}"));
    }
    Ok(format!("agents {agent:.1e}, kv {kv:.1e}, modes {modes:.1e}"))
}

// ---- goal sampler -----------------------------------------------------------

pub struct SamplerSetup {
    pub grid: FeasibleGrid,
    pub state: DynamicState,
    pub center: Point2,
    pub cfg: GoalSamplerConfig,
}

/// Random blob-shaped feasible area, state and sampler settings. The center
/// is always inside the grid.
pub fn random_sampler_setup(seed: u64) -> SamplerSetup {
    let mut r = rng(seed);
    let res = r.random_range(0.25..1.5);
    let (w, h) = (r.random_range(10..80), r.random_range(10..80));
    let origin = Point2::new(r.random_range(-50.0..0.0), r.random_range(-50.0..0.0));
    let blobs: Vec<(Point2, f64)> = (0..r.random_range(1..6))
        .map(|_| {
            let c = origin + Point2::new(r.random_range(0.0..w as f64 * res), r.random_range(0.0..h as f64 * res));
            (c, r.random_range(1.0..20.0))
        })
        .collect();
    let density = r.random_range(0.3..1.0);
    let cell_rng = std::cell::RefCell::new(rng(seed ^ 0x77));
    let grid = FeasibleGrid::from_fn(origin, res, w, h, |p| {
        blobs.iter().any(|(c, rad)| p.distance(*c) < *rad) && cell_rng.borrow_mut().random_bool(density)
    })
    .unwrap();
    let center = origin + Point2::new(r.random_range(0.0..w as f64 * res), r.random_range(0.0..h as f64 * res));
    let state = DynamicState {
        heading: r.random_range(-PI..PI),
        speed: if r.random_bool(0.2) { 0.0 } else { r.random_range(0.0..15.0) },
    };
    let cfg = GoalSamplerConfig {
        r: r.random_range(1..64),
        horizon_s: r.random_range(0.5..4.0),
        min_radius_m: r.random_range(0.0..5.0),
        forward_cone_deg: [90.0, 120.0, 180.0, 270.0, 360.0][r.random_range(0..5)],
        speed_gate_mps: r.random_range(0.0..3.0),
        seed: r.random(),
    };
    SamplerSetup { grid, state, center, cfg }
}

fn wrapped_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Checks one configuration; returns the number of points sampled.
pub fn check_sampler_setup(s: &SamplerSetup) -> Result<usize, String> {
    let first = sample_goal_points(&s.grid, &s.state, s.center, &s.cfg);
    let again = sample_goal_points(&s.grid, &s.state, s.center, &s.cfg);
    if format!("{first:?}") != format!("{again:?}") {
        return Err("not deterministic".into());
    }
    let set = match first {
        Ok(set) => set,
        Err(Error::NoFeasibleCells) => return Ok(0),
        Err(e) => return Err(format!("unexpected error {e}")),
    };
    if set.points.len() > s.cfg.r {
        return Err(format!("{} points for r={}", set.points.len(), s.cfg.r));
    }
    let radius = (s.cfg.horizon_s * s.state.speed).max(s.cfg.min_radius_m);
    if (set.radius - radius).abs() > 1e-12 {
        return Err(format!("radius {} vs {radius}", set.radius));
    }
    let cone = s.state.speed > s.cfg.speed_gate_mps && s.cfg.forward_cone_deg < 360.0;
    for p in &set.points {
        if !s.grid.is_feasible_at(*p) {
            return Err(format!("infeasible point {p:?}"));
        }
        let off = *p - s.center;
        if off.norm() > radius + 1e-9 {
            return Err(format!("point {p:?} at {} outside radius {radius}", off.norm()));
        }
        if cone {
            let half = s.cfg.forward_cone_deg.to_radians() / 2.0;
            if off.norm() == 0.0 || wrapped_gap(off.y.atan2(off.x), s.state.heading) >= half {
                return Err(format!("point {p:?} outside the forward cone"));
            }
        }
    }
    Ok(set.points.len())
}

/// Mean offset of many goal points on a fully feasible grid with the cone
/// inactive, relative to the radius.
pub fn unfiltered_mean_offset(seed: u64) -> f64 {
    let grid = FeasibleGrid::filled(Point2::new(-100.0, -100.0), 0.25, 800, 800, true).unwrap();
    let center = grid.cell_center(grid.cell_of(Point2::new(0.1, 0.1)).unwrap());
    let state = DynamicState {
        heading: rng(seed).random_range(-PI..PI),
        speed: 0.5,
    };
    let cfg = GoalSamplerConfig {
        r: 4000,
        min_radius_m: 20.0,
        seed,
        ..Default::default()
    };
    let set = sample_goal_points(&grid, &state, center, &cfg).unwrap();
    let n = set.points.len() as f64;
    let mean = goal_offsets(&set).iter().fold(Point2::ORIGIN, |a, p| a + *p) * (1.0 / n);
    mean.norm() / set.radius
}

pub fn goal_sampler_suite() -> Suite {
    let mut sampled = 0;
    let mut empty = 0;
    for seed in 0..1000 {
        let s = random_sampler_setup(seed);
        match check_sampler_setup(&s) {
            Ok(0) => empty += 1,
            Ok(n) => sampled += n,
            Err(e) => return Err(format!("config {seed}: {e}")),
        }
    }
    let bias = (0..5).map(unfiltered_mean_offset).fold(0.0, f64::max);
    if bias >= 0.05 {
        return Err(format!("mean offset {bias:.4} x radius on the unfiltered disc"));
    }
    Ok(format!(
        "1000 configs, {sampled} points checked ({empty} empty), mean-offset bias {bias:.4} x radius"
    ))
}

// ---- smoothing ---------------------------------------------------------------

/// Circular weighted mean computed relative to `reference`: every angle is
/// first expressed as a small offset from it, so the sums never straddle
/// the +-pi cut.
pub fn oracle_circular_mean(seq: &[f64], lambda: f64, reference: f64) -> f64 {
    let n = seq.len();
    let (mut s, mut c) = (0.0, 0.0);
    for (t, a) in seq.iter().enumerate() {
        let w = lambda.powi((n - 1 - t) as i32);
        let rel = (a - reference + PI).rem_euclid(2.0 * PI) - PI;
        s += w * rel.sin();
        c += w * rel.cos();
    }
    reference + s.atan2(c)
}

pub fn smoothing_suite() -> Suite {
    let mut r = rng(5);
    for _ in 0..1000 {
        let c = r.random_range(-50.0..50.0);
        let n = r.random_range(1..40);
        let cfg = SmoothingConfig::new(r.random_range(0.01..0.99)).unwrap();
        let got = smooth_last(&vec![c; n], &cfg).unwrap();
        if got != c {
            return Err(format!("constant {c} x{n} smoothed to {got}"));
        }
    }
    let half = SmoothingConfig::new(0.5).unwrap();
    let raw = SmoothingConfig {
        normalize: false,
        ..half
    };
    let norm_v = smooth_last(&[0.0, 0.0, 4.0], &half).unwrap();
    let raw_v = smooth_last(&[0.0, 0.0, 4.0], &raw).unwrap();
    if (norm_v - 16.0 / 7.0).abs() > 1e-12 || (raw_v - 4.0).abs() > 1e-12 {
        return Err(format!("worked examples gave {norm_v} and {raw_v}"));
    }
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let spread = r.random_range(0.01..1.0);
        let n = r.random_range(1..30);
        let center = if i % 2 == 0 { PI } else { r.random_range(-PI..PI) };
        let seq: Vec<f64> = (0..n)
            .map(|_| {
                let a = center + r.random_range(-spread..spread);
                (a + PI).rem_euclid(2.0 * PI) - PI
            })
            .collect();
        let cfg = SmoothingConfig::new(r.random_range(0.1..0.99)).unwrap();
        let got = smooth_heading(&seq, &cfg).unwrap();
        if !(got > -PI && got <= PI) {
            return Err(format!("heading {got} outside (-pi, pi]"));
        }
        worst = worst.max(wrapped_gap(got, oracle_circular_mean(&seq, cfg.lambda, center)));
    }
    if worst >= 1e-9 {
        return Err(format!("circular smoothing off by {worst:e} near the wrap"));
    }
    Ok(format!("fixpoint exact, worked examples exact, wrap error {worst:.1e}"))
}
