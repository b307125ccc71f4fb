use super::{GoalEmbedding, LstmMhsa, ModelConfig, SetTransformer, Variant, STEP_FEATURES};
use crate::attention::{Linear, LstmCell, MultiHeadAttention, SetAttentionBlock, SetBlockConfig};

/// Analytic cost of one forward pass. One MAC is one multiply-accumulate in
/// a linear map, an attention score/value product or an LSTM gate; FLOPs are
/// counted as two per MAC.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopReport {
    pub params: usize,
    pub agents: usize,
    pub macs: u64,
    /// Score and value products of the encoder self-attention (quadratic in
    /// the agent count). Included in `macs`.
    pub attention_macs: u64,
    /// Per-agent (linear in the agent count) encoder MACs. Included in `macs`.
    pub pointwise_macs: u64,
}

impl FlopReport {
    pub fn gmacs(&self) -> f64 {
        self.macs as f64 * 1e-9
    }

    pub fn gflops(&self) -> f64 {
        2.0 * self.gmacs()
    }

    pub fn attention_gmacs(&self) -> f64 {
        self.attention_macs as f64 * 1e-9
    }

    pub fn params_millions(&self) -> f64 {
        self.params as f64 * 1e-6
    }
}

pub fn count_params(cfg: &ModelConfig) -> usize {
    let d = cfg.model_dim;
    let goal = if cfg.use_goal_features {
        GoalEmbedding::param_count(cfg)
    } else {
        0
    };
    let net = match cfg.variant {
        Variant::SetTransformer => {
            let block = SetBlockConfig {
                attention: cfg.attention(),
                hidden_dim: cfg.ff_hidden,
            };
            let goal_q = if cfg.goals_as_queries {
                Linear::param_count(cfg.goal_embed_dim, d)
            } else {
                0
            };
            Linear::param_count(SetTransformer::input_dim(cfg), d)
                + cfg.b * SetAttentionBlock::param_count(&block)
                + cfg.k * d
                + goal_q
                + MultiHeadAttention::param_count(d, SetTransformer::kv_dim(cfg), d)
                + cfg.s * MultiHeadAttention::param_count(d, d, d)
                + cfg.k * Linear::param_count(d, 2 * cfg.pred_len + 1)
        }
        Variant::LstmMhsa => {
            let z = LstmMhsa::context_dim(cfg);
            LstmCell::param_count(STEP_FEATURES, d)
                + cfg.b * MultiHeadAttention::param_count(d, d, d)
                + Linear::param_count(z, cfg.k * d)
                + LstmCell::param_count(2, d)
                + Linear::param_count(d, 2)
                + Linear::param_count(z, cfg.k)
        }
    };
    goal + net
}

fn linear_macs(rows: usize, d_in: usize, d_out: usize) -> u64 {
    (rows * d_in * d_out) as u64
}

/// Projections plus score/value products for `q` queries over `kv` keys.
fn attention_macs(q: usize, kv: usize, q_dim: usize, kv_dim: usize, d: usize) -> (u64, u64) {
    let proj = linear_macs(q, q_dim, d) + 2 * linear_macs(kv, kv_dim, d) + linear_macs(q, d, d);
    (proj, 2 * (q * kv * d) as u64)
}

/// Forward cost for a scene with `agents` agents and `r` goal points.
pub fn count_flops(cfg: &ModelConfig, agents: usize, r: usize) -> FlopReport {
    let (d, k, n) = (cfg.model_dim, cfg.k, cfg.pred_len);
    let a = agents;
    let mut macs = 0u64;
    let mut quad = 0u64;
    let mut pointwise = 0u64;
    if cfg.use_goal_features {
        macs += linear_macs(r, 2, cfg.goal_hidden) + linear_macs(r, cfg.goal_hidden, cfg.goal_embed_dim);
    }
    match cfg.variant {
        Variant::SetTransformer => {
            pointwise += linear_macs(a, SetTransformer::input_dim(cfg), d);
            for _ in 0..cfg.b {
                let (proj, prod) = attention_macs(a, a, d, d, d);
                pointwise += proj + linear_macs(a, d, cfg.ff_hidden) + linear_macs(a, cfg.ff_hidden, d);
                quad += prod;
            }
            if cfg.goals_as_queries {
                macs += linear_macs(1, cfg.goal_embed_dim, d);
            }
            let (proj, prod) = attention_macs(k, a, d, SetTransformer::kv_dim(cfg), d);
            macs += proj + prod;
            for _ in 0..cfg.s {
                let (proj, prod) = attention_macs(k, k, d, d, d);
                macs += proj + prod;
            }
            macs += linear_macs(k, d, 2 * n + 1);
        }
        Variant::LstmMhsa => {
            let steps = cfg.obs_len - 1;
            pointwise += steps as u64 * linear_macs(a, STEP_FEATURES + d, 4 * d);
            for _ in 0..cfg.b {
                let (proj, prod) = attention_macs(a, a, d, d, d);
                pointwise += proj;
                quad += prod;
            }
            let z = LstmMhsa::context_dim(cfg);
            macs += linear_macs(1, z, k * d) + linear_macs(1, z, k);
            macs += n as u64 * (linear_macs(k, 2 + d, 4 * d) + linear_macs(k, d, 2));
        }
    }
    FlopReport {
        params: count_params(cfg),
        agents,
        macs: macs + quad + pointwise,
        attention_macs: quad,
        pointwise_macs: pointwise,
    }
}
