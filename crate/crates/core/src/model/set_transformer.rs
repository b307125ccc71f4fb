use rand_chacha::ChaCha8Rng;

use super::{Forward, ModelConfig, ModelInput, STEP_FEATURES};
use crate::attention::{Linear, MultiHeadAttention, SetAttentionBlock, SetBlockConfig};
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Agent embedding, `b` set-attention blocks, `k` seed queries cross-attending
/// over the encoded agents, `s` self-attention blocks over the queries and a
/// separate head per query emitting `n` displacements plus a confidence
/// logit.
#[derive(Clone, Debug)]
pub struct SetTransformer {
    cfg: ModelConfig,
    embed: Linear,
    encoder: Vec<SetAttentionBlock>,
    seeds: ParamId,
    goal_query: Option<Linear>,
    cross: MultiHeadAttention,
    decoder: Vec<MultiHeadAttention>,
    heads: Vec<Linear>,
}

impl SetTransformer {
    pub(crate) fn input_dim(cfg: &ModelConfig) -> usize {
        (cfg.obs_len - 1) * STEP_FEATURES + 1
    }

    pub(crate) fn kv_dim(cfg: &ModelConfig) -> usize {
        if cfg.goals_as_queries {
            cfg.model_dim
        } else {
            cfg.model_dim + cfg.goal_width()
        }
    }

    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.model_dim;
        let block = SetBlockConfig {
            attention: cfg.attention(),
            hidden_dim: cfg.ff_hidden,
        };
        let embed = Linear::new(store, "st.embed", Self::input_dim(cfg), d, rng);
        let encoder = (0..cfg.b)
            .map(|i| SetAttentionBlock::new(store, &format!("st.enc{i}"), block, rng))
            .collect();
        let seeds = store.uniform("st.seeds", &[cfg.k, d], 3f64.sqrt(), rng);
        let goal_query = cfg
            .goals_as_queries
            .then(|| Linear::new(store, "st.goal_q", cfg.goal_embed_dim, d, rng));
        let cross = MultiHeadAttention::new(store, "st.cross", d, Self::kv_dim(cfg), cfg.attention(), rng);
        let decoder = (0..cfg.s)
            .map(|i| MultiHeadAttention::new_self(store, &format!("st.dec{i}"), cfg.attention(), rng))
            .collect();
        let heads = (0..cfg.k)
            .map(|i| Linear::new(store, &format!("st.head{i}"), d, 2 * cfg.pred_len + 1, rng))
            .collect();
        SetTransformer {
            cfg: *cfg,
            embed,
            encoder,
            seeds,
            goal_query,
            cross,
            decoder,
            heads,
        }
    }

    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &ModelInput,
        goal: Option<Var>,
    ) -> Result<Forward> {
        let (a, k, n) = (input.features.shape()[0], self.cfg.k, self.cfg.pred_len);
        let width = Self::input_dim(&self.cfg);
        let mut rows = Vec::with_capacity(a * width);
        for (i, chunk) in input.features.data().chunks(width - 1).enumerate() {
            rows.extend_from_slice(chunk);
            rows.push(if i == input.normalized.target { 1.0 } else { 0.0 });
        }
        let x = g.constant(Tensor::new(vec![a, width], rows)?);
        let mut h = self.embed.forward(g, store, x)?;
        for block in &self.encoder {
            h = block.forward(g, store, h, None)?;
        }

        let mut queries = g.param(store, self.seeds);
        let mut kv = h;
        if let Some(e) = goal {
            if let Some(proj) = &self.goal_query {
                let e = g.reshape(e, &[1, self.cfg.goal_embed_dim])?;
                let q = proj.forward(g, store, e)?;
                let q = g.reshape(q, &[self.cfg.model_dim])?;
                queries = g.add(queries, q)?;
            } else {
                let zeros = g.constant(Tensor::zeros(&[a, self.cfg.goal_embed_dim]));
                let tiled = g.add(zeros, e)?;
                kv = g.concat(&[h, tiled], 1)?;
            }
        }
        let mut q = self.cross.cross_attention(g, store, queries, kv, None)?;
        for block in &self.decoder {
            q = block.mhsa(g, store, q, None)?;
        }
        let mut rows = Vec::with_capacity(k);
        for (i, head) in self.heads.iter().enumerate() {
            let qi = g.slice(q, 0, i, i + 1)?;
            rows.push(head.forward(g, store, qi)?);
        }
        let out = if k == 1 { rows[0] } else { g.concat(&rows, 0)? };
        let disp = g.slice(out, 1, 0, 2 * n)?;
        let disp = g.reshape(disp, &[k, n, 2])?;
        let preds = g.cumsum(disp, 1)?;
        let logits = g.slice(out, 1, 2 * n, 2 * n + 1)?;
        let logits = g.reshape(logits, &[k])?;
        Ok(Forward { preds, logits })
    }
}
