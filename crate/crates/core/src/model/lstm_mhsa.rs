use rand_chacha::ChaCha8Rng;

use super::{Forward, ModelConfig, ModelInput, STEP_FEATURES};
use crate::attention::{Linear, LstmCell, MultiHeadAttention};
use crate::error::Result;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// LSTM encoder shared by all agents, `b` rounds of MHSA over the final
/// hidden states, and an LSTM decoder seeded from the target's encoding,
/// its social context and the goal embedding. With `k > 1` the seed is
/// projected to `k` initial states decoded in parallel.
#[derive(Clone, Debug)]
pub struct LstmMhsa {
    cfg: ModelConfig,
    encoder: LstmCell,
    social: Vec<MultiHeadAttention>,
    init: Linear,
    decoder: LstmCell,
    out: Linear,
    confidence: Linear,
}

impl LstmMhsa {
    pub(crate) fn context_dim(cfg: &ModelConfig) -> usize {
        2 * cfg.model_dim + cfg.goal_width()
    }

    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.model_dim;
        let z = Self::context_dim(cfg);
        LstmMhsa {
            cfg: *cfg,
            encoder: LstmCell::new(store, "lm.enc", STEP_FEATURES, d, rng),
            social: (0..cfg.b)
                .map(|i| MultiHeadAttention::new_self(store, &format!("lm.mhsa{i}"), cfg.attention(), rng))
                .collect(),
            init: Linear::new(store, "lm.init", z, cfg.k * d, rng),
            decoder: LstmCell::new(store, "lm.dec", 2, d, rng),
            out: Linear::new(store, "lm.out", d, 2, rng),
            confidence: Linear::new(store, "lm.conf", z, cfg.k, rng),
        }
    }

    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: &ModelInput,
        goal: Option<Var>,
    ) -> Result<Forward> {
        let (d, k, n) = (self.cfg.model_dim, self.cfg.k, self.cfg.pred_len);
        let shape = input.features.shape();
        let (a, steps) = (shape[0], shape[1]);
        let target = input.normalized.target;

        let mut h = g.constant(Tensor::zeros(&[a, d]));
        let mut c = g.constant(Tensor::zeros(&[a, d]));
        let data = input.features.data();
        for t in 0..steps {
            let mut x = Vec::with_capacity(a * STEP_FEATURES);
            for i in 0..a {
                let at = (i * steps + t) * STEP_FEATURES;
                x.extend_from_slice(&data[at..at + STEP_FEATURES]);
            }
            let x = g.constant(Tensor::new(vec![a, STEP_FEATURES], x)?);
            (h, c) = self.encoder.step(g, store, x, h, c)?;
        }

        let mut ctx = h;
        for round in &self.social {
            ctx = round.mhsa(g, store, ctx, None)?;
        }
        let h_t = g.slice(h, 0, target, target + 1)?;
        let ctx_t = g.slice(ctx, 0, target, target + 1)?;
        let mut parts = vec![h_t, ctx_t];
        if let Some(e) = goal {
            parts.push(g.reshape(e, &[1, self.cfg.goal_embed_dim])?);
        }
        let z = g.concat(&parts, 1)?;

        let h0 = self.init.forward(g, store, z)?;
        let h0 = g.tanh(h0);
        let mut h = g.reshape(h0, &[k, d])?;
        let mut c = g.constant(Tensor::zeros(&[k, d]));
        let mut x = g.constant(Tensor::zeros(&[k, 2]));
        let mut steps_out = Vec::with_capacity(n);
        for _ in 0..n {
            (h, c) = self.decoder.step(g, store, x, h, c)?;
            x = self.out.forward(g, store, h)?;
            steps_out.push(g.reshape(x, &[k, 1, 2])?);
        }
        let disp = g.concat(&steps_out, 1)?;
        let preds = g.cumsum(disp, 1)?;
        let logits = self.confidence.forward(g, store, z)?;
        let logits = g.reshape(logits, &[k])?;
        Ok(Forward { preds, logits })
    }
}
