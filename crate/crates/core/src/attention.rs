//! Attention and recurrence building blocks on top of [`crate::tensor`].
//!
//! Set-attention blocks deliberately carry no positional encoding, no layer
//! normalization and no residual path: a block is multi-head self-attention
//! followed by a pointwise two-layer feed-forward.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Additive logit applied to masked-out keys.
pub const MASKED_LOGIT: f64 = -1e9;

/// Affine map `x W + b` with `W: [d_in, d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Unit-gain weights drawn from uniform(-sqrt(3/d_in), sqrt(3/d_in)) and
    /// a zero bias.
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let s = (3.0 / d_in as f64).sqrt();
        let w = store.uniform(format!("{name}.w"), &[d_in, d_out], s, rng);
        let b = store.register(format!("{name}.b"), Tensor::zeros(&[d_out]));
        Linear { w, b, d_in, d_out }
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MhsaConfig {
    pub model_dim: usize,
    pub heads: usize,
}

impl MhsaConfig {
    pub fn new(model_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || model_dim == 0 || model_dim % heads != 0 {
            return Err(Error::invalid(
                "attention config",
                format!("model_dim {model_dim} not divisible by {heads} heads"),
            ));
        }
        Ok(MhsaConfig { model_dim, heads })
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SetBlockConfig {
    pub attention: MhsaConfig,
    pub hidden_dim: usize,
}

/// Output of an attention call together with each head's weight matrix.
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Scaled dot-product attention with `heads` heads and an output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub cfg: MhsaConfig,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    /// `query_dim`/`kv_dim` are the widths of the inputs; both are projected
    /// to `cfg.model_dim`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        kv_dim: usize,
        cfg: MhsaConfig,
        rng: &mut impl Rng,
    ) -> Self {
        let d = cfg.model_dim;
        MultiHeadAttention {
            cfg,
            query: Linear::new(store, &format!("{name}.q"), query_dim, d, rng),
            key: Linear::new(store, &format!("{name}.k"), kv_dim, d, rng),
            value: Linear::new(store, &format!("{name}.v"), kv_dim, d, rng),
            out: Linear::new(store, &format!("{name}.o"), d, d, rng),
        }
    }

    /// Self-attention over `model_dim`-wide rows. Key weights start as a copy
    /// of the query weights, so initial scores favour each row's own key and
    /// a stack of blocks does not start out as a row-averaging filter.
    pub fn new_self(store: &mut ParamStore, name: &str, cfg: MhsaConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.model_dim;
        let mha = Self::new(store, name, d, d, cfg, rng);
        let wq = store.value(mha.query.w).clone();
        *store.value_mut(mha.key.w) = wq;
        mha
    }

    pub fn param_count(query_dim: usize, kv_dim: usize, model_dim: usize) -> usize {
        Linear::param_count(query_dim, model_dim)
            + 2 * Linear::param_count(kv_dim, model_dim)
            + Linear::param_count(model_dim, model_dim)
    }

    /// Every row of `q_in` attends over the rows of `kv_in`. Keys whose
    /// `key_mask` entry is false receive [`MASKED_LOGIT`].
    pub fn attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q_in: Var,
        kv_in: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<Attended> {
        let (qs, ks) = (g.shape(q_in).to_vec(), g.shape(kv_in).to_vec());
        if qs.len() != 2 || ks.len() != 2 || qs[0] == 0 || ks[0] == 0 {
            return Err(Error::shape("attention", format!("q {qs:?}, kv {ks:?}")));
        }
        if qs[1] != self.query.d_in || ks[1] != self.key.d_in {
            return Err(Error::shape(
                "attention",
                format!("q {qs:?} / kv {ks:?} vs widths {} / {}", self.query.d_in, self.key.d_in),
            ));
        }
        let mask = match key_mask {
            Some(m) if m.len() != ks[0] => {
                return Err(Error::shape("attention", format!("mask of {} for {} keys", m.len(), ks[0])))
            }
            Some(m) => Some(g.constant(Tensor::vector(
                m.iter().map(|&keep| if keep { 0.0 } else { MASKED_LOGIT }).collect(),
            ))),
            None => None,
        };
        let q = self.query.forward(g, store, q_in)?;
        let k = self.key.forward(g, store, kv_in)?;
        let v = self.value.forward(g, store, kv_in)?;
        let hd = self.cfg.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut weights = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (lo, hi) = (h * hd, (h + 1) * hd);
            let qh = g.slice(q, 1, lo, hi)?;
            let kh = g.slice(k, 1, lo, hi)?;
            let vh = g.slice(v, 1, lo, hi)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, scale);
            if let Some(m) = mask {
                scores = g.add(scores, m)?;
            }
            let w = g.softmax(scores, 1)?;
            heads.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let merged = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        let output = self.out.forward(g, store, merged)?;
        Ok(Attended { output, weights })
    }

    /// Self-attention over the rows of `x`; permutation-equivariant in rows.
    pub fn mhsa(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        Ok(self.attend(g, store, x, x, mask)?.output)
    }

    /// Queries `q` attend over `kv`; invariant to the order of `kv` rows.
    pub fn cross_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        q: Var,
        kv: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        Ok(self.attend(g, store, q, kv, mask)?.output)
    }
}

/// Self-attention followed by `relu(x W1 + b1) W2 + b2`, row-wise.
#[derive(Clone, Debug)]
pub struct SetAttentionBlock {
    pub attention: MultiHeadAttention,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl SetAttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: SetBlockConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.attention.model_dim;
        SetAttentionBlock {
            attention: MultiHeadAttention::new_self(store, &format!("{name}.attn"), cfg.attention, rng),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, cfg.hidden_dim, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), cfg.hidden_dim, d, rng),
        }
    }

    pub fn param_count(cfg: &SetBlockConfig) -> usize {
        let d = cfg.attention.model_dim;
        MultiHeadAttention::param_count(d, d, d)
            + Linear::param_count(d, cfg.hidden_dim)
            + Linear::param_count(cfg.hidden_dim, d)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let a = self.attention.mhsa(g, store, x, mask)?;
        let h = self.ff1.forward(g, store, a)?;
        let h = g.relu(h);
        self.ff2.forward(g, store, h)
    }
}

/// Standard LSTM cell; gates are laid out `[input, forget, candidate, output]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmCell {
    /// Uniform(-1/sqrt(H), 1/sqrt(H)) init with the forget-gate bias at 1.
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (hidden_dim as f64).sqrt();
        let wx = store.uniform(format!("{name}.wx"), &[input_dim, 4 * hidden_dim], s, rng);
        let wh = store.uniform(format!("{name}.wh"), &[hidden_dim, 4 * hidden_dim], s, rng);
        let b = store.uniform(format!("{name}.b"), &[4 * hidden_dim], s, rng);
        for v in &mut store.value_mut(b).data_mut()[hidden_dim..2 * hidden_dim] {
            *v = 1.0;
        }
        LstmCell {
            input_dim,
            hidden_dim,
            wx,
            wh,
            b,
        }
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        4 * hidden_dim * (input_dim + hidden_dim + 1)
    }

    /// One step over a batch of rows: `x: [B, input]`, `h, c: [B, hidden]`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        let (xs, hs, cs) = (g.shape(x).to_vec(), g.shape(h).to_vec(), g.shape(c).to_vec());
        if xs.len() != 2 || xs[1] != self.input_dim || hs != [xs[0], hd] || cs != hs {
            return Err(Error::shape("lstm_step", format!("x {xs:?}, h {hs:?}, c {cs:?}")));
        }
        let wx = g.param(store, self.wx);
        let wh = g.param(store, self.wh);
        let b = g.param(store, self.b);
        let gx = g.matmul(x, wx)?;
        let gh = g.matmul(h, wh)?;
        let gates = g.add(gx, gh)?;
        let gates = g.add(gates, b)?;
        let i = g.slice(gates, 1, 0, hd)?;
        let f = g.slice(gates, 1, hd, 2 * hd)?;
        let cand = g.slice(gates, 1, 2 * hd, 3 * hd)?;
        let o = g.slice(gates, 1, 3 * hd, 4 * hd)?;
        let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
        let cand = g.tanh(cand);
        let fc = g.mul(f, c)?;
        let ic = g.mul(i, cand)?;
        let c_next = g.add(fc, ic)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}
