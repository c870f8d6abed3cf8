//! Parameterised building blocks on top of the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `x W^T + b` for `W` of shape `out x in`; rows of `x` are samples.
pub fn linear(g: &mut Graph, w: Var, b: Option<Var>, x: Var) -> Var {
    let y = g.matmul_nt(x, w);
    match b {
        Some(b) => g.add_bias(y, b),
        None => y,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Gelu => g.gelu(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.insert(&format!("{name}.w"), Tensor::glorot(fan_out, fan_in, rng));
        let b = bias.then(|| store.insert(&format!("{name}.b"), Tensor::zeros(1, fan_out)));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        linear(g, w, b, x)
    }
}

/// Feed-forward stack: activation between layers, none after the last.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Dimension("mlp needs at least input and output width".into()));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h);
            if i + 1 < self.layers.len() {
                h = self.activation.apply(g, h);
            }
        }
        h
    }

    pub fn last(&self) -> &Linear {
        self.layers.last().expect("mlp has layers")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_k: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidParameter(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.d_k == 0 {
            return Err(Error::InvalidParameter("d_k must be positive".into()));
        }
        Ok(())
    }
}

/// Projections of one multi-head self-attention block.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub cfg: AttentionConfig,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: AttentionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        Ok(Self {
            cfg,
            wq: Linear::new(store, &format!("{name}.wq"), d, d, false, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d, d, false, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d, d, false, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d, d, false, rng),
        })
    }
}

/// Multi-head self-attention over `groups` independent token blocks stacked in `x`.
/// The residual connection is left to the caller. Returns the output and the
/// attention node (for inspecting weights).
pub fn multi_head_self_attention(
    g: &mut Graph,
    store: &ParamStore,
    block: &SelfAttention,
    x: Var,
    groups: usize,
) -> (Var, Var) {
    let q = block.wq.forward(g, store, x);
    let k = block.wk.forward(g, store, x);
    let v = block.wv.forward(g, store, x);
    let att = g.attention(q, k, v, groups, block.cfg.n_heads);
    (block.wo.forward(g, store, att), att)
}

/// One query per group attending over that group's keys.
/// `q` is `groups x d_k`, `k` and `v` are `groups*len x d_k`.
pub fn cross_attention_single_query(g: &mut Graph, q: Var, k: Var, v: Var, groups: usize) -> Var {
    g.attention(q, k, v, groups, 1)
}
