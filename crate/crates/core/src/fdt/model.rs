use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FdtConfig, Readout, Variant};
use super::window::{HistoryWindow, NormStats};
use crate::error::{Error, Result};
use crate::numerics::{
    checkpoint, multi_head_self_attention, Activation, Graph, Linear, Mlp, ParamId, ParamStore,
    SelfAttention, Tensor, Var,
};

/// Parameter layout of the network. Holds ids only; values live in a
/// [`ParamStore`].
#[derive(Clone, Debug)]
pub struct FdtNet {
    cfg: FdtConfig,
    w_e: Option<Linear>,
    p: Option<ParamId>,
    global: Option<ParamId>,
    msa: Vec<SelfAttention>,
    mem_mlp: Option<Mlp>,
    w_q: Option<Linear>,
    w_k: Option<Linear>,
    w_v: Option<Linear>,
    latent_proj: Option<Linear>,
    up: Option<Linear>,
    ffn: Mlp,
    dec: Mlp,
}

/// Nodes produced by one batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BatchOut {
    /// `B x (k+1)n`, normalized residual units, step-major.
    pub pred: Var,
    /// `B x d_k`.
    pub latent: Var,
    /// Memory cross-attention node, when the variant has one.
    pub memory_att: Option<Var>,
}

impl FdtNet {
    pub fn new(cfg: &FdtConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, d_v) = (cfg.d_model, cfg.d_v());
        let has_ctx = cfg.variant != Variant::NoShortContext;
        let has_mem = cfg.variant != Variant::NoMemory;
        let has_global = cfg.variant != Variant::NoGlobalToken;
        let w_e = has_ctx.then(|| Linear::new(store, "embed.w_e", cfg.t_s, d, false, rng));
        let p = has_ctx.then(|| store.insert("embed.p", Tensor::randn(d_v, d, 0.1, rng)));
        let global = has_global.then(|| store.insert("global", Tensor::randn(1, d, 0.1, rng)));
        let msa = if has_ctx {
            (0..cfg.n_layers)
                .map(|l| SelfAttention::new(store, &format!("ctx.{l}"), cfg.attention(), rng))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let (mut mem_mlp, mut w_q, mut w_k, mut w_v, mut latent_proj) = (None, None, None, None, None);
        if has_mem {
            mem_mlp = Some(Mlp::new(store, "mem.mlp", &[cfg.t_l, cfg.mem_hidden, d], Activation::Gelu, rng)?);
            w_q = Some(Linear::new(store, "mem.w_q", d, cfg.d_k, false, rng));
            w_k = Some(Linear::new(store, "mem.w_k", d, cfg.d_k, false, rng));
            w_v = Some(Linear::new(store, "mem.w_v", d, cfg.d_k, false, rng));
        } else {
            latent_proj = Some(Linear::new(store, "latent_proj", d, cfg.d_k, true, rng));
        }
        let up = (cfg.d_k != d).then(|| Linear::new(store, "up", cfg.d_k, d, true, rng));
        let ffn = Mlp::new(store, "ffn", &[d, cfg.d_ff, d], Activation::Gelu, rng)?;
        let tokens = if has_ctx { d_v + 1 } else { 1 };
        let dec_in = match cfg.readout {
            Readout::Flatten => tokens * d,
            Readout::GlobalToken => d,
        };
        let dec = Mlp::new(store, "dec", &[dec_in, cfg.d_ff, cfg.horizon() * cfg.n], Activation::Gelu, rng)?;
        Ok(Self { cfg: cfg.clone(), w_e, p, global, msa, mem_mlp, w_q, w_k, w_v, latent_proj, up, ffn, dec })
    }

    pub fn config(&self) -> &FdtConfig {
        &self.cfg
    }

    pub fn decoder(&self) -> &Mlp {
        &self.dec
    }

    pub fn identity_embedding(&self) -> Option<ParamId> {
        self.p
    }

    pub fn short_embedding(&self) -> Option<&Linear> {
        self.w_e.as_ref()
    }

    /// `E_ctx = Z_s W_e^T + p`, `B*d_v x d_model`.
    pub fn embed_short(&self, g: &mut Graph, store: &ParamStore, zs: Var, batch: usize) -> Var {
        let w_e = self.w_e.as_ref().expect("variant has a short-window embedding");
        let e = w_e.forward(g, store, zs);
        let p = g.param(store, self.p.expect("identity embeddings"));
        let p = g.tile(p, batch);
        g.add(e, p)
    }

    /// Stacked self-attention with residual connections over the context tokens
    /// (plus the global token when present). Returns the encoded context
    /// tokens, the encoded global token and the attention nodes.
    pub fn encode_context(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        e_ctx: Var,
        batch: usize,
    ) -> (Var, Option<Var>, Vec<Var>) {
        let d_v = self.cfg.d_v();
        let mut x = e_ctx;
        if let Some(gid) = self.global {
            let gt = g.param(store, gid);
            let gt = g.tile(gt, batch);
            x = g.concat_groups(e_ctx, gt, batch);
        }
        let mut atts = Vec::with_capacity(self.msa.len());
        for blk in &self.msa {
            let (o, att) = multi_head_self_attention(g, store, blk, x, batch);
            x = g.add(x, o);
            if self.cfg.layer_norm {
                x = g.layer_norm(x);
            }
            atts.push(att);
        }
        if self.global.is_some() {
            let ctx = g.slice_groups(x, batch, 0, d_v);
            let glob = g.slice_groups(x, batch, d_v, 1);
            (ctx, Some(glob), atts)
        } else {
            (x, None, atts)
        }
    }

    /// Single-query cross-attention of `query` (`B x d_model`) over the
    /// per-channel long-window embeddings. Returns `g'` (`B x d_k`); the node
    /// also carries the attention weights.
    pub fn retrieve_memory(&self, g: &mut Graph, store: &ParamStore, zl: Var, query: Var, batch: usize) -> Var {
        let mlp = self.mem_mlp.as_ref().expect("variant has memory");
        let h = mlp.forward(g, store, zl);
        let k = self.w_k.as_ref().unwrap().forward(g, store, h);
        let v = self.w_v.as_ref().unwrap().forward(g, store, h);
        let q = self.w_q.as_ref().unwrap().forward(g, store, query);
        g.attention(q, k, v, batch, 1)
    }

    /// Position-wise FFN with residual over `[ctx; g']`, then the decoder MLP.
    pub fn decode(&self, g: &mut Graph, store: &ParamStore, ctx: Option<Var>, latent: Var, batch: usize) -> Var {
        let tok = match &self.up {
            Some(up) => up.forward(g, store, latent),
            None => latent,
        };
        let (mut x, tokens) = match ctx {
            Some(c) => (g.concat_groups(c, tok, batch), self.cfg.d_v() + 1),
            None => (tok, 1),
        };
        let f = self.ffn.forward(g, store, x);
        x = g.add(x, f);
        if self.cfg.layer_norm {
            x = g.layer_norm(x);
        }
        let flat = match self.cfg.readout {
            Readout::Flatten => g.reshape(x, batch, tokens * self.cfg.d_model),
            Readout::GlobalToken => g.slice_groups(x, batch, tokens - 1, 1),
        };
        self.dec.forward(g, store, flat)
    }

    /// Batched forward. `zs` is `B*d_v x t_s`, `zl` is `B*d_v x t_l`.
    pub fn forward_batch(&self, g: &mut Graph, store: &ParamStore, zs: Var, zl: Var, batch: usize) -> BatchOut {
        match self.cfg.variant {
            Variant::Full => {
                let e = self.embed_short(g, store, zs, batch);
                let (ctx, glob, _) = self.encode_context(g, store, e, batch);
                let lat = self.retrieve_memory(g, store, zl, glob.unwrap(), batch);
                let pred = self.decode(g, store, Some(ctx), lat, batch);
                BatchOut { pred, latent: lat, memory_att: Some(lat) }
            }
            Variant::NoGlobalToken => {
                let e = self.embed_short(g, store, zs, batch);
                let (ctx, _, _) = self.encode_context(g, store, e, batch);
                let q = g.mean_groups(ctx, batch);
                let lat = self.retrieve_memory(g, store, zl, q, batch);
                let pred = self.decode(g, store, Some(ctx), lat, batch);
                BatchOut { pred, latent: lat, memory_att: Some(lat) }
            }
            Variant::NoShortContext => {
                let q = g.param(store, self.global.unwrap());
                let q = g.tile(q, batch);
                let lat = self.retrieve_memory(g, store, zl, q, batch);
                let pred = self.decode(g, store, None, lat, batch);
                BatchOut { pred, latent: lat, memory_att: Some(lat) }
            }
            Variant::NoMemory => {
                let e = self.embed_short(g, store, zs, batch);
                let (ctx, glob, _) = self.encode_context(g, store, e, batch);
                let lat = self.latent_proj.as_ref().unwrap().forward(g, store, glob.unwrap());
                let pred = self.decode(g, store, Some(ctx), lat, batch);
                BatchOut { pred, latent: lat, memory_att: None }
            }
        }
    }
}

/// Multi-step forecast for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualForecast {
    /// Row `j` is the prediction of `r_{t+j}`, `j = 0..=k`, physical units.
    pub base: DMatrix<f64>,
    /// Latent `g'` handed to the adapter.
    pub latent: DVector<f64>,
    /// Memory attention over the `d_v` channels (empty without memory).
    pub alpha: Vec<f64>,
}

impl ResidualForecast {
    pub fn one_step(&self) -> DVector<f64> {
        self.base.row(0).transpose()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    config: FdtConfig,
    norm: NormStats,
}

const CHECKPOINT_FORMAT: &str = "resdyn-fdt";

/// Network, parameter values and frozen normalization statistics.
#[derive(Clone, Debug)]
pub struct FdtModel {
    pub net: FdtNet,
    pub store: ParamStore,
    pub norm: NormStats,
}

impl FdtModel {
    pub fn new(cfg: &FdtConfig, norm: NormStats, seed: u64) -> Result<Self> {
        if norm.n() != cfg.n {
            return Err(Error::Dimension(format!("normalization for n = {}, config n = {}", norm.n(), cfg.n)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = FdtNet::new(cfg, &mut store, &mut rng)?;
        Ok(Self { net, store, norm })
    }

    pub fn config(&self) -> &FdtConfig {
        self.net.config()
    }

    /// Forecasts for a batch of pre-normalized blocks, in physical units.
    pub fn forecast_blocks(&self, zs: Tensor, zl: Tensor, batch: usize) -> Result<Vec<ResidualForecast>> {
        let cfg = self.config();
        let mut g = Graph::inference();
        let (zs, zl) = (g.input(zs), g.input(zl));
        let out = self.net.forward_batch(&mut g, &self.store, zs, zl, batch);
        let pred = g.value(out.pred);
        if !pred.is_finite() {
            return Err(Error::NonFinite("forecast".into()));
        }
        let lat = g.value(out.latent);
        let alpha = out.memory_att.and_then(|a| g.attention_weights(a));
        let (n, h, d_v) = (cfg.n, cfg.horizon(), cfg.d_v());
        Ok((0..batch)
            .map(|b| ResidualForecast {
                base: DMatrix::from_fn(h, n, |j, i| self.norm.denorm_target(i, pred.get(b, j * n + i))),
                latent: DVector::from_row_slice(lat.row(b)),
                alpha: alpha.map(|a| a[b * d_v..(b + 1) * d_v].to_vec()).unwrap_or_default(),
            })
            .collect())
    }

    pub fn forward(&self, window: &HistoryWindow) -> Result<ResidualForecast> {
        let (zs, zl) = window.blocks(&self.norm, self.config().t_s)?;
        Ok(self.forecast_blocks(zs, zl, 1)?.remove(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config().clone(),
            norm: self.norm.clone(),
        };
        checkpoint::write(path, &serde_json::to_value(meta)?, &self.store.named_values())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params) = checkpoint::read(path)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format {:?}", meta.format)));
        }
        let mut model = Self::new(&meta.config, meta.norm, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors in file, model has {}",
                params.len(),
                model.store.len()
            )));
        }
        model.store.load_values(params.iter().map(|(n, t)| (n.as_str(), t.clone())))?;
        Ok(model)
    }
}
