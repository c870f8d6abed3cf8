use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::AttentionConfig;

/// Which part of the encoded token set feeds the decoder MLP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Position-wise FFN over all tokens, then flatten.
    #[default]
    Flatten,
    /// Only the retrieved memory token.
    GlobalToken,
}

/// Structural variants used by the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    /// No global token; the memory query is the mean of the context tokens.
    NoGlobalToken,
    /// No short-window embedding or self-attention; the query is the raw
    /// global token and the decoder sees only the retrieved token.
    NoShortContext,
    /// No long-window memory; the latent is a projection of the encoded
    /// global token.
    NoMemory,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no_global_token" => Ok(Self::NoGlobalToken),
            "no_short_context" => Ok(Self::NoShortContext),
            "no_memory" => Ok(Self::NoMemory),
            _ => Err(Error::Unknown { kind: "model variant", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdtConfig {
    /// Plant DOF count; the model sees `d_v = 3n` channels.
    pub n: usize,
    pub t_s: usize,
    pub t_l: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_k: usize,
    pub d_ff: usize,
    /// Hidden width of the shared long-window MLP.
    pub mem_hidden: usize,
    /// Forecast horizon; the model outputs `k + 1` steps.
    pub k: usize,
    pub n_layers: usize,
    pub layer_norm: bool,
    pub readout: Readout,
    pub variant: Variant,
}

impl Default for FdtConfig {
    fn default() -> Self {
        Self::desk(5)
    }
}

impl FdtConfig {
    /// CPU-sized widths with the published window lengths and horizon.
    pub fn desk(n: usize) -> Self {
        Self {
            n,
            t_s: 5,
            t_l: 120,
            d_model: 64,
            n_heads: 4,
            d_k: 64,
            d_ff: 256,
            mem_hidden: 64,
            k: 6,
            n_layers: 2,
            layer_norm: false,
            readout: Readout::Flatten,
            variant: Variant::Full,
        }
    }

    /// Published widths.
    pub fn paper(n: usize) -> Self {
        Self { d_model: 512, n_heads: 8, d_k: 512, d_ff: 2048, mem_hidden: 512, ..Self::desk(n) }
    }

    /// Smallest configuration used for gradient checks.
    pub fn tiny(n: usize) -> Self {
        Self {
            n,
            t_s: 3,
            t_l: 10,
            d_model: 16,
            n_heads: 2,
            d_k: 16,
            d_ff: 32,
            mem_hidden: 16,
            k: 2,
            n_layers: 2,
            layer_norm: false,
            readout: Readout::Flatten,
            variant: Variant::Full,
        }
    }

    pub fn d_v(&self) -> usize {
        3 * self.n
    }

    pub fn horizon(&self) -> usize {
        self.k + 1
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig { d_model: self.d_model, n_heads: self.n_heads, d_k: self.d_k }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if !(self.t_s >= 1 && self.t_l > self.t_s) {
            return Err(Error::InvalidParameter(format!(
                "need t_l > t_s >= 1, got t_s = {}, t_l = {}",
                self.t_s, self.t_l
            )));
        }
        if self.d_ff == 0 || self.mem_hidden == 0 {
            return Err(Error::InvalidParameter("hidden widths must be positive".into()));
        }
        self.attention().validate()
    }
}
