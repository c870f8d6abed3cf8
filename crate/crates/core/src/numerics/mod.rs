//! Dense tensors, a reverse-mode tape, the layers the sequence model is built
//! from, Adam, and finite-difference gradient checking.

pub mod checkpoint;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, rel_err, GradCheckReport};
pub use layers::{
    cross_attention_single_query, linear, multi_head_self_attention, Activation,
    AttentionConfig, Linear, Mlp, SelfAttention,
};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tape::{softmax_row, Graph, Var};
pub use tensor::Tensor;
