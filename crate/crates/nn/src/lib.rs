//! Small reverse-mode autodiff engine with the layers needed by the
//! cooperative planner: linear maps, layer norm, masked multi-head attention,
//! masked softmax, Adam and a binary checkpoint format.
//!
//! All arithmetic is `f64`. Values live in a [`ParameterStore`]; a [`Tape`]
//! records one forward pass and [`Tape::backward`] returns [`Gradients`].

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod layers;
pub mod optim;
mod params;
mod tape;
mod tensor;

pub use error::{NnError, Result};
pub use gradcheck::{grad_check, grad_check_where, GradCheckConfig, GradCheckReport};
pub use layers::{linear, multi_head_attention, Activation, AttentionBlock, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use optim::{clip_global_norm, Adam};
pub use params::{Gradients, ParamId, ParameterStore};
pub use tape::{KeySets, Tape, Var};
pub use tensor::Tensor;
