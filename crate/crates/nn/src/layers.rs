//! Parameterized building blocks recorded onto a [`Tape`].

use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParameterStore};
use crate::tape::{KeySets, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Softplus,
}

impl Activation {
    pub fn apply(self, t: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Silu => t.silu(x),
            Activation::Softplus => t.softplus(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParameterStore, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        let weight = store.init_uniform(format!("{name}.weight"), vec![inputs, outputs], inputs)?;
        let bias = store.init_uniform(format!("{name}.bias"), vec![outputs], inputs)?;
        Ok(Self { weight, bias, inputs, outputs })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let w = t.param(self.weight);
        let b = t.param(self.bias);
        linear(t, x, w, b)
    }
}

/// `x @ w + b` with `b` broadcast over rows.
pub fn linear(t: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = t.matmul(x, w)?;
    t.add_row(y, b)
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.init_constant(format!("{name}.gamma"), vec![width], 1.0)?,
            beta: store.init_constant(format!("{name}.beta"), vec![width], 0.0)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let g = t.param(self.gamma);
        let b = t.param(self.beta);
        t.layer_norm(x, g, b)
    }
}

/// Stack of linear layers with an activation between consecutive layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    pub fn new(store: &mut ParameterStore, name: &str, widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(NnError::ShapeMismatch(format!("mlp `{name}` needs at least two widths")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, t: &mut Tape, mut x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(t, x)?;
            if i < last {
                x = self.activation.apply(t, x);
            }
        }
        Ok(x)
    }
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParameterStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(NnError::ShapeMismatch(format!("{heads} heads do not divide width {width}")));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), width, width)?,
            key: Linear::new(store, &format!("{name}.k"), width, width)?,
            value: Linear::new(store, &format!("{name}.v"), width, width)?,
            output: Linear::new(store, &format!("{name}.o"), width, width)?,
            heads,
        })
    }

    /// Key and value projections of a memory, reusable across queries.
    pub fn project_memory(&self, t: &mut Tape, memory: Var) -> Result<(Var, Var)> {
        Ok((self.key.forward(t, memory)?, self.value.forward(t, memory)?))
    }

    pub fn attend(&self, t: &mut Tape, queries: Var, keys: Var, values: Var, sets: Arc<KeySets>) -> Result<Var> {
        let q = self.query.forward(t, queries)?;
        let mixed = t.attention(q, keys, values, sets, self.heads)?;
        self.output.forward(t, mixed)
    }

    pub fn forward(&self, t: &mut Tape, queries: Var, memory: Var, sets: Arc<KeySets>) -> Result<Var> {
        let (k, v) = self.project_memory(t, memory)?;
        self.attend(t, queries, k, v, sets)
    }
}

/// Attention sublayer with residual connection and post-normalization:
/// `LayerNorm(x + Attention(x, memory))`.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attention: MultiHeadAttention,
    pub norm: LayerNorm,
}

impl AttentionBlock {
    pub fn new(store: &mut ParameterStore, name: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), width)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var, memory: Var, sets: Arc<KeySets>) -> Result<Var> {
        let a = self.attention.forward(t, x, memory, sets)?;
        self.finish(t, x, a)
    }

    /// Same as [`forward`](Self::forward) with pre-computed memory projections.
    pub fn forward_projected(&self, t: &mut Tape, x: Var, keys: Var, values: Var, sets: Arc<KeySets>) -> Result<Var> {
        let a = self.attention.attend(t, x, keys, values, sets)?;
        self.finish(t, x, a)
    }

    fn finish(&self, t: &mut Tape, x: Var, a: Var) -> Result<Var> {
        let sum = t.add(x, a)?;
        self.norm.forward(t, sum)
    }
}

/// Multi-head attention over already-projected `q`, `k`, `v`. `mask`, when
/// given, is `nq x nk` row-major with `true` marking attendable keys.
pub fn multi_head_attention(
    t: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[bool]>,
    heads: usize,
) -> Result<Var> {
    let (nq, _) = t.dims(q);
    let (nk, _) = t.dims(k);
    let sets = match mask {
        Some(m) => KeySets::from_mask(nq, nk, m)?,
        None => KeySets::dense(nq, nk),
    };
    t.attention(q, k, v, Arc::new(sets), heads)
}
