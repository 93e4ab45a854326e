//! Reverse-mode differentiation over a linear recording of 2-D operations.
//!
//! Every value on a tape is a row-major `rows x cols` matrix; vectors are a
//! single row and scalars are `1 x 1`. Parameters are read from the borrowed
//! [`ParameterStore`] rather than copied, and [`Tape::backward`] returns the
//! parameter gradients as a separate [`Gradients`] buffer.

use std::sync::Arc;

use crate::error::{NnError, Result};
use crate::params::{Gradients, ParamId, ParameterStore};
use crate::tensor::{dims2, Tensor};

const LN_EPS: f64 = 1e-5;
/// Additive bias applied to masked logits before the softmax.
pub const MASK_BIAS: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-query key lists for sparse attention, stored in CSR form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySets {
    num_keys: usize,
    offsets: Vec<usize>,
    keys: Vec<usize>,
}

impl KeySets {
    /// Every query attends to every key.
    pub fn dense(num_queries: usize, num_keys: usize) -> Self {
        let keys: Vec<usize> = (0..num_queries).flat_map(|_| 0..num_keys).collect();
        let offsets = (0..=num_queries).map(|q| q * num_keys).collect();
        Self { num_keys, offsets, keys }
    }

    /// Query `q` attends to key `k` iff `allowed[q * num_keys + k]`.
    pub fn from_mask(num_queries: usize, num_keys: usize, allowed: &[bool]) -> Result<Self> {
        if allowed.len() != num_queries * num_keys {
            return Err(NnError::ShapeMismatch(format!(
                "attention mask has {} entries, expected {}x{}",
                allowed.len(),
                num_queries,
                num_keys
            )));
        }
        let lists = (0..num_queries)
            .map(|q| (0..num_keys).filter(|&k| allowed[q * num_keys + k]).collect())
            .collect();
        Self::from_lists(num_keys, lists)
    }

    pub fn from_lists(num_keys: usize, lists: Vec<Vec<usize>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut keys = Vec::new();
        offsets.push(0);
        for list in lists {
            if let Some(&k) = list.iter().find(|&&k| k >= num_keys) {
                return Err(NnError::ShapeMismatch(format!("key {k} out of range {num_keys}")));
            }
            keys.extend(list);
            offsets.push(keys.len());
        }
        Ok(Self { num_keys, offsets, keys })
    }

    pub fn num_queries(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_keys(&self) -> usize {
        self.num_keys
    }

    pub fn keys(&self, query: usize) -> &[usize] {
        &self.keys[self.offsets[query]..self.offsets[query + 1]]
    }

    pub fn total(&self) -> usize {
        self.keys.len()
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<Vec<f64>>),
    Silu(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Min(Var, Var),
    Clamp(Var, f64, f64),
    LayerNorm { x: Var, gamma: Var, beta: Var, normed: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, keys: Arc<KeySets>, heads: usize, probs: Vec<f64> },
    GatherRows(Var, Arc<Vec<usize>>),
    ConcatCols(Var, Var),
    Reshape(Var),
    MeanRows(Var),
    SumAll(Var),
    Softmax(Var),
    LogSoftmax(Var, Option<Arc<Vec<bool>>>),
    OuterSum(Var, Var),
    Select(Var, usize),
    BceWithLogits(Var, Arc<Vec<f64>>),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

/// A recording of one forward computation.
pub struct Tape<'p> {
    params: &'p ParameterStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParameterStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || rows * cols == value.len());
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => inputs(other).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { rows, cols, value, needs_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(NnError::NoTape(v.0))
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.value(id).data(),
            _ => &node.value,
        }
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let node = &self.nodes[v.0];
        (node.rows, node.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::matrix(r, c, self.value(v).to_vec()).expect("tape values are finite and well-shaped")
    }

    // ---- leaves ----

    pub fn input(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "constant {rows}x{cols} with {} values",
                data.len()
            )));
        }
        Ok(self.push(rows, cols, data, Op::Leaf))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let (r, c) = dims2(self.params.value(id).shape());
        self.push(r, c, Vec::new(), Op::Param(id))
    }

    // ---- dense algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(NnError::ShapeMismatch(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), (k, 1), self.value(b), (n, 1), &mut out, (n, 1));
        Ok(self.push(m, n, out, Op::MatMul(a, b)))
    }

    /// `a[r, c] + b[1, c]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (r, c) = self.dims(a);
        if self.dims(b) != (1, c) {
            return Err(NnError::ShapeMismatch(format!("add_row {r}x{c} with {:?}", self.dims(b))));
        }
        let bias = self.value(b);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(r, c, out, Op::AddRow(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(usize, usize)> {
        self.check(a)?;
        self.check(b)?;
        if self.dims(a) != self.dims(b) {
            return Err(NnError::ShapeMismatch(format!(
                "{op}: {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        Ok(self.dims(a))
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.value(a).iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(r, c, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "sub")?;
        let out = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(r, c, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(r, c, out, Op::Mul(a, b)))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, "min")?;
        let out = self.zip_map(a, b, f64::min);
        Ok(self.push(r, c, out, Op::Min(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| x * factor);
        self.push(r, c, out, Op::Scale(a, factor))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, factors: Arc<Vec<f64>>) -> Result<Var> {
        self.check(a)?;
        let (r, c) = self.dims(a);
        if factors.len() != r * c {
            return Err(NnError::ShapeMismatch(format!("mul_const {r}x{c} with {}", factors.len())));
        }
        let out = self.value(a).iter().zip(factors.iter()).map(|(x, y)| x * y).collect();
        Ok(self.push(r, c, out, Op::MulConst(a, factors)))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| x * sigmoid(x));
        self.push(r, c, out, Op::Silu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.map(a, softplus);
        self.push(r, c, out, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.map(a, f64::exp);
        self.push(r, c, out, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.map(a, f64::ln);
        self.push(r, c, out, Op::Ln(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.map(a, f64::abs);
        self.push(r, c, out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| x * x);
        self.push(r, c, out, Op::Square(a))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.map(a, |x| x.clamp(lo, hi));
        self.push(r, c, out, Op::Clamp(a, lo, hi))
    }

    /// Row-wise layer normalization followed by the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.check(x)?;
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return Err(NnError::ShapeMismatch(format!("layer_norm width {c}")));
        }
        let mut normed = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        let (g, b) = (self.value(gamma), self.value(beta));
        for (row, xs) in self.value(x).chunks(c).enumerate() {
            let mean = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[row] = inv;
            for j in 0..c {
                let n = (xs[j] - mean) * inv;
                normed[row * c + j] = n;
                out[row * c + j] = n * g[j] + b[j];
            }
        }
        Ok(self.push(r, c, out, Op::LayerNorm { x, gamma, beta, normed, inv_std }))
    }

    /// Scaled dot-product attention with `heads` heads; query `i` attends
    /// exactly to `keys.keys(i)`. Keys outside a query's set receive weight 0.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, keys: Arc<KeySets>, heads: usize) -> Result<Var> {
        self.check(q)?;
        self.check(k)?;
        self.check(v)?;
        let (nq, d) = self.dims(q);
        let (nk, dk) = self.dims(k);
        if dk != d || self.dims(v) != (nk, d) {
            return Err(NnError::ShapeMismatch(format!(
                "attention q {nq}x{d}, k {nk}x{dk}, v {:?}",
                self.dims(v)
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NnError::ShapeMismatch(format!("{heads} heads do not divide width {d}")));
        }
        if keys.num_queries() != nq || keys.num_keys() != nk {
            return Err(NnError::ShapeMismatch(format!(
                "key sets for {}x{} used with {nq} queries and {nk} keys",
                keys.num_queries(),
                keys.num_keys()
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; keys.total() * heads];
        let mut out = vec![0.0; nq * d];
        let mut base = 0;
        for qi in 0..nq {
            let ks = keys.keys(qi);
            if ks.is_empty() {
                return Err(NnError::AllMasked(format!("attention query {qi}")));
            }
            for h in 0..heads {
                let qrow = &qv[qi * d + h * dh..qi * d + (h + 1) * dh];
                let p = &mut probs[base + h * ks.len()..base + (h + 1) * ks.len()];
                for (slot, &kj) in ks.iter().enumerate() {
                    let krow = &kv[kj * d + h * dh..kj * d + (h + 1) * dh];
                    p[slot] = dot(qrow, krow) * scale;
                }
                softmax_in_place(p);
                let orow = &mut out[qi * d + h * dh..qi * d + (h + 1) * dh];
                for (slot, &kj) in ks.iter().enumerate() {
                    let vrow = &vv[kj * d + h * dh..kj * d + (h + 1) * dh];
                    axpy(p[slot], vrow, orow);
                }
            }
            base += ks.len() * heads;
        }
        Ok(self.push(nq, d, out, Op::Attention { q, k, v, keys, heads, probs }))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Arc<Vec<usize>>) -> Result<Var> {
        self.check(x)?;
        let (r, c) = self.dims(x);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(NnError::ShapeMismatch(format!("gather row {bad} of {r}")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows.iter() {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        Ok(self.push(rows.len(), c, out, Op::GatherRows(x, rows)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (r, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if r != rb {
            return Err(NnError::ShapeMismatch(format!("concat_cols {r} vs {rb} rows")));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        Ok(self.push(r, ca + cb, out, Op::ConcatCols(a, b)))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        self.check(x)?;
        let (r, c) = self.dims(x);
        if r * c != rows * cols {
            return Err(NnError::ShapeMismatch(format!("reshape {r}x{c} to {rows}x{cols}")));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(rows, cols, out, Op::Reshape(x)))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.dims(x);
        let mut out = vec![0.0; c];
        for row in self.value(x).chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push(1, c, out, Op::MeanRows(x))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(1, 1, vec![s], Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Row-wise softmax. Masked logits get [`MASK_BIAS`] added and their
    /// probabilities are then set to exactly zero; the rest renormalize.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check(x)?;
        let (r, c) = self.dims(x);
        check_mask(mask, r * c)?;
        let mut out = self.value(x).to_vec();
        for (row, chunk) in out.chunks_mut(c).enumerate() {
            let allowed = mask.map(|m| &m[row * c..(row + 1) * c]);
            masked_softmax_row(chunk, allowed, row)?;
        }
        Ok(self.push(r, c, out, Op::Softmax(x)))
    }

    /// Row-wise log-softmax restricted to unmasked entries; masked outputs are 0
    /// and carry no gradient.
    pub fn log_softmax(&mut self, x: Var, mask: Option<Arc<Vec<bool>>>) -> Result<Var> {
        self.check(x)?;
        let (r, c) = self.dims(x);
        check_mask(mask.as_deref().map(Vec::as_slice), r * c)?;
        let mut out = self.value(x).to_vec();
        for (row, chunk) in out.chunks_mut(c).enumerate() {
            let allowed = |j: usize| mask.as_ref().is_none_or(|m| m[row * c + j]);
            let max = (0..c)
                .filter(|&j| allowed(j))
                .map(|j| chunk[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(NnError::AllMasked(format!("log_softmax row {row}")));
            }
            let lse = max + (0..c).filter(|&j| allowed(j)).map(|j| (chunk[j] - max).exp()).sum::<f64>().ln();
            for (j, v) in chunk.iter_mut().enumerate() {
                *v = if allowed(j) { *v - lse } else { 0.0 };
            }
        }
        Ok(self.push(r, c, out, Op::LogSoftmax(x, mask)))
    }

    /// `out[i * m + j] = a[i] + b[j]` for row vectors `a[1, n]`, `b[1, m]`.
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ra, n) = self.dims(a);
        let (rb, m) = self.dims(b);
        if ra != 1 || rb != 1 {
            return Err(NnError::ShapeMismatch("outer_sum expects row vectors".into()));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.iter().flat_map(|x| vb.iter().map(move |y| x + y)).collect();
        Ok(self.push(1, n * m, out, Op::OuterSum(a, b)))
    }

    /// Selects one entry (row-major flat index) as a scalar.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        self.check(x)?;
        let len = self.value(x).len();
        if index >= len {
            return Err(NnError::ShapeMismatch(format!("select {index} of {len}")));
        }
        let v = self.value(x)[index];
        Ok(self.push(1, 1, vec![v], Op::Select(x, index)))
    }

    /// Elementwise binary cross-entropy of logits against targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Arc<Vec<f64>>) -> Result<Var> {
        self.check(logits)?;
        let (r, c) = self.dims(logits);
        if targets.len() != r * c {
            return Err(NnError::ShapeMismatch(format!("bce {r}x{c} with {} targets", targets.len())));
        }
        let out = self
            .value(logits)
            .iter()
            .zip(targets.iter())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .collect();
        Ok(self.push(r, c, out, Op::BceWithLogits(logits, targets)))
    }

    /// Reverse pass from a scalar `loss`, returning gradients for every
    /// parameter reachable from it (others stay zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.dims(loss) != (1, 1) {
            return Err(NnError::ShapeMismatch(format!("loss must be scalar, got {:?}", self.dims(loss))));
        }
        let mut param_grads = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads, &mut param_grads);
        }
        Ok(param_grads)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>], pg: &mut Gradients) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                for (a, b) in pg.get_mut(*id).iter_mut().zip(g) {
                    *a += b;
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.wants(*a) {
                    let da = slot(grads, *a, m * k);
                    gemm(m, n, k, g, (n, 1), self.value(*b), (1, n), da, (k, 1));
                }
                if self.wants(*b) {
                    let av = self.value(*a);
                    let db = slot(grads, *b, k * n);
                    gemm(k, m, n, av, (1, k), g, (n, 1), db, (n, 1));
                }
            }
            Op::AddRow(a, b) => {
                if self.wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, cols);
                    for row in g.chunks(cols) {
                        add_into(db, row);
                    }
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.wants(*b) {
                    add_into(slot(grads, *b, g.len()), g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.wants(*b) {
                    for (d, x) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                        *d -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b).to_vec();
                    for ((d, x), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(&bv) {
                        *d += x * y;
                    }
                }
                if self.wants(*b) {
                    let av = self.value(*a).to_vec();
                    for ((d, x), y) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(&av) {
                        *d += x * y;
                    }
                }
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.value(*a).to_vec(), self.value(*b).to_vec());
                if self.wants(*a) {
                    let da = slot(grads, *a, g.len());
                    for i in 0..g.len() {
                        if av[i] <= bv[i] {
                            da[i] += g[i];
                        }
                    }
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, g.len());
                    for i in 0..g.len() {
                        if av[i] > bv[i] {
                            db[i] += g[i];
                        }
                    }
                }
            }
            Op::Scale(a, f) => {
                for (d, x) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                    *d += f * x;
                }
            }
            Op::MulConst(a, factors) => {
                for ((d, x), f) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(factors.iter()) {
                    *d += f * x;
                }
            }
            Op::Silu(a) => self.unary(*a, g, grads, |x, _| {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }),
            Op::Softplus(a) => self.unary(*a, g, grads, |x, _| sigmoid(x)),
            Op::Exp(a) => {
                let y = node.value.clone();
                for ((d, x), yv) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(&y) {
                    *d += x * yv;
                }
            }
            Op::Ln(a) => self.unary(*a, g, grads, |x, _| 1.0 / x),
            Op::Abs(a) => self.unary(*a, g, grads, |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
            Op::Square(a) => self.unary(*a, g, grads, |x, _| 2.0 * x),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.unary(*a, g, grads, move |x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 })
            }
            Op::LayerNorm { x, gamma, beta, normed, inv_std } => {
                let gv = self.value(*gamma).to_vec();
                if self.wants(*gamma) {
                    let dg = slot(grads, *gamma, cols);
                    for (grow, nrow) in g.chunks(cols).zip(normed.chunks(cols)) {
                        for j in 0..cols {
                            dg[j] += grow[j] * nrow[j];
                        }
                    }
                }
                if self.wants(*beta) {
                    let db = slot(grads, *beta, cols);
                    for grow in g.chunks(cols) {
                        add_into(db, grow);
                    }
                }
                if self.wants(*x) {
                    let dx = slot(grads, *x, rows * cols);
                    let c = cols as f64;
                    for r in 0..rows {
                        let grow = &g[r * cols..(r + 1) * cols];
                        let nrow = &normed[r * cols..(r + 1) * cols];
                        let mut sum_dn = 0.0;
                        let mut sum_dn_n = 0.0;
                        for j in 0..cols {
                            let dn = grow[j] * gv[j];
                            sum_dn += dn;
                            sum_dn_n += dn * nrow[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..cols {
                            let dn = grow[j] * gv[j];
                            dx[r * cols + j] += inv / c * (c * dn - sum_dn - nrow[j] * sum_dn_n);
                        }
                    }
                }
            }
            Op::Attention { q, k, v, keys, heads, probs } => {
                self.attention_backward(g, *q, *k, *v, keys, *heads, probs, grads);
            }
            Op::GatherRows(x, idx) => {
                let (r, c) = self.dims(*x);
                let dx = slot(grads, *x, r * c);
                for (out_row, &src) in idx.iter().enumerate() {
                    add_into(&mut dx[src * c..(src + 1) * c], &g[out_row * c..(out_row + 1) * c]);
                }
            }
            Op::ConcatCols(a, b) => {
                let (_, ca) = self.dims(*a);
                let (_, cb) = self.dims(*b);
                if self.wants(*a) {
                    let da = slot(grads, *a, rows * ca);
                    for r in 0..rows {
                        add_into(&mut da[r * ca..(r + 1) * ca], &g[r * cols..r * cols + ca]);
                    }
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, rows * cb);
                    for r in 0..rows {
                        add_into(&mut db[r * cb..(r + 1) * cb], &g[r * cols + ca..(r + 1) * cols]);
                    }
                }
            }
            Op::Reshape(x) => add_into(slot(grads, *x, g.len()), g),
            Op::MeanRows(x) => {
                let (r, c) = self.dims(*x);
                let dx = slot(grads, *x, r * c);
                for row in dx.chunks_mut(c) {
                    for (d, v) in row.iter_mut().zip(g) {
                        *d += v / r as f64;
                    }
                }
            }
            Op::SumAll(x) => {
                let n = self.value(*x).len();
                slot(grads, *x, n).iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let dx = slot(grads, *x, rows * cols);
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let inner = dot(yr, gr);
                    for j in 0..cols {
                        dx[r * cols + j] += yr[j] * (gr[j] - inner);
                    }
                }
            }
            Op::LogSoftmax(x, mask) => {
                let y = &node.value;
                let dx = slot(grads, *x, rows * cols);
                for r in 0..rows {
                    let allowed = |j: usize| mask.as_ref().is_none_or(|m| m[r * cols + j]);
                    let total: f64 = (0..cols).filter(|&j| allowed(j)).map(|j| g[r * cols + j]).sum();
                    for j in (0..cols).filter(|&j| allowed(j)) {
                        let p = y[r * cols + j].exp();
                        dx[r * cols + j] += g[r * cols + j] - p * total;
                    }
                }
            }
            Op::OuterSum(a, b) => {
                let (_, n) = self.dims(*a);
                let (_, m) = self.dims(*b);
                if self.wants(*a) {
                    let da = slot(grads, *a, n);
                    for i in 0..n {
                        da[i] += g[i * m..(i + 1) * m].iter().sum::<f64>();
                    }
                }
                if self.wants(*b) {
                    let db = slot(grads, *b, m);
                    for i in 0..n {
                        add_into(db, &g[i * m..(i + 1) * m]);
                    }
                }
            }
            Op::Select(x, index) => {
                let n = self.value(*x).len();
                slot(grads, *x, n)[*index] += g[0];
            }
            Op::BceWithLogits(x, targets) => {
                let xv = self.value(*x).to_vec();
                for (i, d) in slot(grads, *x, g.len()).iter_mut().enumerate() {
                    *d += g[i] * (sigmoid(xv[i]) - targets[i]);
                }
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&self, a: Var, g: &[f64], grads: &mut [Option<Vec<f64>>], deriv: impl Fn(f64, usize) -> f64) {
        let xv = self.value(a).to_vec();
        for (i, (d, x)) in slot(grads, a, g.len()).iter_mut().zip(g).enumerate() {
            *d += x * deriv(xv[i], i);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        keys: &KeySets,
        heads: usize,
        probs: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (nq, d) = self.dims(q);
        let (nk, _) = self.dims(k);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![0.0; nq * d];
        let mut dk = vec![0.0; nk * d];
        let mut dv = vec![0.0; nk * d];
        let mut dp = Vec::new();
        let mut base = 0;
        for qi in 0..nq {
            let ks = keys.keys(qi);
            for h in 0..heads {
                let p = &probs[base + h * ks.len()..base + (h + 1) * ks.len()];
                let grow = &g[qi * d + h * dh..qi * d + (h + 1) * dh];
                dp.clear();
                for (slot_idx, &kj) in ks.iter().enumerate() {
                    let vrow = &vv[kj * d + h * dh..kj * d + (h + 1) * dh];
                    dp.push(dot(grow, vrow));
                    axpy(p[slot_idx], grow, &mut dv[kj * d + h * dh..kj * d + (h + 1) * dh]);
                }
                let inner = dot(p, &dp);
                let qrow = &qv[qi * d + h * dh..qi * d + (h + 1) * dh];
                for (slot_idx, &kj) in ks.iter().enumerate() {
                    let ds = p[slot_idx] * (dp[slot_idx] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let krow = &kv[kj * d + h * dh..kj * d + (h + 1) * dh];
                    axpy(ds, krow, &mut dq[qi * d + h * dh..qi * d + (h + 1) * dh]);
                    axpy(ds, qrow, &mut dk[kj * d + h * dh..kj * d + (h + 1) * dh]);
                }
            }
            base += ks.len() * heads;
        }
        // q, k and v may alias (self-attention on the same var), so add sequentially.
        if self.wants(q) {
            add_into(slot(grads, q, nq * d), &dq);
        }
        if self.wants(k) {
            add_into(slot(grads, k, nk * d), &dk);
        }
        if self.wants(v) {
            add_into(slot(grads, v, nk * d), &dv);
        }
    }
}

fn inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param(_) => vec![],
        Op::MatMul(a, b)
        | Op::AddRow(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Min(a, b)
        | Op::ConcatCols(a, b)
        | Op::OuterSum(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::MulConst(a, _)
        | Op::Silu(a)
        | Op::Softplus(a)
        | Op::Exp(a)
        | Op::Ln(a)
        | Op::Abs(a)
        | Op::Square(a)
        | Op::Clamp(a, _, _)
        | Op::GatherRows(a, _)
        | Op::Reshape(a)
        | Op::MeanRows(a)
        | Op::SumAll(a)
        | Op::Softmax(a)
        | Op::LogSoftmax(a, _)
        | Op::Select(a, _)
        | Op::BceWithLogits(a, _) => vec![*a],
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.iter_mut().for_each(|x| *x /= sum);
}

fn check_mask(mask: Option<&[bool]>, len: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != len => Err(NnError::ShapeMismatch(format!("mask of {} for {len} entries", m.len()))),
        _ => Ok(()),
    }
}

/// Softmax of one row with the additive mask bias and exact zeroing.
pub(crate) fn masked_softmax_row(row: &mut [f64], allowed: Option<&[bool]>, index: usize) -> Result<()> {
    if let Some(allowed) = allowed {
        if !allowed.iter().any(|&a| a) {
            return Err(NnError::AllMasked(format!("softmax row {index}")));
        }
        for (x, &a) in row.iter_mut().zip(allowed) {
            if !a {
                *x += MASK_BIAS;
            }
        }
    }
    softmax_in_place(row);
    if let Some(allowed) = allowed {
        let mut sum = 0.0;
        for (x, &a) in row.iter_mut().zip(allowed) {
            if a {
                sum += *x;
            } else {
                *x = 0.0;
            }
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(())
}

/// `c += a * b` with explicit (row, col) strides for each operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
    sc: (usize, usize),
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * sa.0 + (k - 1) * sa.1);
    assert!(b.len() > (k - 1) * sb.0 + (n - 1) * sb.1);
    assert!(c.len() > (m - 1) * sc.0 + (n - 1) * sc.1);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            sc.0 as isize,
            sc.1 as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        ParameterStore::new(0)
    }

    #[test]
    fn matmul_matches_hand_product() {
        let s = store();
        let mut t = Tape::new(&s);
        let a = t.constant(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = t.constant(3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[58., 64., 139., 154.]);
    }

    #[test]
    fn softmax_uniform_over_equal_logits() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.constant(1, 3, vec![0.0; 3]).unwrap();
        let y = t.softmax(x, None).unwrap();
        for p in t.value(y) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_single_unmasked_gets_all_mass() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.constant(1, 4, vec![3.0, -1.0, 7.0, 0.5]).unwrap();
        let y = t.softmax(x, Some(&[false, true, false, false])).unwrap();
        assert_eq!(t.value(y), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_all_masked_errors() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.constant(1, 2, vec![0.0; 2]).unwrap();
        assert!(matches!(t.softmax(x, Some(&[false, false])), Err(NnError::AllMasked(_))));
    }

    #[test]
    fn attention_single_key_returns_value_row() {
        let s = store();
        let mut t = Tape::new(&s);
        let q = t.constant(1, 4, vec![0.3, -0.2, 1.0, 0.5]).unwrap();
        let k = t.constant(1, 4, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = t.constant(1, 4, vec![2.0, -3.0, 4.0, 0.25]).unwrap();
        let out = t.attention(q, k, v, Arc::new(KeySets::dense(1, 1)), 2).unwrap();
        assert_eq!(t.value(out), &[2.0, -3.0, 4.0, 0.25]);
    }

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut s = store();
        let w = s.init_uniform("w", vec![3, 2], 3).unwrap();
        let mut t = Tape::new(&s);
        let wv = t.param(w);
        let loss = t.sum_all(wv);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w), &[1.0; 6]);
    }

    #[test]
    fn zero_times_function_gives_zero_gradient() {
        let mut s = store();
        let w = s.init_uniform("w", vec![4], 4).unwrap();
        let mut t = Tape::new(&s);
        let wv = t.param(w);
        let f = t.silu(wv);
        let f = t.square(f);
        let f = t.sum_all(f);
        let loss = t.scale(f, 0.0);
        let g = t.backward(loss).unwrap();
        assert!(g.get(w).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_rejects_foreign_var() {
        let s = store();
        let t = Tape::new(&s);
        assert!(matches!(t.backward(Var(3)), Err(NnError::NoTape(3))));
    }

    #[test]
    fn log_softmax_masked_entries_are_zero() {
        let s = store();
        let mut t = Tape::new(&s);
        let x = t.constant(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let y = t.log_softmax(x, Some(Arc::new(vec![true, false, true]))).unwrap();
        let v = t.value(y);
        assert_eq!(v[1], 0.0);
        assert!((v[0].exp() + v[2].exp() - 1.0).abs() < 1e-12);
    }
}
