//! Attention allocator shared by both arms: node encoder, row/column coop
//! encoder, per-arm action generator and the masked joint probability map.

use std::path::Path;
use std::sync::Arc;

use coop_nn::{
    checkpoint, grad_check, grad_check_where, Activation, AttentionBlock, GradCheckConfig, GradCheckReport, KeySets, LayerNorm,
    Linear, Mlp, MultiHeadAttention, ParameterStore, Tape, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::CostMatrix;
use crate::error::{CoopError, Result};
use crate::graph::{observation_features, Arm, JointAction, TaskStateGraph, NODE_FEATURES};
use crate::predictor::sidecar_paths;
use crate::solvers::StepPolicy;

pub const COOP_FEATURES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoopEncoderKind {
    /// Each cell attends to the union of its row and column.
    RowColumn,
    /// Every cell attends to every other cell.
    Dense,
    /// Per-cell MLP, no attention.
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Self-attention then row-restricted cross-attention, per layer.
    Fused,
    /// Self-attention only, on nodes augmented with their pooled coop row.
    SelfAttention,
    /// Row-restricted cross-attention only.
    CrossAttention,
    /// MLP on nodes augmented with their pooled coop row.
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub width: usize,
    pub heads: usize,
    pub node_layers: usize,
    pub coop_layers: usize,
    pub generator_layers: usize,
    pub coop_encoder: CoopEncoderKind,
    pub generator: GeneratorKind,
    /// Multiplies cost channels before embedding.
    pub cost_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            width: 128,
            heads: 8,
            node_layers: 2,
            coop_layers: 2,
            generator_layers: 2,
            coop_encoder: CoopEncoderKind::RowColumn,
            generator: GeneratorKind::Fused,
            cost_scale: 0.5,
        }
    }
}

/// What the network sees at one state, in arm 1's orientation.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyObservation {
    pub n: usize,
    pub nodes: [Vec<f64>; 2],
    /// `(n+1)^2 x 3` cells `[c_mv, c_tf, feasible]`, rows indexed by arm 1's action.
    pub coop: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PolicyObservation {
    /// `allowed` narrows the matrix mask (for example with step-back bans).
    pub fn new(graph: &TaskStateGraph, matrix: &CostMatrix, allowed: &[bool]) -> Result<Self> {
        let n = graph.n();
        if matrix.n() != n || allowed.len() != matrix.cells().len() {
            return Err(CoopError::InvalidConfig("observation shapes disagree".into()));
        }
        let mut coop = Vec::with_capacity(allowed.len() * COOP_FEATURES);
        let mut mask = Vec::with_capacity(allowed.len());
        for (c, &ok) in matrix.cells().iter().zip(allowed) {
            let on = c.feasible && ok;
            mask.push(on);
            if on {
                coop.extend([c.c_mv, c.c_tf, 1.0]);
            } else {
                coop.extend([0.0; COOP_FEATURES]);
            }
        }
        Ok(Self {
            n,
            nodes: [observation_features(graph, Arm::Arm1).features, observation_features(graph, Arm::Arm2).features],
            coop,
            mask,
        })
    }

    pub fn side(&self) -> usize {
        self.n + 1
    }

    /// Coop block aligned to `arm`: arm 2 sees the transpose.
    pub fn coop_block(&self, arm: Arm) -> Vec<f64> {
        match arm {
            Arm::Arm1 => self.coop.clone(),
            Arm::Arm2 => {
                let m = self.side();
                let mut out = Vec::with_capacity(self.coop.len());
                for i in 0..m {
                    for j in 0..m {
                        let c = j * m + i;
                        out.extend_from_slice(&self.coop[c * COOP_FEATURES..(c + 1) * COOP_FEATURES]);
                    }
                }
                out
            }
        }
    }

    /// Whether `arm` has any feasible partner for each of its actions.
    pub fn agent_mask(&self, arm: Arm) -> Vec<bool> {
        let m = self.side();
        (0..m)
            .map(|a| {
                (0..m).any(|b| match arm {
                    Arm::Arm1 => self.mask[a * m + b],
                    Arm::Arm2 => self.mask[b * m + a],
                })
            })
            .collect()
    }

    /// The same state seen with the arms' roles exchanged.
    pub fn swapped(&self) -> Self {
        let m = self.side();
        let mut mask = vec![false; m * m];
        for i in 0..m {
            for j in 0..m {
                mask[j * m + i] = self.mask[i * m + j];
            }
        }
        let [a, b] = &self.nodes;
        // Depot rows swap so that each arm's own depot stays at row n.
        let mut na = b.clone();
        let mut nb = a.clone();
        for rows in [&mut na, &mut nb] {
            let n = self.n;
            let (head, tail) = rows.split_at_mut((n + 1) * NODE_FEATURES);
            head[n * NODE_FEATURES..].swap_with_slice(&mut tail[..NODE_FEATURES]);
        }
        Self { n: self.n, nodes: [na, nb], coop: self.coop_block(Arm::Arm2), mask }
    }
}

/// Differentiable outputs for one observation.
pub struct PolicyOutput {
    /// Row vector of length `(n+1)^2`; masked cells hold 0.
    pub log_map: Var,
    pub log_probs: [Var; 2],
    pub value: Var,
}

#[derive(Clone, Debug)]
struct GeneratorLayer {
    self_attn: Option<AttentionBlock>,
    cross_attn: Option<AttentionBlock>,
}

#[derive(Clone, Debug)]
pub struct Policy {
    store: ParameterStore,
    pub config: PolicyConfig,
    node_embed: Linear,
    node_blocks: Vec<AttentionBlock>,
    coop_embed: Linear,
    coop_blocks: Vec<AttentionBlock>,
    coop_mlp: Option<Mlp>,
    row_pool: Option<Linear>,
    generator: Vec<GeneratorLayer>,
    generator_mlp: Option<Mlp>,
    masked_attn: Option<AttentionBlock>,
    head: Mlp,
    value_head: Mlp,
}

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        let d = config.width;
        let h = config.heads;
        let mut s = ParameterStore::new(seed);
        let node_embed = Linear::new(&mut s, "node.embed", NODE_FEATURES, d)?;
        let node_blocks = (0..config.node_layers)
            .map(|l| AttentionBlock::new(&mut s, &format!("node.sa{l}"), d, h))
            .collect::<coop_nn::Result<_>>()?;
        let coop_embed = Linear::new(&mut s, "coop.embed", COOP_FEATURES, d)?;
        let (coop_blocks, coop_mlp) = match config.coop_encoder {
            CoopEncoderKind::Mlp => {
                let widths = vec![d; config.coop_layers + 1];
                (Vec::new(), Some(Mlp::new(&mut s, "coop.mlp", &widths, Activation::Silu)?))
            }
            _ => (
                (0..config.coop_layers)
                    .map(|l| AttentionBlock::new(&mut s, &format!("coop.sa{l}"), d, h))
                    .collect::<coop_nn::Result<_>>()?,
                None,
            ),
        };
        let pooled = matches!(config.generator, GeneratorKind::SelfAttention | GeneratorKind::Mlp);
        let row_pool = if pooled { Some(Linear::new(&mut s, "gen.pool", 2 * d, d)?) } else { None };
        let (sa, ca) = match config.generator {
            GeneratorKind::Fused => (true, true),
            GeneratorKind::SelfAttention => (true, false),
            GeneratorKind::CrossAttention => (false, true),
            GeneratorKind::Mlp => (false, false),
        };
        let mut generator = Vec::new();
        if sa || ca {
            for l in 0..config.generator_layers {
                generator.push(GeneratorLayer {
                    self_attn: if sa { Some(AttentionBlock::new(&mut s, &format!("gen.sa{l}"), d, h)?) } else { None },
                    cross_attn: if ca { Some(AttentionBlock::new(&mut s, &format!("gen.ca{l}"), d, h)?) } else { None },
                });
            }
        }
        let generator_mlp = if config.generator == GeneratorKind::Mlp {
            Some(Mlp::new(&mut s, "gen.mlp", &vec![d; config.generator_layers + 1], Activation::Silu)?)
        } else {
            None
        };
        let masked_attn =
            if config.generator == GeneratorKind::Mlp { None } else { Some(AttentionBlock::new(&mut s, "gen.masked", d, h)?) };
        let head = Mlp::new(&mut s, "gen.head", &[d, d, 1], Activation::Silu)?;
        let value_head = Mlp::new(&mut s, "value", &[d, d, 1], Activation::Silu)?;
        Ok(Self {
            store: s,
            config,
            node_embed,
            node_blocks,
            coop_embed,
            coop_blocks,
            coop_mlp,
            row_pool,
            generator,
            generator_mlp,
            masked_attn,
            head,
            value_head,
        })
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Embeds all `n+2` nodes for `arm`, self-attends, then drops the other
    /// arm's depot; row `n` of the result is the arm's own depot.
    pub fn encode_nodes(&self, t: &mut Tape, obs: &PolicyObservation, arm: Arm) -> Result<Var> {
        let n = obs.n;
        let x = t.constant(n + 2, NODE_FEATURES, obs.nodes[arm.index()].clone())?;
        let mut x = self.node_embed.forward(t, x)?;
        let sets = Arc::new(KeySets::dense(n + 2, n + 2));
        for block in &self.node_blocks {
            x = block.forward(t, x, x, sets.clone())?;
        }
        let keep: Vec<usize> = (0..n).chain([n + arm.index()]).collect();
        Ok(t.gather_rows(x, Arc::new(keep))?)
    }

    /// Cell features in arm 1's orientation, `(n+1)^2 x width`.
    pub fn encode_coop(&self, t: &mut Tape, obs: &PolicyObservation) -> Result<Var> {
        let m = obs.side();
        let scale = self.config.cost_scale;
        let data: Vec<f64> = obs
            .coop
            .chunks(COOP_FEATURES)
            .flat_map(|c| [c[0] * scale, c[1] * scale, c[2]])
            .collect();
        let x = t.constant(m * m, COOP_FEATURES, data)?;
        let mut x = self.coop_embed.forward(t, x)?;
        if let Some(mlp) = &self.coop_mlp {
            let y = mlp.forward(t, x)?;
            let sum = t.add(x, y)?;
            return Ok(sum);
        }
        let sets = Arc::new(match self.config.coop_encoder {
            CoopEncoderKind::Dense => KeySets::dense(m * m, m * m),
            _ => row_column_sets(m)?,
        });
        for block in &self.coop_blocks {
            x = block.forward(t, x, x, sets.clone())?;
        }
        Ok(x)
    }

    /// Log-probabilities over `arm`'s `n+1` actions as a row vector.
    pub fn generate(&self, t: &mut Tape, obs: &PolicyObservation, nodes: Var, coop: Var, arm: Arm) -> Result<Var> {
        let m = obs.side();
        let rows = Arc::new(own_row_sets(m, arm)?);
        let mut x = nodes;
        if let Some(pool) = &self.row_pool {
            let avg = t.constant(m, m * m, row_average(m, arm))?;
            let pooled = t.matmul(avg, coop)?;
            let joined = t.concat_cols(x, pooled)?;
            x = pool.forward(t, joined)?;
        }
        let dense = Arc::new(KeySets::dense(m, m));
        for layer in &self.generator {
            if let Some(sa) = &layer.self_attn {
                x = sa.forward(t, x, x, dense.clone())?;
            }
            if let Some(ca) = &layer.cross_attn {
                let (k, v) = ca.attention.project_memory(t, coop)?;
                x = ca.forward_projected(t, x, k, v, rows.clone())?;
            }
        }
        if let Some(mlp) = &self.generator_mlp {
            let y = mlp.forward(t, x)?;
            x = t.add(x, y)?;
        }
        let allowed = obs.agent_mask(arm);
        if !allowed.iter().any(|&a| a) {
            return Err(CoopError::Nn(coop_nn::NnError::AllMasked(format!("{arm:?} has no feasible action"))));
        }
        if let Some(masked) = &self.masked_attn {
            let keys: Vec<usize> = (0..m).filter(|&k| allowed[k]).collect();
            let sets = Arc::new(KeySets::from_lists(m, vec![keys; m])?);
            x = masked.forward(t, x, x, sets)?;
        }
        let logits = self.head.forward(t, x)?;
        let logits = t.reshape(logits, 1, m)?;
        Ok(t.log_softmax(logits, Some(Arc::new(allowed)))?)
    }

    pub fn forward(&self, t: &mut Tape, obs: &PolicyObservation) -> Result<PolicyOutput> {
        let coop = self.encode_coop(t, obs)?;
        let n1 = self.encode_nodes(t, obs, Arm::Arm1)?;
        let n2 = self.encode_nodes(t, obs, Arm::Arm2)?;
        let p1 = self.generate(t, obs, n1, coop, Arm::Arm1)?;
        let p2 = self.generate(t, obs, n2, coop, Arm::Arm2)?;
        let log_map = joint_log_map(t, p1, p2, &obs.mask)?;
        let pooled1 = t.mean_rows(n1);
        let pooled2 = t.mean_rows(n2);
        let pooled = t.add(pooled1, pooled2)?;
        let pooled = t.scale(pooled, 0.5);
        let value = self.value_head.forward(t, pooled)?;
        Ok(PolicyOutput { log_map, log_probs: [p1, p2], value })
    }

    /// Joint probabilities (exactly 0 on masked cells) and the state value.
    pub fn evaluate(&self, obs: &PolicyObservation) -> Result<(Vec<f64>, f64)> {
        let mut t = Tape::new(&self.store);
        let out = self.forward(&mut t, obs)?;
        Ok((map_probabilities(t.value(out.log_map), &obs.mask), t.scalar(out.value)))
    }

    /// Writes `<stem>.ckpt` and the `<stem>.json` sidecar.
    pub fn save(&self, stem: impl AsRef<Path>, meta: &PolicyMeta) -> Result<()> {
        let (ckpt, json) = sidecar_paths(stem.as_ref());
        checkpoint::save(&ckpt, &checkpoint::store_entries(&self.store))?;
        std::fs::write(json, serde_json::to_string_pretty(meta)?)?;
        Ok(())
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<(Self, PolicyMeta)> {
        let (ckpt, json) = sidecar_paths(stem.as_ref());
        if !ckpt.exists() {
            return Err(CoopError::MissingCheckpoint(ckpt.display().to_string()));
        }
        let meta: PolicyMeta = serde_json::from_str(&std::fs::read_to_string(json)?)?;
        let mut policy = Self::new(meta.config.clone(), meta.seed)?;
        checkpoint::restore(&mut policy.store, &checkpoint::load(&ckpt)?)?;
        Ok((policy, meta))
    }
}

/// Metadata written next to a policy checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub config: PolicyConfig,
    pub train_n: usize,
    pub seed: u64,
    pub iterations: usize,
    /// Training settings as free-form JSON (reward mode, oracle, matrix source).
    pub training: serde_json::Value,
}

/// Cell `(i, j)` of an `m x m` grid attends to row `i` and column `j`.
pub fn row_column_sets(m: usize) -> Result<KeySets> {
    let lists = (0..m * m)
        .map(|c| {
            let (i, j) = (c / m, c % m);
            let mut keys: Vec<usize> = (0..m).map(|k| i * m + k).collect();
            keys.extend((0..m).filter(|&k| k != i).map(|k| k * m + j));
            keys
        })
        .collect();
    Ok(KeySets::from_lists(m * m, lists)?)
}

/// Action `a` of `arm` attends to the coop cells in which it is that arm's
/// action: row `a` for arm 1, column `a` for arm 2.
fn own_row_sets(m: usize, arm: Arm) -> Result<KeySets> {
    let lists = (0..m)
        .map(|a| match arm {
            Arm::Arm1 => (0..m).map(|b| a * m + b).collect(),
            Arm::Arm2 => (0..m).map(|b| b * m + a).collect(),
        })
        .collect();
    Ok(KeySets::from_lists(m * m, lists)?)
}

fn row_average(m: usize, arm: Arm) -> Vec<f64> {
    let mut a = vec![0.0; m * m * m];
    for r in 0..m {
        for b in 0..m {
            let cell = match arm {
                Arm::Arm1 => r * m + b,
                Arm::Arm2 => b * m + r,
            };
            a[r * m * m + cell] = 1.0 / m as f64;
        }
    }
    a
}

/// `log p1(i) + log p2(j)` renormalized over the unmasked cells.
pub fn joint_log_map(t: &mut Tape, p1: Var, p2: Var, mask: &[bool]) -> Result<Var> {
    if !mask.iter().any(|&m| m) {
        return Err(CoopError::Nn(coop_nn::NnError::AllMasked("joint map".into())));
    }
    let sum = t.outer_sum(p1, p2)?;
    Ok(t.log_softmax(sum, Some(Arc::new(mask.to_vec())))?)
}

pub fn map_probabilities(log_map: &[f64], mask: &[bool]) -> Vec<f64> {
    log_map.iter().zip(mask).map(|(&l, &m)| if m { l.exp() } else { 0.0 }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Argmax,
    Sample,
}

/// Picks a cell index from a probability map. Argmax ties go to the lowest
/// row-major index.
pub fn select_cell(map: &[f64], mode: SelectMode, rng: &mut impl Rng) -> usize {
    match mode {
        SelectMode::Argmax => {
            let mut best = 0;
            for (i, &p) in map.iter().enumerate() {
                if p > map[best] {
                    best = i;
                }
            }
            best
        }
        SelectMode::Sample => {
            let u: f64 = rng.gen::<f64>() * map.iter().sum::<f64>();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, &p) in map.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    last = i;
                    if u < acc {
                        return i;
                    }
                }
            }
            last
        }
    }
}

pub fn select_action(map: &[f64], n: usize, mode: SelectMode, rng: &mut impl Rng) -> Result<JointAction> {
    JointAction::from_cell(select_cell(map, mode, rng), n)
}

/// Drives planning with a trained policy.
pub struct PolicyPlanner<'a, R: Rng> {
    pub policy: &'a Policy,
    pub mode: SelectMode,
    pub rng: R,
}

impl<R: Rng> StepPolicy for PolicyPlanner<'_, R> {
    fn choose(&mut self, graph: &TaskStateGraph, matrix: &CostMatrix, allowed: &[bool]) -> Result<Option<JointAction>> {
        let obs = PolicyObservation::new(graph, matrix, allowed)?;
        if !obs.mask.iter().any(|&m| m) {
            return Ok(None);
        }
        let (map, _) = self.policy.evaluate(&obs)?;
        Ok(Some(select_action(&map, graph.n(), self.mode, &mut self.rng)?))
    }
}

/// Finite-difference checks of every network block and of the full policy
/// on a sampled `n`-task state. Each scalar is a fixed random contraction of
/// the block's output, scaled to stay O(1) so finite-difference noise does
/// not swamp derivatives that are exactly zero.
pub fn gradient_checks(config: &PolicyConfig, n: usize, check: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    let inst = crate::bench::sample_instance(n, check.seed)?;
    let graph = TaskStateGraph::from_instance(&inst, crate::graph::ReturnMode::Strict)?;
    let matrix = crate::costmodel::build_cost_matrix(&graph, &crate::costmodel::CostOracle::default());
    let obs = PolicyObservation::new(&graph, &matrix, &matrix.mask())?;
    let project = |t: &mut Tape, x: Var| -> Result<Var> {
        let (r, c) = t.dims(x);
        let mut rng = ChaCha8Rng::seed_from_u64((r * 1000 + c) as u64);
        let scale = 1.0 / ((r * c) as f64).sqrt();
        let w: Vec<f64> = (0..r * c).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let y = t.mul_const(x, Arc::new(w))?;
        Ok(t.sum_all(y))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    let mut uniform = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let mut out = Vec::new();

    let mut s = ParameterStore::new(check.seed);
    let lin = Linear::new(&mut s, "linear", 5, 4)?;
    let norm = LayerNorm::new(&mut s, "norm", 4)?;
    let attn = MultiHeadAttention::new(&mut s, "attention", 8, 2)?;
    let (rows, seq) = (uniform(3 * 5), uniform(4 * 8));
    let keep: Vec<bool> = (0..16).map(|k| k % 5 != 2).collect();
    let sets = Arc::new(KeySets::from_mask(4, 4, &keep)?);
    let prefixed = |p: &'static str| move |name: &str| name.starts_with(p);
    out.push((
        "linear".to_string(),
        grad_check_where(&s, check, prefixed("linear"), |t| {
            let x = t.constant(3, 5, rows.clone())?;
            let y = lin.forward(t, x)?;
            project(t, y)
        })?,
    ));
    out.push((
        "layer_norm".to_string(),
        grad_check_where(&s, check, prefixed("norm"), |t| {
            let x = t.constant(3, 4, rows[..12].to_vec())?;
            let y = norm.forward(t, x)?;
            let y = t.square(y);
            project(t, y)
        })?,
    ));
    out.push((
        "attention".to_string(),
        grad_check_where(&s, check, prefixed("attention"), |t| {
            let x = t.constant(4, 8, seq.clone())?;
            let y = attn.forward(t, x, x, sets.clone())?;
            project(t, y)
        })?,
    ));

    let policy = Policy::new(config.clone(), check.seed)?;
    let store = policy.store();
    out.push((
        "node_encoder".to_string(),
        grad_check_where(store, check, prefixed("node."), |t| {
            let x = policy.encode_nodes(t, &obs, Arm::Arm1)?;
            project(t, x)
        })?,
    ));
    out.push((
        "coop_encoder".to_string(),
        grad_check_where(store, check, prefixed("coop."), |t| {
            let x = policy.encode_coop(t, &obs)?;
            project(t, x)
        })?,
    ));
    out.push((
        "action_generator".to_string(),
        grad_check_where(store, check, prefixed("gen."), |t| {
            let coop = policy.encode_coop(t, &obs)?;
            let nodes = policy.encode_nodes(t, &obs, Arm::Arm2)?;
            let x = policy.generate(t, &obs, nodes, coop, Arm::Arm2)?;
            project(t, x)
        })?,
    ));
    out.push((
        "full_policy".to_string(),
        grad_check(store, check, |t| -> Result<Var> {
            let o = policy.forward(t, &obs)?;
            let y = project(t, o.log_map)?;
            Ok(t.add(y, o.value)?)
        })?,
    ));
    Ok(out)
}
