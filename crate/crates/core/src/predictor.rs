//! Learned pair-cost model: samples labelled by a [`CostOracle`], an MLP with
//! feasibility and duration heads, and matrix-shaped inference.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use coop_nn::{checkpoint, Activation, Adam, Linear, Mlp, ParameterStore, Tape, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{random_yaw, sample_separated};
use crate::costmodel::{matrix_with_pair_prices, CostMatrix, CostOracle, MatrixSource, PairQuery};
use crate::error::{CoopError, Result};
use crate::geometry::{
    depot_pose, segment_distance, sub, synchronized_clearance, wrap_angle, Pose, OBJECT_EDGE, TABLE_HALF_X, TABLE_HALF_Y,
};
use crate::graph::{CellCost, TaskStateGraph};

/// Width of [`encode_query`] output.
pub const QUERY_FEATURES: usize = 133;
const Z_SCALE: f64 = 0.3;
/// Share of sampled queries whose arms both start at their depots.
const DEPOT_START_SHARE: f64 = 0.1;

/// One oracle-labelled pair query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictorSample {
    pub query: PairQuery,
    pub transit_ok: bool,
    pub transfer_ok: bool,
    pub c_mv: f64,
    pub c_tf: f64,
}

impl PredictorSample {
    pub fn label(&self) -> CellCost {
        if self.feasible() {
            CellCost { c_mv: self.c_mv, c_tf: self.c_tf, feasible: true }
        } else {
            CellCost::INFEASIBLE
        }
    }

    pub fn feasible(&self) -> bool {
        self.transit_ok && self.transfer_ok
    }

    pub fn labelled(query: PairQuery, oracle: &CostOracle) -> Self {
        let e = oracle.evaluate_pair(&query);
        Self { query, transit_ok: e.transit_ok, transfer_ok: e.transfer_ok, c_mv: e.c_mv, c_tf: e.c_tf }
    }
}

/// Draws one query with the same placement rules as benchmark instances.
pub fn sample_query(rng: &mut impl Rng) -> Result<PairQuery> {
    let at_depots = rng.gen_bool(DEPOT_START_SHARE);
    let count = if at_depots { 4 } else { 6 };
    let pts = sample_separated(rng, count, OBJECT_EDGE, &[])?;
    let poses: Vec<Pose> = pts.iter().map(|p| Pose::on_table(p[0], p[1], random_yaw(rng))).collect();
    let (arm1_current, arm2_current, rest) = if at_depots {
        (depot_pose(0), depot_pose(1), &poses[..])
    } else {
        (poses[0], poses[1], &poses[2..])
    };
    Ok(PairQuery {
        arm1_current,
        arm2_current,
        arm1_pick: rest[0],
        arm1_place: rest[1],
        arm2_pick: rest[2],
        arm2_place: rest[3],
        bbox: [OBJECT_EDGE; 3],
    })
}

pub fn sample_predictor_dataset(count: usize, oracle: &CostOracle, seed: u64) -> Result<Vec<PredictorSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Ok(PredictorSample::labelled(sample_query(&mut rng)?, oracle))).collect()
}

fn push_pose(out: &mut Vec<f64>, p: &Pose) {
    out.extend([p.position[0] / TABLE_HALF_X, p.position[1] / TABLE_HALF_Y, p.position[2] / Z_SCALE]);
    for a in p.orientation {
        out.extend([a.sin(), a.cos()]);
    }
}

fn push_leg(out: &mut Vec<f64>, a: &Pose, b: &Pose) {
    let d = sub(b.position, a.position);
    out.extend(d);
    out.push(norm(d));
    for k in 0..3 {
        let w = wrap_angle(b.orientation[k] - a.orientation[k]);
        out.extend([w.sin(), w.cos(), w.abs() / std::f64::consts::PI]);
    }
}

fn push_offset(out: &mut Vec<f64>, d: [f64; 3]) {
    out.extend(d);
    out.push(norm(d));
}

fn norm(d: [f64; 3]) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Network input for a query: normalized poses, per-leg displacements and
/// angle deltas, inter-arm offsets, the relative motion of the two arms and
/// the closest approach of each phase (synchronized and path-wise).
pub fn encode_query(q: &PairQuery) -> Vec<f64> {
    let mut out = Vec::with_capacity(QUERY_FEATURES);
    for p in [&q.arm1_current, &q.arm2_current, &q.arm1_pick, &q.arm1_place, &q.arm2_pick, &q.arm2_place] {
        push_pose(&mut out, p);
    }
    push_leg(&mut out, &q.arm1_current, &q.arm1_pick);
    push_leg(&mut out, &q.arm2_current, &q.arm2_pick);
    push_leg(&mut out, &q.arm1_pick, &q.arm1_place);
    push_leg(&mut out, &q.arm2_pick, &q.arm2_place);
    push_offset(&mut out, sub(q.arm1_current.position, q.arm2_current.position));
    push_offset(&mut out, sub(q.arm1_pick.position, q.arm2_pick.position));
    push_offset(&mut out, sub(q.arm1_place.position, q.arm2_place.position));
    let motion = |a0: &Pose, a1: &Pose, b0: &Pose, b1: &Pose| sub(sub(a1.position, a0.position), sub(b1.position, b0.position));
    push_offset(&mut out, motion(&q.arm1_current, &q.arm1_pick, &q.arm2_current, &q.arm2_pick));
    push_offset(&mut out, motion(&q.arm1_pick, &q.arm1_place, &q.arm2_pick, &q.arm2_place));
    for (a0, a1, b0, b1) in [
        (&q.arm1_current, &q.arm1_pick, &q.arm2_current, &q.arm2_pick),
        (&q.arm1_pick, &q.arm1_place, &q.arm2_pick, &q.arm2_place),
    ] {
        let (p, r) = ((a0.position, a1.position), (b0.position, b1.position));
        out.push(synchronized_clearance(p.0, p.1, r.0, r.1) / OBJECT_EDGE);
        out.push(segment_distance(p.0, p.1, r.0, r.1) / OBJECT_EDGE);
    }
    out.extend(q.bbox.iter().map(|b| b / OBJECT_EDGE));
    debug_assert_eq!(out.len(), QUERY_FEATURES);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorArch {
    pub hidden: Vec<usize>,
    pub threshold: f64,
}

impl Default for PredictorArch {
    fn default() -> Self {
        Self { hidden: vec![512; 3], threshold: 0.5 }
    }
}

impl PredictorArch {
    /// The reduced model used in the predictor-size ablation.
    pub fn small() -> Self {
        Self { hidden: vec![64; 2], threshold: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Fraction of the dataset held out for evaluation.
    pub split: f64,
    pub seed: u64,
    /// Weight of the relative duration loss against the feasibility loss.
    pub time_weight: f64,
    /// Wall-clock cap; training stops after the epoch that crosses it.
    pub max_seconds: Option<f64>,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 1e-3, batch: 256, split: 0.05, seed: 0, time_weight: 1.0, max_seconds: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorMetrics {
    pub mask_accuracy: f64,
    pub mean_relative_time_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub held_out: PredictorMetrics,
    pub seconds: f64,
}

/// Metadata written next to a predictor checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorMeta {
    pub arch: PredictorArch,
    pub oracle: CostOracle,
    pub dataset_seed: u64,
    pub dataset_size: usize,
    pub metrics: PredictorMetrics,
}

#[derive(Clone, Debug)]
pub struct PredictorModel {
    store: ParameterStore,
    trunk: Mlp,
    feasibility: Linear,
    duration: Linear,
    pub arch: PredictorArch,
    /// Prices return/idle cells and structural rules in predicted matrices.
    pub oracle: CostOracle,
}

struct Heads {
    logits: Var,
    log_times: Var,
}

impl PredictorModel {
    pub fn new(arch: PredictorArch, oracle: CostOracle, seed: u64) -> Result<Self> {
        let mut store = ParameterStore::new(seed);
        let mut widths = vec![QUERY_FEATURES];
        widths.extend(&arch.hidden);
        let last = *widths.last().expect("input width");
        let trunk = Mlp::new(&mut store, "trunk", &widths, Activation::Silu)?;
        let feasibility = Linear::new(&mut store, "feasibility", last, 2)?;
        let duration = Linear::new(&mut store, "duration", last, 2)?;
        Ok(Self { store, trunk, feasibility, duration, arch, oracle })
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    fn forward(&self, t: &mut Tape, x: Var) -> Result<Heads> {
        let h = self.trunk.forward(t, x)?;
        let h = t.silu(h);
        Ok(Heads { logits: self.feasibility.forward(t, h)?, log_times: self.duration.forward(t, h)? })
    }

    /// Feasibility probabilities and durations, one row per query.
    pub fn predict_raw(&self, queries: &[PairQuery]) -> Result<Vec<([f64; 2], [f64; 2])>> {
        let mut out = Vec::with_capacity(queries.len());
        for chunk in queries.chunks(1024) {
            let data: Vec<f64> = chunk.iter().flat_map(encode_query).collect();
            let mut t = Tape::new(&self.store);
            let x = t.constant(chunk.len(), QUERY_FEATURES, data)?;
            let h = self.forward(&mut t, x)?;
            let (l, d) = (t.value(h.logits), t.value(h.log_times));
            for r in 0..chunk.len() {
                out.push((
                    [sigmoid(l[2 * r]), sigmoid(l[2 * r + 1])],
                    [d[2 * r].exp().max(0.0), d[2 * r + 1].exp().max(0.0)],
                ));
            }
        }
        Ok(out)
    }

    pub fn predict_cells(&self, queries: &[PairQuery]) -> Result<Vec<CellCost>> {
        Ok(self
            .predict_raw(queries)?
            .into_iter()
            .map(|(p, c)| {
                if p[0] >= self.arch.threshold && p[1] >= self.arch.threshold {
                    CellCost { c_mv: c[0], c_tf: c[1], feasible: true }
                } else {
                    CellCost::INFEASIBLE
                }
            })
            .collect())
    }

    pub fn predict_pair(&self, query: &PairQuery) -> Result<CellCost> {
        Ok(self.predict_cells(std::slice::from_ref(query))?[0])
    }

    pub fn predict_cost_matrix(&self, graph: &TaskStateGraph) -> Result<CostMatrix> {
        matrix_with_pair_prices(graph, &self.oracle, |qs| self.predict_cells(qs))
    }

    /// Writes `<stem>.ckpt` and the `<stem>.json` sidecar.
    pub fn save(&self, stem: impl AsRef<Path>, meta: &PredictorMeta) -> Result<()> {
        let (ckpt, json) = sidecar_paths(stem.as_ref());
        checkpoint::save(&ckpt, &checkpoint::store_entries(&self.store))?;
        std::fs::write(json, serde_json::to_string_pretty(meta)?)?;
        Ok(())
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<(Self, PredictorMeta)> {
        let (ckpt, json) = sidecar_paths(stem.as_ref());
        if !ckpt.exists() {
            return Err(CoopError::MissingCheckpoint(ckpt.display().to_string()));
        }
        let meta: PredictorMeta = serde_json::from_str(&std::fs::read_to_string(json)?)?;
        let mut model = Self::new(meta.arch.clone(), meta.oracle, 0)?;
        checkpoint::restore(&mut model.store, &checkpoint::load(&ckpt)?)?;
        Ok((model, meta))
    }
}

impl MatrixSource for PredictorModel {
    fn cost_matrix(&self, graph: &TaskStateGraph) -> Result<CostMatrix> {
        self.predict_cost_matrix(graph)
    }
}

pub(crate) fn sidecar_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("ckpt"), stem.with_extension("json"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mask accuracy over all samples; relative time error over feasible ones.
pub fn evaluate_predictor(model: &PredictorModel, samples: &[PredictorSample]) -> Result<PredictorMetrics> {
    let queries: Vec<PairQuery> = samples.iter().map(|s| s.query).collect();
    let cells = model.predict_cells(&queries)?;
    let predicted_times = model.predict_raw(&queries)?;
    let times: Vec<[f64; 2]> = predicted_times.into_iter().map(|(_, c)| c).collect();
    Ok(score(samples, &cells, &times))
}

/// Metric kernel shared by the model evaluation and its tests.
pub fn score(samples: &[PredictorSample], cells: &[CellCost], times: &[[f64; 2]]) -> PredictorMetrics {
    let correct = samples.iter().zip(cells).filter(|(s, c)| s.feasible() == c.feasible).count();
    let (mut err, mut count) = (0.0, 0usize);
    for (s, t) in samples.iter().zip(times) {
        if s.feasible() {
            err += (t[0] - s.c_mv).abs() / s.c_mv + (t[1] - s.c_tf).abs() / s.c_tf;
            count += 2;
        }
    }
    PredictorMetrics {
        mask_accuracy: correct as f64 / samples.len().max(1) as f64,
        mean_relative_time_error: if count == 0 { 0.0 } else { err / count as f64 },
    }
}

pub struct TrainedPredictor {
    pub model: PredictorModel,
    pub curve: Vec<EpochRecord>,
    pub held_out: PredictorMetrics,
}

/// Adam on feasibility cross-entropy plus relative duration error, the latter
/// only on feasible samples. The held-out split is taken from the tail.
pub fn train_predictor(
    samples: &[PredictorSample],
    arch: PredictorArch,
    oracle: CostOracle,
    config: &PredictorTrainConfig,
    mut log: impl FnMut(&EpochRecord),
) -> Result<TrainedPredictor> {
    if samples.is_empty() || !(0.0..1.0).contains(&config.split) {
        return Err(CoopError::InvalidConfig("predictor training needs samples and a split in [0, 1)".into()));
    }
    let held = ((samples.len() as f64) * config.split).round() as usize;
    let (train, test) = samples.split_at(samples.len() - held);
    if train.is_empty() {
        return Err(CoopError::InvalidConfig("split leaves no training samples".into()));
    }
    let mut model = PredictorModel::new(arch, oracle, config.seed)?;
    let mut opt = Adam::new(&model.store, config.lr);
    let inputs: Vec<f64> = train.iter().flat_map(|s| encode_query(&s.query)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = config.batch.max(1);
    let total_steps = (config.epochs * train.len().div_ceil(batch)).max(1);
    let start = Instant::now();
    let mut curve = Vec::new();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(batch) {
            opt.lr = config.lr * lr_factor(step as f64 / total_steps as f64);
            let (loss, grads) = {
                let mut t = Tape::new(&model.store);
                let x = gather(&mut t, &inputs, idx)?;
                let loss = batch_loss(&model, &mut t, x, train, idx, config.time_weight)?;
                (t.scalar(loss), t.backward(loss)?)
            };
            if !loss.is_finite() {
                return Err(CoopError::Diverged(format!("predictor loss {loss} at epoch {epoch}")));
            }
            opt.step(&mut model.store, &grads)?;
            loss_sum += loss * idx.len() as f64;
            step += 1;
        }
        let held_out = if test.is_empty() { PredictorMetrics::default() } else { evaluate_predictor(&model, test)? };
        let record =
            EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, held_out, seconds: start.elapsed().as_secs_f64() };
        log(&record);
        curve.push(record);
        if config.max_seconds.is_some_and(|cap| start.elapsed().as_secs_f64() >= cap) {
            break;
        }
    }
    let held_out = curve.last().map(|r| r.held_out).unwrap_or_default();
    Ok(TrainedPredictor { model, curve, held_out })
}

/// Linear warmup over the first 5% of steps, then cosine decay to 2%.
fn lr_factor(progress: f64) -> f64 {
    const WARMUP: f64 = 0.05;
    if progress < WARMUP {
        return 0.04 + 0.96 * progress / WARMUP;
    }
    let p = (progress - WARMUP) / (1.0 - WARMUP);
    0.02 + 0.98 * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}

fn gather(t: &mut Tape, inputs: &[f64], idx: &[usize]) -> Result<Var> {
    let mut data = Vec::with_capacity(idx.len() * QUERY_FEATURES);
    for &i in idx {
        data.extend_from_slice(&inputs[i * QUERY_FEATURES..(i + 1) * QUERY_FEATURES]);
    }
    Ok(t.constant(idx.len(), QUERY_FEATURES, data)?)
}

fn batch_loss(
    model: &PredictorModel,
    t: &mut Tape,
    x: Var,
    samples: &[PredictorSample],
    idx: &[usize],
    time_weight: f64,
) -> Result<Var> {
    let h = model.forward(t, x)?;
    let targets: Vec<f64> = idx
        .iter()
        .flat_map(|&i| [samples[i].transit_ok as u8 as f64, samples[i].transfer_ok as u8 as f64])
        .collect();
    let bce = t.bce_with_logits(h.logits, Arc::new(targets))?;
    let bce = t.mean_all(bce);
    let feasible = idx.iter().filter(|&&i| samples[i].feasible()).count();
    if feasible == 0 {
        return Ok(bce);
    }
    let mut truth = Vec::with_capacity(2 * idx.len());
    let mut weights = Vec::with_capacity(2 * idx.len());
    for &i in idx {
        let s = &samples[i];
        truth.extend([s.c_mv, s.c_tf]);
        let w = if s.feasible() { time_weight / (2.0 * feasible as f64) } else { 0.0 };
        weights.extend([w / s.c_mv, w / s.c_tf]);
    }
    let times = t.exp(h.log_times);
    let truth = t.constant(idx.len(), 2, truth)?;
    let diff = t.sub(times, truth)?;
    let diff = t.abs(diff);
    let rel = t.mul_const(diff, Arc::new(weights))?;
    let rel = t.sum_all(rel);
    Ok(t.add(bce, rel)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_has_fixed_width_and_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Clearances are in object edges; nothing spans more than the table plus the depot.
        let bound = 2.0 * (TABLE_HALF_X + TABLE_HALF_Y + crate::geometry::DEPOT_Y) / OBJECT_EDGE;
        for _ in 0..50 {
            let q = sample_query(&mut rng).unwrap();
            let f = encode_query(&q);
            assert_eq!(f.len(), QUERY_FEATURES);
            assert!(f.iter().all(|x| x.is_finite() && x.abs() < bound));
        }
    }

    #[test]
    fn score_of_exact_labels_is_perfect() {
        let samples = sample_predictor_dataset(200, &CostOracle::default(), 3).unwrap();
        let cells: Vec<CellCost> = samples.iter().map(|s| s.label()).collect();
        let times: Vec<[f64; 2]> = samples.iter().map(|s| [s.c_mv, s.c_tf]).collect();
        let m = score(&samples, &cells, &times);
        assert_eq!(m.mask_accuracy, 1.0);
        assert_eq!(m.mean_relative_time_error, 0.0);
    }

    #[test]
    fn constant_infeasible_model_scores_infeasible_share() {
        let samples = sample_predictor_dataset(500, &CostOracle::default(), 4).unwrap();
        let cells = vec![CellCost::INFEASIBLE; samples.len()];
        let times = vec![[1.0, 1.0]; samples.len()];
        let share = samples.iter().filter(|s| !s.feasible()).count() as f64 / samples.len() as f64;
        assert_eq!(score(&samples, &cells, &times).mask_accuracy, share);
    }
}
