//! Reward shaping, rollouts and clipped-surrogate policy optimization.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use coop_nn::{checkpoint, clip_global_norm, Adam, Gradients, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::sample_instance;
use crate::costmodel::{pair_cost, return_cost, CostOracle, MatrixSource};
use crate::error::{CoopError, Result};
use crate::graph::{
    apply_joint_action, episode_status, EpisodeLog, EpisodeStatus, JointAction, ReturnMode, StatusKind, StepRecord,
    TaskStateGraph,
};
use crate::policy::{map_probabilities, select_cell, Policy, PolicyConfig, PolicyMeta, PolicyObservation, SelectMode};
use crate::predictor::PredictorModel;

/// Failure penalty `c_p` charged when an episode ends unsolved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PenaltyMode {
    /// `n_u / n`: the share of tasks left undone.
    Adaptive,
    Fixed(f64),
    None,
}

impl FromStr for PenaltyMode {
    type Err = CoopError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "adaptive" => Ok(Self::Adaptive),
            "none" => Ok(Self::None),
            _ => {
                let inner = s
                    .strip_prefix("fixed")
                    .map(|r| r.trim_start_matches([':', '(', '=']).trim_end_matches(')'))
                    .ok_or_else(|| CoopError::InvalidConfig(format!("unknown penalty mode `{s}`")))?;
                let c = if inner.is_empty() { 1.0 } else { inner.parse().map_err(|_| CoopError::InvalidConfig(s.clone()))? };
                Ok(Self::Fixed(c))
            }
        }
    }
}

impl TryFrom<String> for PenaltyMode {
    type Error = CoopError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PenaltyMode> for String {
    fn from(p: PenaltyMode) -> String {
        p.to_string()
    }
}

impl fmt::Display for PenaltyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Adaptive => write!(f, "adaptive"),
            Self::Fixed(c) => write!(f, "fixed({c})"),
            Self::None => write!(f, "none"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub penalty: PenaltyMode,
    /// Charge `-c_rt / 2` when an episode succeeds, so the return is `-C / 2`.
    pub include_return_cost: bool,
    /// Seconds per unit of failure penalty. The dense reward is in seconds
    /// while `c_p` is unitless; at 1.0 deadlocking early is cheaper than
    /// finishing, and the policy learns to do it.
    pub penalty_scale: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { penalty: PenaltyMode::Adaptive, include_return_cost: true, penalty_scale: 30.0 }
    }
}

/// `-(c_mv + c_tf) / 2 - c_p`, with `c_p` nonzero only on a failed ending.
pub fn step_reward(c_mv: f64, c_tf: f64, terminal_failure: bool, n_u: usize, n: usize, mode: PenaltyMode) -> f64 {
    let penalty = match (terminal_failure, mode) {
        (false, _) | (true, PenaltyMode::None) => 0.0,
        (true, PenaltyMode::Adaptive) => n_u as f64 / n as f64,
        (true, PenaltyMode::Fixed(c)) => c,
    };
    -(c_mv + c_tf) / 2.0 - penalty
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSourceKind {
    Oracle,
    Predictor,
}

impl FromStr for MatrixSourceKind {
    type Err = CoopError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "predictor" => Ok(Self::Predictor),
            _ => Err(CoopError::InvalidConfig(format!("unknown matrix source `{s}`"))),
        }
    }
}

/// The oracle itself, or a predictor checkpoint loaded from `predictor`.
pub fn load_matrix_source(
    kind: MatrixSourceKind,
    predictor: Option<&Path>,
    oracle: CostOracle,
) -> Result<Box<dyn MatrixSource>> {
    match kind {
        MatrixSourceKind::Oracle => Ok(Box::new(oracle)),
        MatrixSourceKind::Predictor => {
            let stem = predictor.ok_or_else(|| CoopError::MissingCheckpoint("predictor (no path given)".into()))?;
            Ok(Box::new(PredictorModel::load(stem)?.0))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Task count of training instances.
    pub n: usize,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub lr: f64,
    pub clip_ratio: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub epochs_per_batch: usize,
    /// Transitions per gradient step.
    pub batch_size: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Returns are divided by this before value regression.
    pub value_scale: f64,
    pub seed: u64,
    pub matrix_source: MatrixSourceKind,
    /// Predictor checkpoint stem, required for the predictor source.
    pub predictor: Option<PathBuf>,
    /// Wall-clock cap for the whole run; checked between iterations.
    pub max_seconds: Option<f64>,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n: 10,
            iterations: 300,
            episodes_per_iteration: 16,
            lr: 1e-4,
            clip_ratio: 0.2,
            discount: 1.0,
            gae_lambda: 0.95,
            epochs_per_batch: 4,
            batch_size: 20,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 1.0,
            value_scale: 10.0,
            seed: 0,
            matrix_source: MatrixSourceKind::Predictor,
            predictor: None,
            max_seconds: None,
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoopError::InvalidConfig(m.into()));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("clip ratio must lie in (0, 1)");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("GAE lambda must lie in [0, 1]");
        }
        if self.n < 2 || !self.n.is_multiple_of(2) {
            return bad("training task count must be even and at least 2");
        }
        if self.episodes_per_iteration == 0 || self.batch_size == 0 || self.epochs_per_batch == 0 {
            return bad("episode, batch and epoch counts must be positive");
        }
        Ok(())
    }
}

/// One decision of a rollout.
#[derive(Clone, Debug)]
pub struct Transition {
    pub observation: PolicyObservation,
    pub cell: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub log: EpisodeLog,
    pub undone: usize,
}

impl Episode {
    pub fn total_return(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }
}

/// Samples one episode. Cell costs come from `source`; the oracle decides
/// whether a chosen action actually executes and prices the final return.
pub fn rollout_episode(
    policy: &Policy,
    start: &TaskStateGraph,
    source: &dyn MatrixSource,
    oracle: &CostOracle,
    reward: &RewardConfig,
    mode: SelectMode,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let n = start.n();
    let mut g = start.clone();
    let mut transitions: Vec<Transition> = Vec::new();
    let mut log = EpisodeLog::default();
    loop {
        let matrix = source.cost_matrix(&g)?;
        let mask = matrix.mask();
        match episode_status(&g, &mask) {
            StatusKind::AllDone => {
                log.c_rt = return_cost(&g, oracle)?;
                log.status = Some(EpisodeStatus::Success);
                if let Some(last) = transitions.last_mut() {
                    last.done = true;
                    if reward.include_return_cost {
                        last.reward -= log.c_rt / 2.0;
                    }
                }
                return Ok(Episode { transitions, log, undone: 0 });
            }
            StatusKind::Deadlock => return Ok(fail(transitions, log, &g, reward)),
            StatusKind::Ongoing => {}
        }
        let obs = PolicyObservation::new(&g, &matrix, &mask)?;
        let (map, value) = {
            let mut t = Tape::new(policy.store());
            let out = policy.forward(&mut t, &obs)?;
            let lm = t.value(out.log_map).to_vec();
            (lm, t.scalar(out.value))
        };
        let probs = map_probabilities(&map, &obs.mask);
        let cell = select_cell(&probs, mode, rng);
        let action = JointAction::from_cell(cell, n)?;
        let priced = *matrix.at(action);
        let executes = pair_cost(&g, action.a1, action.a2, oracle)?.feasible && !oracle.execution_fails(&g, action);
        transitions.push(Transition {
            observation: obs,
            cell,
            log_prob: map[cell],
            reward: step_reward(priced.c_mv, priced.c_tf, false, 0, n, reward.penalty),
            value,
            done: false,
        });
        if !executes {
            return Ok(fail(transitions, log, &g, reward));
        }
        log.steps.push(StepRecord { action, c_mv: priced.c_mv, c_tf: priced.c_tf });
        g = apply_joint_action(&g, action, &priced)?;
    }
}

fn fail(mut transitions: Vec<Transition>, mut log: EpisodeLog, g: &TaskStateGraph, reward: &RewardConfig) -> Episode {
    let undone = g.undone();
    log.status = Some(EpisodeStatus::Deadlock);
    if let Some(last) = transitions.last_mut() {
        last.done = true;
        last.reward += reward.penalty_scale * step_reward(0.0, 0.0, true, undone, g.n(), reward.penalty);
    }
    Episode { transitions, log, undone }
}

/// GAE advantages and value targets for one episode's transitions (the
/// episode ends after the last one).
pub fn gae(rewards: &[f64], values: &[f64], discount: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for i in (0..rewards.len()).rev() {
        let next = if i + 1 < rewards.len() { values[i + 1] } else { 0.0 };
        let delta = rewards[i] + discount * next - values[i];
        running = delta + discount * lambda * running;
        adv[i] = running;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate update over `batch` with precomputed advantages and
/// value targets (the latter already divided by `value_scale`).
pub fn ppo_update(
    policy: &mut Policy,
    opt: &mut Adam,
    batch: &[(Transition, f64, f64)],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(CoopError::InvalidConfig("empty PPO batch".into()));
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0usize;
    for _ in 0..config.epochs_per_batch {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let (loss_stats, grads) = minibatch_gradients(policy, batch, chunk, config)?;
            let mut grads = grads;
            if !grads.is_finite() {
                return Err(CoopError::Diverged("non-finite policy gradient".into()));
            }
            clip_global_norm(&mut grads, config.max_grad_norm);
            opt.step(policy.store_mut(), &grads)?;
            stats.policy_loss += loss_stats.policy_loss * chunk.len() as f64;
            stats.value_loss += loss_stats.value_loss * chunk.len() as f64;
            stats.entropy += loss_stats.entropy * chunk.len() as f64;
            stats.clip_fraction += loss_stats.clip_fraction * chunk.len() as f64;
            count += chunk.len();
        }
    }
    let k = count as f64;
    let out = UpdateStats {
        policy_loss: stats.policy_loss / k,
        value_loss: stats.value_loss / k,
        entropy: stats.entropy / k,
        clip_fraction: stats.clip_fraction / k,
    };
    if [out.policy_loss, out.value_loss, out.entropy].iter().any(|x| !x.is_finite()) {
        return Err(CoopError::Diverged(format!("{out:?}")));
    }
    Ok(out)
}

fn minibatch_gradients(
    policy: &Policy,
    batch: &[(Transition, f64, f64)],
    chunk: &[usize],
    config: &TrainConfig,
) -> Result<(UpdateStats, Gradients)> {
    let mut t = Tape::new(policy.store());
    let inv = 1.0 / chunk.len() as f64;
    let mut total = None;
    let mut stats = UpdateStats::default();
    let eps = config.clip_ratio;
    for &i in chunk {
        let (tr, adv, target) = &batch[i];
        let out = policy.forward(&mut t, &tr.observation)?;
        let lp = t.select(out.log_map, tr.cell)?;
        let old = t.constant(1, 1, vec![tr.log_prob])?;
        let diff = t.sub(lp, old)?;
        let ratio = t.exp(diff);
        let r = t.scalar(ratio);
        if (r - 1.0).abs() > eps {
            stats.clip_fraction += inv;
        }
        let s1 = t.scale(ratio, *adv);
        let clipped = t.clamp(ratio, 1.0 - eps, 1.0 + eps);
        let s2 = t.scale(clipped, *adv);
        let surr = t.min(s1, s2)?;
        let pol = t.scale(surr, -inv);
        stats.policy_loss -= t.scalar(surr) * inv;

        let target = t.constant(1, 1, vec![*target])?;
        let err = t.sub(out.value, target)?;
        let sq = t.square(err);
        stats.value_loss += t.scalar(sq) * inv;
        let vl = t.scale(sq, config.value_coef * inv);

        let mask: Vec<f64> = tr.observation.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let p = t.exp(out.log_map);
        let plogp = t.mul(p, out.log_map)?;
        let plogp = t.mul_const(plogp, Arc::new(mask))?;
        let neg_entropy = t.sum_all(plogp);
        stats.entropy -= t.scalar(neg_entropy) * inv;
        let el = t.scale(neg_entropy, config.entropy_coef * inv);

        let term = t.add(pol, vl)?;
        let term = t.add(term, el)?;
        total = Some(match total {
            None => term,
            Some(acc) => t.add(acc, term)?,
        });
    }
    let loss = total.expect("non-empty chunk");
    Ok((stats, t.backward(loss)?))
}

/// One row of the training report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean episode cost over successful episodes (NaN if none succeeded).
    pub mean_cost: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

pub const REPORT_HEADER: &str = "iteration,mean_cost,success_rate,policy_loss,value_loss,entropy,clip_fraction";

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.mean_cost,
            self.success_rate,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.clip_fraction
        )
    }
}

pub fn write_report(path: impl AsRef<Path>, rows: &[IterationRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", r.csv_row())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<IterationRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(CoopError::Format("training report header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            let f = |i: usize| -> Result<f64> {
                v.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| CoopError::Format(format!("report row `{l}`")))
            };
            Ok(IterationRecord {
                iteration: f(0)? as usize,
                mean_cost: f(1)?,
                success_rate: f(2)?,
                policy_loss: f(3)?,
                value_loss: f(4)?,
                entropy: f(5)?,
                clip_fraction: f(6)?,
            })
        })
        .collect()
}

/// Seed of the `k`-th training instance of `iteration`.
fn instance_seed(seed: u64, iteration: usize, k: usize) -> u64 {
    crate::graph::mix(seed ^ crate::graph::mix(((iteration as u64) << 20) | k as u64 | 1 << 62)) >> 1
}

pub struct TrainOutcome {
    pub policy: Policy,
    pub report: Vec<IterationRecord>,
}

/// Runs PPO, writing `policy.ckpt`/`policy.json`, `optimizer.ckpt` and
/// `report.csv` into `out_dir` after every iteration. With `resume`, picks
/// up from whatever those files hold.
pub fn train_policy(
    config: &TrainConfig,
    reward: &RewardConfig,
    oracle: &CostOracle,
    source: &dyn MatrixSource,
    out_dir: &Path,
    resume: bool,
    mut log: impl FnMut(&IterationRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let stem = out_dir.join("policy");
    let opt_path = out_dir.join("optimizer.ckpt");
    let report_path = out_dir.join("report.csv");
    let (mut policy, mut report) = if resume && stem.with_extension("ckpt").exists() {
        let (p, _) = Policy::load(&stem)?;
        (p, read_report(&report_path).unwrap_or_default())
    } else {
        (Policy::new(config.policy.clone(), config.seed)?, Vec::new())
    };
    let mut opt = Adam::new(policy.store(), config.lr);
    if resume && opt_path.exists() {
        opt.load_state(policy.store(), &checkpoint::load(&opt_path)?)?;
    }
    let start = Instant::now();
    for iteration in report.len()..config.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ crate::graph::mix(iteration as u64 + 7));
        let mut batch = Vec::new();
        let (mut successes, mut cost_sum) = (0usize, 0.0);
        for k in 0..config.episodes_per_iteration {
            let inst = sample_instance(config.n, instance_seed(config.seed, iteration, k))?;
            let g = TaskStateGraph::from_instance(&inst, ReturnMode::Strict)?;
            let ep = rollout_episode(&policy, &g, source, oracle, reward, SelectMode::Sample, &mut rng)?;
            if ep.log.is_success() {
                successes += 1;
                cost_sum += crate::graph::cumulative_cost(&ep.log)?;
            }
            let rewards: Vec<f64> = ep.transitions.iter().map(|t| t.reward / config.value_scale).collect();
            let values: Vec<f64> = ep.transitions.iter().map(|t| t.value).collect();
            let (adv, targets) = gae(&rewards, &values, config.discount, config.gae_lambda);
            for ((tr, a), v) in ep.transitions.into_iter().zip(adv).zip(targets) {
                batch.push((tr, a, v));
            }
        }
        normalize_advantages(&mut batch);
        let stats = if batch.is_empty() {
            UpdateStats::default()
        } else {
            ppo_update(&mut policy, &mut opt, &batch, config, &mut rng)?
        };
        let record = IterationRecord {
            iteration,
            mean_cost: if successes > 0 { cost_sum / successes as f64 } else { f64::NAN },
            success_rate: successes as f64 / config.episodes_per_iteration as f64,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
        };
        log(&record);
        report.push(record);
        let meta = PolicyMeta {
            config: config.policy.clone(),
            train_n: config.n,
            seed: config.seed,
            iterations: report.len(),
            training: serde_json::json!({
                "reward": reward,
                "oracle": oracle,
                "matrix_source": config.matrix_source,
                "lr": config.lr,
                "episodes_per_iteration": config.episodes_per_iteration,
            }),
        };
        policy.save(&stem, &meta)?;
        checkpoint::save(&opt_path, &opt.state(policy.store()))?;
        write_report(&report_path, &report)?;
        if config.max_seconds.is_some_and(|cap| start.elapsed().as_secs_f64() >= cap) {
            break;
        }
    }
    Ok(TrainOutcome { policy, report })
}

fn normalize_advantages(batch: &mut [(Transition, f64, f64)]) {
    if batch.len() < 2 {
        return;
    }
    let n = batch.len() as f64;
    let mean = batch.iter().map(|b| b.1).sum::<f64>() / n;
    let var = batch.iter().map(|b| (b.1 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for b in batch.iter_mut() {
        b.1 = (b.1 - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        assert_eq!(step_reward(2.0, 3.0, false, 0, 10, PenaltyMode::Adaptive), -2.5);
        assert!((step_reward(2.0, 3.0, true, 4, 10, PenaltyMode::Adaptive) - (-2.9)).abs() < 1e-12);
        assert_eq!(step_reward(2.0, 3.0, true, 4, 10, PenaltyMode::Fixed(1.0)), -3.5);
        assert_eq!(step_reward(0.0, 0.0, true, 4, 10, PenaltyMode::None), 0.0);
    }

    #[test]
    fn penalty_modes_parse() {
        assert_eq!("adaptive".parse::<PenaltyMode>().unwrap(), PenaltyMode::Adaptive);
        assert_eq!("fixed(1)".parse::<PenaltyMode>().unwrap(), PenaltyMode::Fixed(1.0));
        assert_eq!("fixed:2.5".parse::<PenaltyMode>().unwrap(), PenaltyMode::Fixed(2.5));
        assert_eq!("none".parse::<PenaltyMode>().unwrap(), PenaltyMode::None);
        assert!("sometimes".parse::<PenaltyMode>().is_err());
        let back: PenaltyMode = PenaltyMode::Fixed(1.0).to_string().parse().unwrap();
        assert_eq!(back, PenaltyMode::Fixed(1.0));
    }

    #[test]
    fn gae_with_unit_lambda_is_return_minus_value() {
        let r = [-1.0, -2.0, -3.0];
        let v = [0.5, 0.25, -1.0];
        let (adv, targets) = gae(&r, &v, 1.0, 1.0);
        let returns = [-6.0, -5.0, -3.0];
        for i in 0..3 {
            assert!((adv[i] - (returns[i] - v[i])).abs() < 1e-12);
            assert!((targets[i] - returns[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_with_zero_lambda_is_one_step_td() {
        let r = [-1.0, -2.0];
        let v = [0.5, 0.25];
        let (adv, _) = gae(&r, &v, 1.0, 0.0);
        assert!((adv[0] - (-1.0 + 0.25 - 0.5)).abs() < 1e-12);
        assert!((adv[1] - (-2.0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { clip_ratio: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { discount: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { n: 5, ..Default::default() }.validate().is_err());
    }
}
