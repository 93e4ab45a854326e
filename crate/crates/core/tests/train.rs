mod common;

use common::{graph, ref_sequence_cost};
use coop_mtsp::costmodel::{build_cost_matrix, CostOracle};
use coop_mtsp::graph::Action;
use coop_mtsp::policy::{Policy, PolicyConfig, SelectMode};
use coop_mtsp::train::{
    gae, ppo_update, read_report, rollout_episode, train_policy, write_report, MatrixSourceKind, PenaltyMode,
    RewardConfig, TrainConfig,
};
use coop_nn::{Adam, Tape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> PolicyConfig {
    PolicyConfig { width: 16, heads: 2, node_layers: 1, coop_layers: 1, generator_layers: 1, ..PolicyConfig::default() }
}

fn tiny_run(iterations: usize) -> TrainConfig {
    TrainConfig {
        n: 4,
        iterations,
        episodes_per_iteration: 3,
        batch_size: 8,
        epochs_per_batch: 2,
        matrix_source: MatrixSourceKind::Oracle,
        policy: small(),
        seed: 3,
        ..TrainConfig::default()
    }
}

fn task_pairs(log: &coop_mtsp::graph::EpisodeLog) -> Option<Vec<(usize, usize)>> {
    log.steps
        .iter()
        .map(|s| match (s.action.a1, s.action.a2) {
            (Action::Task(i), Action::Task(j)) => Some((i, j)),
            _ => None,
        })
        .collect()
}

#[test]
fn successful_return_is_minus_half_the_cost() {
    let policy = Policy::new(small(), 1).unwrap();
    let o = CostOracle::default();
    let mut successes = 0;
    for seed in 0..20 {
        let g = graph(4, 500 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let with = RewardConfig { penalty: PenaltyMode::Adaptive, include_return_cost: true, ..RewardConfig::default() };
        let ep = rollout_episode(&policy, &g, &o, &o, &with, SelectMode::Sample, &mut rng).unwrap();
        if !ep.log.is_success() {
            continue;
        }
        successes += 1;
        let pairs = task_pairs(&ep.log).expect("strict mode uses task pairs only");
        let c = ref_sequence_cost(&g, &pairs, &o).unwrap();
        assert!((ep.total_return() + c / 2.0).abs() < 1e-9, "{} vs {}", ep.total_return(), -c / 2.0);
        assert!(ep.transitions.last().unwrap().done);
        assert!(ep.transitions.iter().rev().skip(1).all(|t| !t.done));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let without = RewardConfig { include_return_cost: false, ..with };
        let ep2 = rollout_episode(&policy, &g, &o, &o, &without, SelectMode::Sample, &mut rng).unwrap();
        assert!((ep2.total_return() + (c - ep.log.c_rt) / 2.0).abs() < 1e-9);
    }
    assert!(successes >= 5, "only {successes} successful rollouts");
}

#[test]
fn failed_execution_ends_with_the_penalty() {
    let policy = Policy::new(small(), 2).unwrap();
    let always_fails = CostOracle::default().with_failures(1.0, 0);
    let clean = CostOracle::default();
    let g = graph(6, 4);
    for (mode, penalty) in [(PenaltyMode::Adaptive, 1.0), (PenaltyMode::Fixed(1.0), 1.0), (PenaltyMode::None, 0.0)] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = RewardConfig { penalty: mode, include_return_cost: true, penalty_scale: 2.0 };
        let ep = rollout_episode(&policy, &g, &clean, &always_fails, &r, SelectMode::Sample, &mut rng).unwrap();
        assert_eq!(ep.transitions.len(), 1);
        assert_eq!(ep.undone, 6);
        assert!(!ep.log.is_success());
        let t = &ep.transitions[0];
        let cell = build_cost_matrix(&g, &clean).cells()[t.cell];
        assert!((t.reward - (-(cell.c_mv + cell.c_tf) / 2.0 - 2.0 * penalty)).abs() < 1e-12, "{mode}");
    }
}

#[test]
fn stored_log_probs_match_a_replay() {
    let policy = Policy::new(small(), 3).unwrap();
    let o = CostOracle::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ep = rollout_episode(&policy, &graph(6, 9), &o, &o, &RewardConfig::default(), SelectMode::Sample, &mut rng)
        .unwrap();
    assert!(!ep.transitions.is_empty());
    for tr in &ep.transitions {
        let mut t = Tape::new(policy.store());
        let out = policy.forward(&mut t, &tr.observation).unwrap();
        assert_eq!(t.value(out.log_map)[tr.cell], tr.log_prob);
        assert!(tr.observation.mask[tr.cell]);
        assert_eq!(t.scalar(out.value), tr.value);
    }
}

#[test]
fn zero_advantage_at_the_value_target_leaves_parameters_alone() {
    let mut policy = Policy::new(small(), 4).unwrap();
    let before = policy.store().clone();
    let o = CostOracle::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ep = rollout_episode(&policy, &graph(4, 2), &o, &o, &RewardConfig::default(), SelectMode::Sample, &mut rng)
        .unwrap();
    let batch: Vec<_> = ep.transitions.into_iter().map(|t| {
        let v = t.value;
        (t, 0.0, v)
    }).collect();
    let config = TrainConfig { entropy_coef: 0.0, ..tiny_run(1) };
    let mut opt = Adam::new(policy.store(), 1e-3);
    let stats = ppo_update(&mut policy, &mut opt, &batch, &config, &mut rng).unwrap();
    assert_eq!(stats.value_loss, 0.0);
    assert_eq!(stats.clip_fraction, 0.0);
    for ((_, _, a), (_, _, b)) in before.iter().zip(policy.store().iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn training_is_deterministic_and_resumable() {
    let o = CostOracle::default();
    let r = RewardConfig::default();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = train_policy(&tiny_run(3), &r, &o, &o, a.path(), false, |_| {}).unwrap();
    let again = train_policy(&tiny_run(3), &r, &o, &o, b.path(), false, |_| {}).unwrap();
    assert_eq!(full.report, again.report);
    train_policy(&tiny_run(2), &r, &o, &o, c.path(), false, |_| {}).unwrap();
    let resumed = train_policy(&tiny_run(3), &r, &o, &o, c.path(), true, |_| {}).unwrap();
    assert_eq!(resumed.report, full.report);
    for ((_, _, x), (_, _, y)) in full.policy.store().iter().zip(resumed.policy.store().iter()) {
        assert_eq!(x.data(), y.data());
    }
    let on_disk = read_report(a.path().join("report.csv")).unwrap();
    assert_eq!(on_disk.len(), 3);
    assert!(a.path().join("policy.ckpt").exists() && a.path().join("optimizer.ckpt").exists());
}

#[test]
fn report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = CostOracle::default();
    let run = train_policy(&tiny_run(2), &RewardConfig::default(), &o, &o, dir.path(), false, |_| {}).unwrap();
    let path = dir.path().join("copy.csv");
    write_report(&path, &run.report).unwrap();
    let back = read_report(&path).unwrap();
    assert_eq!(back.len(), run.report.len());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("iteration,mean_cost,success_rate,policy_loss,value_loss,entropy,clip_fraction"));
}

/// Mean cost of successful sampled episodes and the success rate.
fn sampled_cost(policy: &Policy, n: usize, o: &CostOracle) -> (f64, f64) {
    let (mut sum, mut ok) = (0.0, 0);
    let count = 48;
    for k in 0..count {
        let g = graph(n, 40_000 + k);
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let ep = rollout_episode(policy, &g, o, o, &RewardConfig::default(), SelectMode::Sample, &mut rng).unwrap();
        if ep.log.is_success() {
            ok += 1;
            sum += coop_mtsp::graph::cumulative_cost(&ep.log).unwrap();
        }
    }
    (sum / ok.max(1) as f64, ok as f64 / count as f64)
}

#[test]
fn fifty_iterations_cut_episode_cost_by_a_tenth() {
    let o = CostOracle::default();
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig { n: 6, iterations: 50, matrix_source: MatrixSourceKind::Oracle, ..TrainConfig::default() };
    let before = sampled_cost(&Policy::new(config.policy.clone(), config.seed).unwrap(), 6, &o);
    let run = train_policy(&config, &RewardConfig::default(), &o, &o, dir.path(), false, |_| {}).unwrap();
    let after = sampled_cost(&run.policy, 6, &o);
    assert!(after.0 <= 0.9 * before.0, "mean cost {:.3} -> {:.3}", before.0, after.0);
    assert!(after.1 >= before.1 - 0.05, "success {:.2} -> {:.2}", before.1, after.1);
    assert!(run.report.iter().all(|r| r.policy_loss.is_finite() && r.value_loss.is_finite()));
}

proptest! {
    #[test]
    fn unit_lambda_targets_are_returns_to_go(
        rewards in proptest::collection::vec(-5.0f64..0.0, 1..12),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = rewards.iter().map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
        let (adv, targets) = gae(&rewards, &values, 1.0, 1.0);
        let mut to_go = 0.0;
        for i in (0..rewards.len()).rev() {
            to_go += rewards[i];
            prop_assert!((targets[i] - to_go).abs() < 1e-9);
            prop_assert!((adv[i] - (to_go - values[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_lambda_advantage_is_the_td_error(
        rewards in proptest::collection::vec(-5.0f64..0.0, 1..12),
        v0 in -3.0f64..3.0,
    ) {
        let values: Vec<f64> = (0..rewards.len()).map(|i| v0 + i as f64 * 0.1).collect();
        let (adv, _) = gae(&rewards, &values, 1.0, 0.0);
        for i in 0..rewards.len() {
            let next = values.get(i + 1).copied().unwrap_or(0.0);
            prop_assert!((adv[i] - (rewards[i] + next - values[i])).abs() < 1e-12);
        }
    }
}
