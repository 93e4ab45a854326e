//! A short PPO run on n=6 with oracle matrices and a narrow network.
//! The default configuration trains at n=10 for 300 iterations.

use coop_mtsp::costmodel::CostOracle;
use coop_mtsp::policy::PolicyConfig;
use coop_mtsp::train::{read_report, train_policy, MatrixSourceKind, RewardConfig, TrainConfig};

fn main() -> coop_mtsp::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let config = TrainConfig {
        n: 6,
        iterations,
        episodes_per_iteration: 8,
        matrix_source: MatrixSourceKind::Oracle,
        policy: PolicyConfig { width: 32, heads: 4, ..PolicyConfig::default() },
        ..TrainConfig::default()
    };
    let oracle = CostOracle::default();
    let out = std::env::temp_dir().join("coop_mtsp_policy");
    let run = train_policy(&config, &RewardConfig::default(), &oracle, &oracle, &out, false, |r| {
        println!("iteration {:>3} cost {:.3} success {:.2} entropy {:.3}", r.iteration, r.mean_cost, r.success_rate, r.entropy)
    })?;
    assert_eq!(read_report(out.join("report.csv"))?.len(), run.report.len());
    println!("checkpoint in {}", out.display());
    Ok(())
}
