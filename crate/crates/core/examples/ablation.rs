//! The penalty axis at toy scale: three short trainings on n=4, each scored
//! on the same held-out set.

use coop_mtsp::bench::{generate_dataset, render_report, run_ablation, AblationAxis, AblationConfig, ReportFormat};
use coop_mtsp::config::PredictorSection;
use coop_mtsp::costmodel::CostOracle;
use coop_mtsp::policy::PolicyConfig;
use coop_mtsp::train::{MatrixSourceKind, RewardConfig, TrainConfig};

fn main() -> coop_mtsp::Result<()> {
    let oracle = CostOracle::default();
    let config = AblationConfig {
        train: TrainConfig {
            n: 4,
            iterations: 5,
            episodes_per_iteration: 6,
            matrix_source: MatrixSourceKind::Oracle,
            policy: PolicyConfig { width: 16, heads: 2, ..PolicyConfig::default() },
            ..TrainConfig::default()
        },
        reward: RewardConfig::default(),
        oracle,
        step_back: Some(50),
        predictor: PredictorSection::default(),
    };
    let out = std::env::temp_dir().join("coop_mtsp_ablation");
    let rows = run_ablation(AblationAxis::Penalty, &generate_dataset(4, 10, 9)?, &config, &oracle, &out, |line| eprintln!("{line}"))?;
    print!("{}", render_report(&rows, ReportFormat::Csv)?);
    Ok(())
}
