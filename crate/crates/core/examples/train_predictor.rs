//! Trains a small cost predictor and compares one predicted matrix with the
//! oracle's. The full-size model uses `PredictorArch::default()` and about
//! 200k samples.

use coop_mtsp::bench::sample_instance;
use coop_mtsp::costmodel::{build_cost_matrix, CostOracle, MatrixSource};
use coop_mtsp::graph::{ReturnMode, TaskStateGraph};
use coop_mtsp::predictor::{sample_predictor_dataset, train_predictor, PredictorArch, PredictorTrainConfig};

fn main() -> coop_mtsp::Result<()> {
    let oracle = CostOracle::default();
    let samples = sample_predictor_dataset(20_000, &oracle, 1)?;
    let config = PredictorTrainConfig { epochs: 8, split: 0.1, ..Default::default() };
    let run = train_predictor(&samples, PredictorArch::small(), oracle, &config, |r| {
        println!(
            "epoch {:>2} loss {:.4} accuracy {:.4} relative error {:.4}",
            r.epoch, r.train_loss, r.held_out.mask_accuracy, r.held_out.mean_relative_time_error
        )
    })?;

    let g = TaskStateGraph::from_instance(&sample_instance(8, 2)?, ReturnMode::Strict)?;
    let (truth, guess) = (build_cost_matrix(&g, &oracle), run.model.cost_matrix(&g)?);
    let agree = truth.cells().iter().zip(guess.cells()).filter(|(a, b)| a.feasible == b.feasible).count();
    println!("mask agreement on one n=8 state: {agree}/{}", truth.cells().len());
    Ok(())
}
