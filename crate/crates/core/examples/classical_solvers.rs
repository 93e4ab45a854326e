//! Exhaustive search, greedy and perfect matching on the same n=6 instances.

use coop_mtsp::bench::generate_dataset;
use coop_mtsp::costmodel::CostOracle;
use coop_mtsp::graph::{ReturnMode, TaskStateGraph};
use coop_mtsp::solvers::{exhaustive_search, greedy_plan, perfect_matching_plan, ExhaustiveConfig, DEFAULT_STEP_BACK_BUDGET};

fn main() -> coop_mtsp::Result<()> {
    let oracle = CostOracle::default();
    println!("{:>4} {:>10} {:>10} {:>10}", "#", "exhaustive", "greedy", "matching");
    for (k, inst) in generate_dataset(6, 5, 11)?.instances.iter().enumerate() {
        let g = TaskStateGraph::from_instance(inst, ReturnMode::Strict)?;
        let best = exhaustive_search(&g, &oracle, ExhaustiveConfig::default())?;
        let greedy = greedy_plan(&g, &oracle, &oracle, Some(DEFAULT_STEP_BACK_BUDGET))?;
        let matching = perfect_matching_plan(&g, &oracle)?;
        println!("{k:>4} {:>10.3} {:>10.3} {:>10.3}", best.cost, greedy.cost, matching.cost);
    }

    let g = TaskStateGraph::from_instance(&generate_dataset(6, 1, 11)?.instances[0], ReturnMode::Strict)?;
    let best = exhaustive_search(&g, &oracle, ExhaustiveConfig::default())?;
    println!("optimal sequence of the first instance:");
    for (a, step) in best.actions.iter().zip(&best.log.steps) {
        println!("  {a}  move {:.3} s  transfer {:.3} s", step.c_mv, step.c_tf);
    }
    println!("  return {:.3} s", best.log.c_rt);
    Ok(())
}
