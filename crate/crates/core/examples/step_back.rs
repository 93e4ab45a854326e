//! Injects execution failures and compares greedy with and without step-back.

use coop_mtsp::bench::generate_dataset;
use coop_mtsp::costmodel::CostOracle;
use coop_mtsp::graph::{ReturnMode, TaskStateGraph};
use coop_mtsp::solvers::{greedy_plan, DEFAULT_STEP_BACK_BUDGET};

fn main() -> coop_mtsp::Result<()> {
    let oracle = CostOracle::default().with_failures(0.1, 1);
    let data = generate_dataset(10, 100, 3)?;
    let (mut with, mut without, mut reverts) = (0, 0, 0);
    for inst in &data.instances {
        let g = TaskStateGraph::from_instance(inst, ReturnMode::Strict)?;
        let a = greedy_plan(&g, &oracle, &oracle, Some(DEFAULT_STEP_BACK_BUDGET))?;
        let b = greedy_plan(&g, &oracle, &oracle, None)?;
        with += a.feasible as usize;
        without += b.feasible as usize;
        reverts += a.reverts;
    }
    println!("p_fail 0.1, {} instances of n=10", data.count());
    println!("greedy + step-back: {with} solved, {reverts} reverts in total");
    println!("greedy alone:       {without} solved");
    Ok(())
}
