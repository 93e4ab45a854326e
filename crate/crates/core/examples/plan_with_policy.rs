//! Plans one instance with a policy checkpoint, under step-back.
//!
//! ```text
//! cargo run --release --example plan_with_policy -- runs/policy/policy
//! ```
//!
//! Without an argument an untrained policy is used, which still yields a
//! feasible plan thanks to the mask and step-back.

use coop_mtsp::bench::{run_method, sample_instance, BenchContext, Method};
use coop_mtsp::costmodel::CostOracle;
use coop_mtsp::graph::{ReturnMode, TaskStateGraph};
use coop_mtsp::policy::{Policy, PolicyConfig};

fn main() -> coop_mtsp::Result<()> {
    let policy = match std::env::args().nth(1) {
        Some(stem) => Policy::load(stem)?.0,
        None => Policy::new(PolicyConfig::default(), 0)?,
    };
    let oracle = CostOracle::default();
    let g = TaskStateGraph::from_instance(&sample_instance(10, 42)?, ReturnMode::Strict)?;
    let ctx = BenchContext { policy: Some(&policy), ..BenchContext::new(oracle, &oracle) };
    for method in [Method::Policy, Method::Greedy] {
        let plan = run_method(method, &g, &ctx)?;
        let steps: Vec<String> = plan.actions.iter().map(|a| a.to_string()).collect();
        println!("{method:>8}: cost {:.3} reverts {} [{}]", plan.cost, plan.reverts, steps.join(" "));
    }
    Ok(())
}
