//! Prints the cooperative cost matrix of a fresh instance.
//! Rows are arm 1's choice, columns arm 2's; `--` marks infeasible cells.

use coop_mtsp::bench::sample_instance;
use coop_mtsp::costmodel::{build_cost_matrix, CostOracle};
use coop_mtsp::graph::{ReturnMode, TaskStateGraph};

fn main() -> coop_mtsp::Result<()> {
    let g = TaskStateGraph::from_instance(&sample_instance(4, 3)?, ReturnMode::Strict)?;
    let oracle = CostOracle::default();
    let m = build_cost_matrix(&g, &oracle);

    print!("      ");
    for j in 0..m.side() {
        print!("{j:>7}");
    }
    println!();
    for i in 0..m.side() {
        print!("{i:>6}");
        for j in 0..m.side() {
            let c = m.get(i, j);
            if c.feasible {
                print!("{:>7.2}", c.c_mv + c.c_tf);
            } else {
                print!("{:>7}", "--");
            }
        }
        println!();
    }
    println!("{} of {} cells feasible", m.feasible_count(), m.cells().len());

    let euclid = build_cost_matrix(&g, &oracle.with_variant(coop_mtsp::costmodel::OracleVariant::Euclidean));
    let c = (0..m.cells().len()).find(|&c| m.cells()[c].feasible).unwrap();
    println!("cell {c}: kinematic {:.3} s, euclidean {:.3} s", m.cells()[c].c_mv + m.cells()[c].c_tf, euclid.cells()[c].c_mv + euclid.cells()[c].c_tf);
    Ok(())
}
