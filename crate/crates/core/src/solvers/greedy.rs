use super::stepback::{run_planner, StepPolicy};
use super::Plan;
use crate::costmodel::{CostMatrix, CostOracle, MatrixSource};
use crate::error::Result;
use crate::graph::{JointAction, TaskStateGraph};

/// Picks the allowed cell with the smallest `c_mv + c_tf`, lowest row-major
/// index on ties.
#[derive(Clone, Copy, Debug, Default)]
pub struct Greedy;

impl StepPolicy for Greedy {
    fn choose(&mut self, _graph: &TaskStateGraph, matrix: &CostMatrix, allowed: &[bool]) -> Result<Option<JointAction>> {
        let mut best: Option<(usize, f64)> = None;
        for (c, cell) in matrix.cells().iter().enumerate() {
            if !allowed[c] {
                continue;
            }
            let v = cell.total();
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((c, v));
            }
        }
        best.map(|(c, _)| JointAction::from_cell(c, matrix.n())).transpose()
    }
}

pub fn greedy_plan(
    start: &TaskStateGraph,
    source: &dyn MatrixSource,
    oracle: &CostOracle,
    step_back: Option<usize>,
) -> Result<Plan> {
    run_planner(start, &mut Greedy, source, oracle, step_back)
}
