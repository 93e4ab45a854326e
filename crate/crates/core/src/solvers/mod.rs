//! Baseline planners and the step-back replanning wrapper.

mod exhaustive;
mod greedy;
mod matching;
mod stepback;

pub use exhaustive::{exhaustive_search, ExhaustiveConfig};
pub use greedy::{greedy_plan, Greedy};
pub use matching::{min_weight_perfect_matching, perfect_matching_plan};
pub use stepback::{run_planner, step_back_replan, StepBackState, StepPolicy, DEFAULT_STEP_BACK_BUDGET};

use crate::costmodel::{pair_cost, return_cost, CostOracle};
use crate::error::{CoopError, Result};
use crate::graph::{apply_joint_action, EpisodeLog, EpisodeStatus, JointAction, StepRecord, TaskStateGraph};

/// A complete action sequence with its oracle cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub actions: Vec<JointAction>,
    /// Cumulative cost under the oracle; infinite when `feasible` is false.
    pub cost: f64,
    pub feasible: bool,
    /// Wall-clock seconds spent planning.
    pub planning_time: f64,
    pub log: EpisodeLog,
    /// Number of step-back reverts used.
    pub reverts: usize,
}

impl Plan {
    pub(crate) fn from_log(log: EpisodeLog, planning_time: f64, reverts: usize) -> Self {
        let feasible = log.is_success();
        let cost = if feasible { crate::graph::cumulative_cost(&log).expect("complete log") } else { f64::INFINITY };
        Self { actions: log.actions(), cost, feasible, planning_time, log, reverts }
    }

    pub(crate) fn infeasible(planning_time: f64) -> Self {
        let log = EpisodeLog { status: Some(EpisodeStatus::Deadlock), ..Default::default() };
        Self::from_log(log, planning_time, 0)
    }
}

/// Replays `actions` from `start` under the oracle, failing on any
/// infeasible step. The log is successful only if every task ends done.
pub fn simulate(start: &TaskStateGraph, actions: &[JointAction], oracle: &CostOracle) -> Result<EpisodeLog> {
    let mut g = start.clone();
    let mut log = EpisodeLog::default();
    for &a in actions {
        let cell = pair_cost(&g, a.a1, a.a2, oracle)?;
        if !cell.feasible {
            return Err(CoopError::InfeasibleAction(a.to_string()));
        }
        g = apply_joint_action(&g, a, &cell)?;
        log.steps.push(StepRecord { action: a, c_mv: cell.c_mv, c_tf: cell.c_tf });
    }
    if g.all_done() {
        log.c_rt = return_cost(&g, oracle)?;
        log.status = Some(EpisodeStatus::Success);
    } else {
        log.status = Some(EpisodeStatus::Deadlock);
    }
    Ok(log)
}
