use std::collections::HashSet;
use std::time::Instant;

use super::Plan;
use crate::costmodel::{pair_cost, return_cost, CostMatrix, CostOracle, MatrixSource};
use crate::error::Result;
use crate::graph::{apply_joint_action, EpisodeLog, EpisodeStatus, JointAction, StepRecord, TaskStateGraph};

pub const DEFAULT_STEP_BACK_BUDGET: usize = 50;

/// A planner that picks one joint action per state.
pub trait StepPolicy {
    /// Chooses among cells with `allowed[cell] == true`; `None` means the
    /// planner sees nothing it can do.
    fn choose(&mut self, graph: &TaskStateGraph, matrix: &CostMatrix, allowed: &[bool]) -> Result<Option<JointAction>>;
}

struct Frame {
    graph: TaskStateGraph,
    matrix: Option<CostMatrix>,
    banned: HashSet<JointAction>,
    chosen: Option<(JointAction, StepRecord)>,
}

/// Stack of visited states with the actions banned at each.
pub struct StepBackState {
    frames: Vec<Frame>,
    pub budget: usize,
    pub reverts: usize,
}

impl StepBackState {
    pub fn new(start: TaskStateGraph, budget: usize) -> Self {
        Self { frames: vec![Frame { graph: start, matrix: None, banned: HashSet::new(), chosen: None }], budget, reverts: 0 }
    }

    pub fn current(&self) -> &TaskStateGraph {
        &self.frames.last().expect("non-empty stack").graph
    }

    pub fn depth(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn banned(&self) -> &HashSet<JointAction> {
        &self.frames.last().expect("non-empty stack").banned
    }

    /// Bans `action` at the current state.
    fn ban_here(&mut self, action: JointAction) {
        let inserted = self.frames.last_mut().expect("non-empty stack").banned.insert(action);
        debug_assert!(inserted, "ban sets grow strictly");
        self.reverts += 1;
    }

    /// Pops the current state and bans the action that led to it. Returns
    /// false at the root.
    fn pop(&mut self) -> bool {
        if self.frames.len() == 1 {
            return false;
        }
        self.frames.pop();
        let parent = self.frames.last_mut().expect("parent");
        let (a, _) = parent.chosen.take().expect("parent chose an action");
        parent.banned.insert(a);
        self.reverts += 1;
        true
    }

    fn exhausted(&self) -> bool {
        self.reverts > self.budget
    }

    fn records(&self) -> Vec<StepRecord> {
        self.frames.iter().filter_map(|f| f.chosen.map(|(_, r)| r)).collect()
    }
}

/// Runs `policy` step by step. Execution is checked against `oracle` (true
/// feasibility plus injected failures). With `step_back` set to a budget,
/// failures and deadlocks revert to the prior state and ban the culprit;
/// without it the first failure ends the episode.
pub fn run_planner(
    start: &TaskStateGraph,
    policy: &mut dyn StepPolicy,
    source: &dyn MatrixSource,
    oracle: &CostOracle,
    step_back: Option<usize>,
) -> Result<Plan> {
    let t0 = Instant::now();
    let mut st = StepBackState::new(start.clone(), step_back.unwrap_or(0));
    let status = loop {
        if st.current().all_done() {
            break EpisodeStatus::Success;
        }
        let frame = st.frames.last_mut().expect("non-empty stack");
        if frame.matrix.is_none() {
            frame.matrix = Some(source.cost_matrix(&frame.graph)?);
        }
        let matrix = frame.matrix.as_ref().expect("cached");
        let n = matrix.n();
        let mut allowed = matrix.mask();
        for b in &frame.banned {
            allowed[b.cell(n)] = false;
        }
        let choice = if allowed.iter().any(|&a| a) { policy.choose(&frame.graph, matrix, &allowed)? } else { None };
        match choice {
            None => {
                if step_back.is_none() || !st.pop() {
                    break EpisodeStatus::Deadlock;
                }
            }
            Some(a) => {
                let real = pair_cost(&frame.graph, a.a1, a.a2, oracle)?;
                if !real.feasible || oracle.execution_fails(&frame.graph, a) {
                    if step_back.is_none() {
                        break EpisodeStatus::Deadlock;
                    }
                    st.ban_here(a);
                } else {
                    let next = apply_joint_action(&frame.graph, a, &real)?;
                    frame.chosen = Some((a, StepRecord { action: a, c_mv: real.c_mv, c_tf: real.c_tf }));
                    st.frames.push(Frame { graph: next, matrix: None, banned: HashSet::new(), chosen: None });
                }
            }
        }
        if st.exhausted() {
            break EpisodeStatus::BudgetExceeded;
        }
    };
    let mut log = EpisodeLog { steps: st.records(), c_rt: 0.0, status: Some(status) };
    if status == EpisodeStatus::Success {
        log.c_rt = return_cost(st.current(), oracle)?;
    }
    Ok(Plan::from_log(log, t0.elapsed().as_secs_f64(), st.reverts))
}

/// [`run_planner`] with step-back enabled.
pub fn step_back_replan(
    start: &TaskStateGraph,
    policy: &mut dyn StepPolicy,
    source: &dyn MatrixSource,
    oracle: &CostOracle,
    budget: usize,
) -> Result<Plan> {
    run_planner(start, policy, source, oracle, Some(budget))
}
