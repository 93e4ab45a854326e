//! Instances, the task state graph and synchronized episode dynamics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoopError, Result};
use crate::geometry::{depot_pose, sub, wrap_angle, Pose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Arm1,
    Arm2,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Arm1, Arm::Arm2];

    pub fn index(self) -> usize {
        match self {
            Arm::Arm1 => 0,
            Arm::Arm2 => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Arm1 => Arm::Arm2,
            Arm::Arm2 => Arm::Arm1,
        }
    }
}

/// One arm's choice: a task index or the depot/idle action at index `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Task(usize),
    Return,
}

impl Action {
    pub fn index(self, n: usize) -> usize {
        match self {
            Action::Task(i) => i,
            Action::Return => n,
        }
    }

    pub fn from_index(index: usize, n: usize) -> Result<Self> {
        match index {
            i if i < n => Ok(Action::Task(i)),
            i if i == n => Ok(Action::Return),
            i => Err(CoopError::IndexOutOfRange { index: i, n }),
        }
    }

    pub fn task(self) -> Option<usize> {
        match self {
            Action::Task(i) => Some(i),
            Action::Return => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointAction {
    pub a1: Action,
    pub a2: Action,
}

impl JointAction {
    pub fn tasks(i: usize, j: usize) -> Self {
        Self { a1: Action::Task(i), a2: Action::Task(j) }
    }

    pub const RETURN: JointAction = JointAction { a1: Action::Return, a2: Action::Return };

    /// Row-major index in an `(n+1) x (n+1)` matrix.
    pub fn cell(self, n: usize) -> usize {
        self.a1.index(n) * (n + 1) + self.a2.index(n)
    }

    pub fn from_cell(cell: usize, n: usize) -> Result<Self> {
        let m = n + 1;
        if cell >= m * m {
            return Err(CoopError::IndexOutOfRange { index: cell, n });
        }
        Ok(Self { a1: Action::from_index(cell / m, n)?, a2: Action::from_index(cell % m, n)? })
    }

    pub fn get(self, arm: Arm) -> Action {
        match arm {
            Arm::Arm1 => self.a1,
            Arm::Arm2 => self.a2,
        }
    }

    pub fn swapped(self) -> Self {
        Self { a1: self.a2, a2: self.a1 }
    }
}

impl std::fmt::Display for JointAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = |a: Action| match a {
            Action::Task(i) => i.to_string(),
            Action::Return => "R".into(),
        };
        write!(f, "({}, {})", s(self.a1), s(self.a2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub pick: Pose,
    pub place: Pose,
}

/// A problem instance as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub n: usize,
    pub tasks: Vec<TaskSpec>,
    pub depots: [Pose; 2],
    pub seed: u64,
}

impl Instance {
    pub fn new(tasks: Vec<TaskSpec>, seed: u64) -> Self {
        Self { n: tasks.len(), tasks, depots: [depot_pose(0), depot_pose(1)], seed }
    }

    /// JSON text with floats rounded to 9 significant digits.
    pub fn to_json(&self) -> String {
        let mut rounded = self.clone();
        rounded.round_floats();
        serde_json::to_string_pretty(&rounded).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let inst: Instance = serde_json::from_str(text)?;
        if inst.n != inst.tasks.len() {
            return Err(CoopError::Format(format!("n = {} but {} tasks listed", inst.n, inst.tasks.len())));
        }
        Ok(inst)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rounds every float to 9 significant digits, the on-disk precision.
    pub fn round_floats(&mut self) {
        let fix = |p: &mut Pose| {
            p.position = p.position.map(round_sig9);
            p.orientation = p.orientation.map(|a| wrap_angle(round_sig9(a)));
        };
        for t in &mut self.tasks {
            fix(&mut t.pick);
            fix(&mut t.place);
        }
        self.depots.iter_mut().for_each(fix);
    }
}

pub(crate) fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

#[derive(Clone, Debug, PartialEq)]
pub struct RearrangeTask {
    pub id: usize,
    pub pick: Pose,
    pub place: Pose,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepotState {
    pub arm: Arm,
    pub initial: Pose,
    pub current: Pose,
}

/// Where an arm currently is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeRef {
    Task(usize),
    Depot(Arm),
}

/// How the action at index `n` is interpreted mid-episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// Index `n` only means "go home" once every task is done; `n` must be even.
    #[default]
    Strict,
    /// Odd `n` allowed: one arm may idle (zero-cost wait) while the last task runs.
    Idle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStateGraph {
    tasks: Vec<RearrangeTask>,
    depots: [DepotState; 2],
    agent_at: [NodeRef; 2],
    step_count: usize,
    mode: ReturnMode,
}

/// Builds the initial graph: all tasks undone, both arms at their depots.
pub fn build_state_graph(tasks: &[TaskSpec], depots: [Pose; 2], mode: ReturnMode) -> Result<TaskStateGraph> {
    let n = tasks.len();
    if n == 0 || (n % 2 == 1 && mode == ReturnMode::Strict) {
        return Err(CoopError::OddTaskCount(n));
    }
    for (i, t) in tasks.iter().enumerate() {
        for (what, p) in [("pick", &t.pick), ("place", &t.place)] {
            if !p.is_finite() || !p.is_on_table() {
                return Err(CoopError::PoseOutOfWorkspace(format!("task {i} {what} at {:?}", p.position)));
            }
        }
        if t.pick.position == t.place.position {
            return Err(CoopError::PoseOutOfWorkspace(format!("task {i} pick and place coincide")));
        }
    }
    if let Some(d) = depots.iter().find(|d| !d.is_finite()) {
        return Err(CoopError::PoseOutOfWorkspace(format!("depot at {:?}", d.position)));
    }
    Ok(TaskStateGraph {
        tasks: tasks
            .iter()
            .enumerate()
            .map(|(id, t)| RearrangeTask { id, pick: t.pick, place: t.place, done: false })
            .collect(),
        depots: [
            DepotState { arm: Arm::Arm1, initial: depots[0], current: depots[0] },
            DepotState { arm: Arm::Arm2, initial: depots[1], current: depots[1] },
        ],
        agent_at: [NodeRef::Depot(Arm::Arm1), NodeRef::Depot(Arm::Arm2)],
        step_count: 0,
        mode,
    })
}

impl TaskStateGraph {
    pub fn from_instance(inst: &Instance, mode: ReturnMode) -> Result<Self> {
        build_state_graph(&inst.tasks, inst.depots, mode)
    }

    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    pub fn tasks(&self) -> &[RearrangeTask] {
        &self.tasks
    }

    pub fn task(&self, i: usize) -> &RearrangeTask {
        &self.tasks[i]
    }

    pub fn depot(&self, arm: Arm) -> &DepotState {
        &self.depots[arm.index()]
    }

    pub fn agent_at(&self, arm: Arm) -> NodeRef {
        self.agent_at[arm.index()]
    }

    /// Current end-effector pose of `arm`.
    pub fn effector(&self, arm: Arm) -> Pose {
        self.depots[arm.index()].current
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn mode(&self) -> ReturnMode {
        self.mode
    }

    pub fn undone(&self) -> usize {
        self.tasks.iter().filter(|t| !t.done).count()
    }

    pub fn all_done(&self) -> bool {
        self.tasks.iter().all(|t| t.done)
    }

    pub fn is_done(&self, i: usize) -> bool {
        self.tasks[i].done
    }

    /// Stable 64-bit key of the done-set and arm locations.
    pub fn state_key(&self) -> u64 {
        let mut h = mix(self.tasks.len() as u64);
        for chunk in self.tasks.chunks(64) {
            let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, t)| acc | ((t.done as u64) << i));
            h = mix(h ^ bits);
        }
        for at in self.agent_at {
            let code = match at {
                NodeRef::Task(i) => i as u64 + 2,
                NodeRef::Depot(a) => a.index() as u64,
            };
            h = mix(h ^ code);
        }
        h
    }

    /// Translates every pose (tasks and depots) by `by`.
    pub fn translated(&self, by: [f64; 3]) -> Self {
        let mut g = self.clone();
        for t in &mut g.tasks {
            t.pick = t.pick.translated(by);
            t.place = t.place.translated(by);
        }
        for d in &mut g.depots {
            d.initial = d.initial.translated(by);
            d.current = d.current.translated(by);
        }
        g
    }
}

pub(crate) fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Cost and feasibility of one joint action at one state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellCost {
    pub c_mv: f64,
    pub c_tf: f64,
    pub feasible: bool,
}

impl CellCost {
    pub const INFEASIBLE: CellCost = CellCost { c_mv: 0.0, c_tf: 0.0, feasible: false };

    pub fn total(&self) -> f64 {
        self.c_mv + self.c_tf
    }
}

/// Applies a joint action, returning the successor graph.
pub fn apply_joint_action(graph: &TaskStateGraph, action: JointAction, cell: &CellCost) -> Result<TaskStateGraph> {
    let n = graph.n();
    for a in [action.a1, action.a2] {
        if let Action::Task(i) = a {
            if i >= n {
                return Err(CoopError::IndexOutOfRange { index: i, n });
            }
        }
    }
    if let (Action::Task(i), Action::Task(j)) = (action.a1, action.a2) {
        if i == j {
            return Err(CoopError::SameTaskAssigned(i));
        }
    }
    for a in [action.a1, action.a2] {
        if let Action::Task(i) = a {
            if graph.tasks[i].done {
                return Err(CoopError::TaskAlreadyDone(i));
            }
        }
    }
    if !cell.feasible {
        return Err(CoopError::InfeasibleAction(action.to_string()));
    }
    let mut next = graph.clone();
    let all_done = graph.all_done();
    for arm in Arm::BOTH {
        let k = arm.index();
        match action.get(arm) {
            Action::Task(i) => {
                next.tasks[i].done = true;
                next.depots[k].current = next.tasks[i].place;
                next.agent_at[k] = NodeRef::Task(i);
            }
            Action::Return if all_done => {
                next.depots[k].current = next.depots[k].initial;
                next.agent_at[k] = NodeRef::Depot(arm);
            }
            Action::Return => {}
        }
    }
    if action != JointAction::RETURN {
        next.step_count += 1;
    }
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatusKind {
    AllDone,
    Deadlock,
    Ongoing,
}

/// Classifies a state given its feasibility mask (row-major, `(n+1)^2`).
pub fn episode_status(graph: &TaskStateGraph, mask: &[bool]) -> StatusKind {
    if graph.all_done() {
        StatusKind::AllDone
    } else if mask.iter().any(|&m| m) {
        StatusKind::Ongoing
    } else {
        StatusKind::Deadlock
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EpisodeStatus {
    Success,
    Deadlock,
    BudgetExceeded,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub action: JointAction,
    pub c_mv: f64,
    pub c_tf: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub c_rt: f64,
    pub status: Option<EpisodeStatus>,
}

impl EpisodeLog {
    pub fn is_success(&self) -> bool {
        self.status == Some(EpisodeStatus::Success)
    }

    pub fn actions(&self) -> Vec<JointAction> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Sum of move, transfer and return costs of a finished log.
pub fn cumulative_cost(log: &EpisodeLog) -> Result<f64> {
    if log.status.is_none() {
        return Err(CoopError::IncompleteLog);
    }
    let steps: f64 = log.steps.iter().map(|s| s.c_mv + s.c_tf).sum();
    Ok(steps + log.c_rt)
}

/// Width of one row of [`NodeObservation`].
pub const NODE_FEATURES: usize = 34;
/// Columns `[0, ABSOLUTE_FEATURES)` do not depend on the observing agent.
pub const ABSOLUTE_FEATURES: usize = 19;

/// Per-node features for one agent. Rows are tasks `0..n`, then the depots of
/// arm 1 and arm 2. Each row holds
///
/// ```text
/// [pos_a(3) sincos_a(6) pos_b(3) sincos_b(6) done(1)]   absolute
/// [is_task is_own_depot is_other_depot
///  pos_a-ee(3) wrap(rpy_a-ee)(3) pos_b-ee(3) wrap(rpy_b-ee)(3)]   relative
/// ```
///
/// where `a`/`b` are pick/place for tasks and initial/current for depots.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeObservation {
    pub rows: usize,
    pub features: Vec<f64>,
}

impl NodeObservation {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * NODE_FEATURES..(i + 1) * NODE_FEATURES]
    }

    pub fn absolute(&self, i: usize) -> &[f64] {
        &self.row(i)[..ABSOLUTE_FEATURES]
    }

    pub fn relative(&self, i: usize) -> &[f64] {
        &self.row(i)[ABSOLUTE_FEATURES..]
    }
}

pub fn observation_features(graph: &TaskStateGraph, agent: Arm) -> NodeObservation {
    let ee = graph.effector(agent);
    let n = graph.n();
    let mut features = Vec::with_capacity((n + 2) * NODE_FEATURES);
    let mut push_node = |a: &Pose, b: &Pose, done: bool, kind: [f64; 3]| {
        for p in [a, b] {
            features.extend_from_slice(&p.position);
            for ang in p.orientation {
                features.push(ang.sin());
                features.push(ang.cos());
            }
        }
        features.push(done as u8 as f64);
        features.extend_from_slice(&kind);
        for p in [a, b] {
            features.extend_from_slice(&sub(p.position, ee.position));
            for k in 0..3 {
                features.push(wrap_angle(p.orientation[k] - ee.orientation[k]));
            }
        }
    };
    for t in &graph.tasks {
        push_node(&t.pick, &t.place, t.done, [1.0, 0.0, 0.0]);
    }
    for d in &graph.depots {
        let own = d.arm == agent;
        push_node(&d.initial, &d.current, false, [0.0, own as u8 as f64, (!own) as u8 as f64]);
    }
    NodeObservation { rows: n + 2, features }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tasks() -> Vec<TaskSpec> {
        vec![
            TaskSpec { pick: Pose::on_table(-0.4, -0.2, 0.0), place: Pose::on_table(-0.4, 0.2, 0.0) },
            TaskSpec { pick: Pose::on_table(0.4, -0.2, 0.0), place: Pose::on_table(0.4, 0.2, 0.0) },
        ]
    }

    fn depots() -> [Pose; 2] {
        [depot_pose(0), depot_pose(1)]
    }

    #[test]
    fn build_two_tasks() {
        let g = build_state_graph(&two_tasks(), depots(), ReturnMode::Strict).unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.agent_at(Arm::Arm1), NodeRef::Depot(Arm::Arm1));
        assert_eq!(g.agent_at(Arm::Arm2), NodeRef::Depot(Arm::Arm2));
        assert_eq!(g.step_count(), 0);
        assert!(g.tasks().iter().all(|t| !t.done));
    }

    #[test]
    fn empty_and_odd_rejected() {
        assert!(matches!(build_state_graph(&[], depots(), ReturnMode::Strict), Err(CoopError::OddTaskCount(0))));
        let one = &two_tasks()[..1];
        assert!(matches!(build_state_graph(one, depots(), ReturnMode::Strict), Err(CoopError::OddTaskCount(1))));
        assert!(build_state_graph(one, depots(), ReturnMode::Idle).is_ok());
    }

    #[test]
    fn off_table_rejected() {
        let mut t = two_tasks();
        t[0].pick.position[0] = 0.9;
        assert!(matches!(build_state_graph(&t, depots(), ReturnMode::Strict), Err(CoopError::PoseOutOfWorkspace(_))));
    }

    #[test]
    fn apply_marks_done_and_moves_arms() {
        let g = build_state_graph(&two_tasks(), depots(), ReturnMode::Strict).unwrap();
        let cell = CellCost { c_mv: 1.0, c_tf: 1.0, feasible: true };
        let g2 = apply_joint_action(&g, JointAction::tasks(0, 1), &cell).unwrap();
        assert!(g2.all_done());
        assert_eq!(g2.effector(Arm::Arm1), two_tasks()[0].place);
        assert_eq!(g2.effector(Arm::Arm2), two_tasks()[1].place);
        assert_eq!(g2.step_count(), 1);
        assert!(!g.is_done(0), "input graph untouched");
        let again = apply_joint_action(&g, JointAction::tasks(0, 1), &cell).unwrap();
        assert_eq!(g2, again);
    }

    #[test]
    fn apply_errors() {
        let g = build_state_graph(&two_tasks(), depots(), ReturnMode::Strict).unwrap();
        let ok = CellCost { c_mv: 1.0, c_tf: 1.0, feasible: true };
        assert!(matches!(apply_joint_action(&g, JointAction::tasks(1, 1), &ok), Err(CoopError::SameTaskAssigned(1))));
        assert!(matches!(
            apply_joint_action(&g, JointAction::tasks(0, 1), &CellCost::INFEASIBLE),
            Err(CoopError::InfeasibleAction(_))
        ));
        let done = apply_joint_action(&g, JointAction::tasks(0, 1), &ok).unwrap();
        assert!(matches!(apply_joint_action(&done, JointAction::tasks(0, 1), &ok), Err(CoopError::TaskAlreadyDone(0))));
    }

    #[test]
    fn status_classification() {
        let g = build_state_graph(&two_tasks(), depots(), ReturnMode::Strict).unwrap();
        assert_eq!(episode_status(&g, &[false; 9]), StatusKind::Deadlock);
        let mut m = [false; 9];
        m[1] = true;
        assert_eq!(episode_status(&g, &m), StatusKind::Ongoing);
        let ok = CellCost { c_mv: 1.0, c_tf: 1.0, feasible: true };
        let done = apply_joint_action(&g, JointAction::tasks(0, 1), &ok).unwrap();
        assert_eq!(episode_status(&done, &[false; 9]), StatusKind::AllDone);
    }

    #[test]
    fn cumulative_cost_arithmetic() {
        let empty = EpisodeLog { status: Some(EpisodeStatus::Success), ..Default::default() };
        assert_eq!(cumulative_cost(&empty).unwrap(), 0.0);
        let log = EpisodeLog {
            steps: vec![
                StepRecord { action: JointAction::tasks(0, 1), c_mv: 2.0, c_tf: 3.0 },
                StepRecord { action: JointAction::tasks(2, 3), c_mv: 1.0, c_tf: 1.5 },
            ],
            c_rt: 0.5,
            status: Some(EpisodeStatus::Success),
        };
        assert_eq!(cumulative_cost(&log).unwrap(), 8.0);
        assert!(matches!(cumulative_cost(&EpisodeLog::default()), Err(CoopError::IncompleteLog)));
    }

    #[test]
    fn self_relative_block_is_zero() {
        let g = build_state_graph(&two_tasks(), depots(), ReturnMode::Strict).unwrap();
        let obs = observation_features(&g, Arm::Arm1);
        let depot_row = obs.relative(2);
        assert!(depot_row[3..9].iter().all(|&v| v == 0.0));
        let o2 = observation_features(&g, Arm::Arm2);
        for i in 0..4 {
            assert_eq!(obs.absolute(i), o2.absolute(i));
        }
    }

    #[test]
    fn json_round_trip_is_exact_after_rounding() {
        let mut inst = Instance::new(two_tasks(), 3);
        inst.tasks[0].pick.orientation[2] = 1.234567890123;
        inst.round_floats();
        let back = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn joint_action_cells() {
        let n = 4;
        for c in 0..25 {
            assert_eq!(JointAction::from_cell(c, n).unwrap().cell(n), c);
        }
        assert_eq!(JointAction::RETURN.cell(n), 24);
        assert!(JointAction::from_cell(25, n).is_err());
    }
}
