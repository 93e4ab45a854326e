//! Synthetic cooperative cost oracles and the cooperative cost matrix.
//!
//! A leg from pose `a` to pose `b` takes `|dp| / v + angdist / omega` seconds.
//! Both arms move simultaneously, so a phase lasts as long as the slower arm,
//! stretched by `1 + beta * overlap` where `overlap = max(0, 1 - d_sep / d0)`
//! and `d_sep` is the distance between the two arms' straight-line corridors.

use serde::{Deserialize, Serialize};

use crate::error::{CoopError, Result};
use crate::geometry::{angular_distance, distance, segment_distance, synchronized_clearance, Pose, OBJECT_EDGE};
use crate::graph::{mix, Action, Arm, CellCost, JointAction, TaskStateGraph};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleVariant {
    /// Translation plus orientation time, with corridor interference.
    #[default]
    Kinematic,
    /// Translation time only, no interference.
    Euclidean,
    /// Translation time only, with corridor interference.
    EuclideanOverlap,
}

impl std::str::FromStr for OracleVariant {
    type Err = CoopError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kinematic" => Ok(Self::Kinematic),
            "euclidean" => Ok(Self::Euclidean),
            "euclidean_overlap" => Ok(Self::EuclideanOverlap),
            other => Err(CoopError::InvalidConfig(format!("unknown oracle variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicParams {
    /// Linear speed, m/s.
    pub v: f64,
    /// Angular speed, rad/s.
    pub omega: f64,
    /// Interference gain.
    pub beta: f64,
    /// Interference range, m.
    pub d0: f64,
    /// Minimum distance between simultaneous picks (or places), m.
    pub d_safe: f64,
    /// Minimum corridor separation, m.
    pub d_col: f64,
}

impl Default for KinematicParams {
    fn default() -> Self {
        Self { v: 0.5, omega: std::f64::consts::PI, beta: 0.5, d0: 0.3, d_safe: 0.1, d_col: 0.05 }
    }
}

impl KinematicParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.v, self.omega, self.beta, self.d0, self.d_safe, self.d_col];
        if all.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(CoopError::InvalidConfig(format!("kinematic parameters must be positive: {self:?}")));
        }
        if !(self.d_col < self.d_safe && self.d_safe < self.d0) {
            return Err(CoopError::InvalidConfig("need d_col < d_safe < d0".into()));
        }
        Ok(())
    }
}

/// Single-arm leg time under the kinematic model.
pub fn transit_time(a: &Pose, b: &Pose, params: &KinematicParams) -> f64 {
    distance(a.position, b.position) / params.v + angular_distance(a.orientation, b.orientation) / params.omega
}

/// Interference of two straight-line corridors, in `[0, 1]`.
pub fn corridor_overlap(seg1: ([f64; 3], [f64; 3]), seg2: ([f64; 3], [f64; 3]), params: &KinematicParams) -> f64 {
    overlap_at(segment_distance(seg1.0, seg1.1, seg2.0, seg2.1), params.d0)
}

fn overlap_at(d_sep: f64, d0: f64) -> f64 {
    (1.0 - d_sep / d0).max(0.0)
}

/// Everything the oracle needs to price one joint task assignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairQuery {
    pub arm1_current: Pose,
    pub arm2_current: Pose,
    pub arm1_pick: Pose,
    pub arm1_place: Pose,
    pub arm2_pick: Pose,
    pub arm2_place: Pose,
    /// Object bounding box, m.
    pub bbox: [f64; 3],
}

impl PairQuery {
    pub fn from_graph(graph: &TaskStateGraph, i: usize, j: usize) -> Self {
        let (t1, t2) = (graph.task(i), graph.task(j));
        Self {
            arm1_current: graph.effector(Arm::Arm1),
            arm2_current: graph.effector(Arm::Arm2),
            arm1_pick: t1.pick,
            arm1_place: t1.place,
            arm2_pick: t2.pick,
            arm2_place: t2.place,
            bbox: [OBJECT_EDGE; 3],
        }
    }
}

/// Oracle evaluation of a query, before structural rules are applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairEvaluation {
    pub c_mv: f64,
    pub c_tf: f64,
    pub d_sep_mv: f64,
    pub d_sep_tf: f64,
    /// Closest approach of the two end effectors while both move.
    pub clearance_mv: f64,
    pub clearance_tf: f64,
    pub transit_ok: bool,
    pub transfer_ok: bool,
}

impl PairEvaluation {
    pub fn feasible(&self) -> bool {
        self.transit_ok && self.transfer_ok
    }

    pub fn cell(&self) -> CellCost {
        if self.feasible() {
            CellCost { c_mv: self.c_mv, c_tf: self.c_tf, feasible: true }
        } else {
            CellCost::INFEASIBLE
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostOracle {
    pub variant: OracleVariant,
    pub params: KinematicParams,
    /// Probability that executing a feasible action is reported as failed.
    pub p_fail: f64,
    pub seed: u64,
}

impl Default for CostOracle {
    fn default() -> Self {
        Self::new(OracleVariant::Kinematic, KinematicParams::default())
    }
}

impl CostOracle {
    pub fn new(variant: OracleVariant, params: KinematicParams) -> Self {
        Self { variant, params, p_fail: 0.0, seed: 0 }
    }

    pub fn with_failures(mut self, p_fail: f64, seed: u64) -> Self {
        self.p_fail = p_fail;
        self.seed = seed;
        self
    }

    /// Same geometry rules, different cost variant.
    pub fn with_variant(mut self, variant: OracleVariant) -> Self {
        self.variant = variant;
        self
    }

    fn effective_beta(&self) -> f64 {
        match self.variant {
            OracleVariant::Euclidean => 0.0,
            _ => self.params.beta,
        }
    }

    pub fn leg_time(&self, a: &Pose, b: &Pose) -> f64 {
        match self.variant {
            OracleVariant::Kinematic => transit_time(a, b, &self.params),
            _ => distance(a.position, b.position) / self.params.v,
        }
    }

    /// Duration of a synchronized phase and the corridor separation.
    pub fn phase(&self, leg1: (&Pose, &Pose), leg2: (&Pose, &Pose)) -> (f64, f64) {
        let t = self.leg_time(leg1.0, leg1.1).max(self.leg_time(leg2.0, leg2.1));
        let d = segment_distance(leg1.0.position, leg1.1.position, leg2.0.position, leg2.1.position);
        (t * (1.0 + self.effective_beta() * overlap_at(d, self.params.d0)), d)
    }

    pub fn evaluate_pair(&self, q: &PairQuery) -> PairEvaluation {
        let (c_mv, d_sep_mv) = self.phase((&q.arm1_current, &q.arm1_pick), (&q.arm2_current, &q.arm2_pick));
        let (c_tf, d_sep_tf) = self.phase((&q.arm1_pick, &q.arm1_place), (&q.arm2_pick, &q.arm2_place));
        let p = &self.params;
        let clearance_mv = synchronized_clearance(
            q.arm1_current.position,
            q.arm1_pick.position,
            q.arm2_current.position,
            q.arm2_pick.position,
        );
        let clearance_tf =
            synchronized_clearance(q.arm1_pick.position, q.arm1_place.position, q.arm2_pick.position, q.arm2_place.position);
        PairEvaluation {
            c_mv,
            c_tf,
            d_sep_mv,
            d_sep_tf,
            clearance_mv,
            clearance_tf,
            transit_ok: distance(q.arm1_pick.position, q.arm2_pick.position) >= p.d_safe && clearance_mv >= p.d_col,
            transfer_ok: distance(q.arm1_place.position, q.arm2_place.position) >= p.d_safe && clearance_tf >= p.d_col,
        }
    }

    /// One arm works on `task` while the other holds still (idle mode).
    fn evaluate_single(&self, graph: &TaskStateGraph, worker: Arm, task: usize) -> CellCost {
        let ee = graph.effector(worker);
        let still = graph.effector(worker.other());
        let t = graph.task(task);
        let (c_mv, d_mv) = self.phase((&ee, &t.pick), (&still, &still));
        let (c_tf, d_tf) = self.phase((&t.pick, &t.place), (&still, &still));
        if d_mv < self.params.d_col || d_tf < self.params.d_col {
            CellCost::INFEASIBLE
        } else {
            CellCost { c_mv, c_tf, feasible: true }
        }
    }

    /// Deterministic failure injection keyed on the state and the action.
    pub fn execution_fails(&self, graph: &TaskStateGraph, action: JointAction) -> bool {
        if self.p_fail <= 0.0 {
            return false;
        }
        let h = mix(self.seed ^ mix(graph.state_key() ^ mix(action.cell(graph.n()) as u64 + 1)));
        ((h >> 11) as f64 / (1u64 << 53) as f64) < self.p_fail
    }
}

/// Structural rules that no cost source may override: same task, done tasks,
/// and the meaning of the return/idle index. Returns `None` when the cell is
/// a plain pair of distinct undone tasks that needs pricing.
fn structural(graph: &TaskStateGraph, a1: Action, a2: Action) -> Result<Option<Structural>> {
    let n = graph.n();
    for a in [a1, a2] {
        if let Action::Task(i) = a {
            if i >= n {
                return Err(CoopError::IndexOutOfRange { index: i, n });
            }
        }
    }
    let undone = |a: Action| a.task().is_none_or(|i| !graph.is_done(i));
    if !undone(a1) || !undone(a2) {
        return Ok(Some(Structural::Infeasible));
    }
    Ok(Some(match (a1, a2) {
        (Action::Task(i), Action::Task(j)) if i == j => Structural::Infeasible,
        (Action::Task(_), Action::Task(_)) => return Ok(None),
        (Action::Return, Action::Return) if graph.all_done() => Structural::Return,
        (Action::Return, Action::Return) => Structural::Infeasible,
        (Action::Task(i), Action::Return) | (Action::Return, Action::Task(i)) => {
            if graph.mode() == crate::graph::ReturnMode::Idle && graph.undone() == 1 {
                let worker = if a1 == Action::Return { Arm::Arm2 } else { Arm::Arm1 };
                Structural::Idle(worker, i)
            } else {
                Structural::Infeasible
            }
        }
    }))
}

enum Structural {
    Infeasible,
    Return,
    Idle(Arm, usize),
}

/// Cost of the joint action `(a1, a2)` at `graph`.
pub fn pair_cost(graph: &TaskStateGraph, a1: Action, a2: Action, oracle: &CostOracle) -> Result<CellCost> {
    match structural(graph, a1, a2)? {
        None => {
            let (i, j) = (a1.task().expect("task"), a2.task().expect("task"));
            Ok(oracle.evaluate_pair(&PairQuery::from_graph(graph, i, j)).cell())
        }
        Some(s) => Ok(resolve_structural(graph, s, oracle)),
    }
}

fn resolve_structural(graph: &TaskStateGraph, s: Structural, oracle: &CostOracle) -> CellCost {
    match s {
        Structural::Infeasible => CellCost::INFEASIBLE,
        Structural::Return => CellCost { c_mv: return_legs(graph, oracle), c_tf: 0.0, feasible: true },
        Structural::Idle(worker, i) => oracle.evaluate_single(graph, worker, i),
    }
}

fn return_legs(graph: &TaskStateGraph, oracle: &CostOracle) -> f64 {
    let (d1, d2) = (graph.depot(Arm::Arm1), graph.depot(Arm::Arm2));
    oracle.phase((&d1.current, &d1.initial), (&d2.current, &d2.initial)).0
}

/// Time for both arms to return to their depots once every task is done.
pub fn return_cost(graph: &TaskStateGraph, oracle: &CostOracle) -> Result<f64> {
    match graph.undone() {
        0 => Ok(return_legs(graph, oracle)),
        k => Err(CoopError::TasksRemaining(k)),
    }
}

/// `(n+1) x (n+1)` grid of cell costs; row = arm-1 action, column = arm-2 action.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    cells: Vec<CellCost>,
}

impl CostMatrix {
    pub fn from_cells(n: usize, cells: Vec<CellCost>) -> Result<Self> {
        if cells.len() != (n + 1) * (n + 1) {
            return Err(CoopError::Format(format!("{} cells for n = {n}", cells.len())));
        }
        Ok(Self { n, cells })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> usize {
        self.n + 1
    }

    pub fn get(&self, i: usize, j: usize) -> &CellCost {
        &self.cells[i * (self.n + 1) + j]
    }

    pub fn at(&self, action: JointAction) -> &CellCost {
        &self.cells[action.cell(self.n)]
    }

    pub fn cells(&self) -> &[CellCost] {
        &self.cells
    }

    /// The same matrix aligned to arm 2 (rows = arm-2 actions).
    pub fn transpose(&self) -> Self {
        let m = self.side();
        let cells = (0..m * m).map(|c| self.cells[(c % m) * m + c / m]).collect();
        Self { n: self.n, cells }
    }

    pub fn mask(&self) -> Vec<bool> {
        self.cells.iter().map(|c| c.feasible).collect()
    }

    pub fn feasible_count(&self) -> usize {
        self.cells.iter().filter(|c| c.feasible).count()
    }
}

pub fn build_cost_matrix(graph: &TaskStateGraph, oracle: &CostOracle) -> CostMatrix {
    let n = graph.n();
    let mut cells = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            let (a1, a2) = (Action::from_index(i, n).expect("in range"), Action::from_index(j, n).expect("in range"));
            cells.push(pair_cost(graph, a1, a2, oracle).expect("indices in range"));
        }
    }
    CostMatrix { n, cells }
}

pub fn global_mask(graph: &TaskStateGraph, oracle: &CostOracle) -> Vec<bool> {
    build_cost_matrix(graph, oracle).mask()
}

/// Anything that can price the joint action space of a state.
pub trait MatrixSource {
    fn cost_matrix(&self, graph: &TaskStateGraph) -> Result<CostMatrix>;
}

impl MatrixSource for CostOracle {
    fn cost_matrix(&self, graph: &TaskStateGraph) -> Result<CostMatrix> {
        Ok(build_cost_matrix(graph, self))
    }
}

/// Builds a matrix whose task-pair cells come from `price`, with every
/// structural rule and return/idle cell taken from `oracle`.
pub fn matrix_with_pair_prices(
    graph: &TaskStateGraph,
    oracle: &CostOracle,
    price: impl FnOnce(&[PairQuery]) -> Result<Vec<CellCost>>,
) -> Result<CostMatrix> {
    let n = graph.n();
    let m = n + 1;
    let mut cells = vec![CellCost::INFEASIBLE; m * m];
    let mut queries = Vec::new();
    let mut slots = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let (a1, a2) = (Action::from_index(i, n)?, Action::from_index(j, n)?);
            match structural(graph, a1, a2)? {
                None => {
                    queries.push(PairQuery::from_graph(graph, i, j));
                    slots.push(i * m + j);
                }
                Some(s) => cells[i * m + j] = resolve_structural(graph, s, oracle),
            }
        }
    }
    if !queries.is_empty() {
        let priced = price(&queries)?;
        for (slot, cell) in slots.into_iter().zip(priced) {
            cells[slot] = cell;
        }
    }
    CostMatrix::from_cells(n, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::depot_pose;
    use crate::graph::{apply_joint_action, build_state_graph, ReturnMode, TaskSpec};
    use std::f64::consts::PI;

    #[test]
    fn transit_examples() {
        let p = KinematicParams::default();
        let a = Pose::on_table(0.0, 0.0, 0.0);
        assert_eq!(transit_time(&a, &a, &p), 0.0);
        assert!((transit_time(&a, &Pose::on_table(0.5, 0.0, 0.0), &p) - 1.0).abs() < 1e-15);
        assert!((transit_time(&a, &Pose::on_table(0.0, 0.0, PI / 2.0), &p) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn overlap_examples() {
        let p = KinematicParams::default();
        let par = corridor_overlap(([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), ([0.0, 0.3, 0.0], [1.0, 0.3, 0.0]), &p);
        assert!(par.abs() < 1e-12);
        let cross = corridor_overlap(([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), ([0.0, -1.0, 0.0], [0.0, 1.0, 0.0]), &p);
        assert_eq!(cross, 1.0);
        let half = corridor_overlap(([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]), ([0.0, 0.15, 0.0], [1.0, 0.15, 0.0]), &p);
        assert!((half - 0.5).abs() < 1e-12);
    }

    fn graph(tasks: Vec<TaskSpec>) -> TaskStateGraph {
        build_state_graph(&tasks, [depot_pose(0), depot_pose(1)], ReturnMode::Strict).unwrap()
    }

    fn separated() -> Vec<TaskSpec> {
        vec![
            TaskSpec { pick: Pose::on_table(-0.5, -0.3, 0.0), place: Pose::on_table(-0.5, 0.3, 0.0) },
            TaskSpec { pick: Pose::on_table(0.5, -0.3, 0.0), place: Pose::on_table(0.5, 0.3, 0.0) },
        ]
    }

    #[test]
    fn fresh_two_task_mask() {
        let g = graph(separated());
        let mask = global_mask(&g, &CostOracle::default());
        assert_eq!(mask, vec![false, true, false, true, false, false, false, false, false]);
    }

    #[test]
    fn close_picks_are_infeasible() {
        let tasks = vec![
            TaskSpec { pick: Pose::on_table(0.0, 0.0, 0.0), place: Pose::on_table(-0.5, 0.3, 0.0) },
            TaskSpec { pick: Pose::on_table(0.05, 0.0, 0.0), place: Pose::on_table(0.5, 0.3, 0.0) },
        ];
        let g = graph(tasks);
        let c = pair_cost(&g, Action::Task(0), Action::Task(1), &CostOracle::default()).unwrap();
        assert!(!c.feasible);
        assert_eq!((c.c_mv, c.c_tf), (0.0, 0.0));
    }

    #[test]
    fn done_tasks_and_return() {
        let g = graph(separated());
        let o = CostOracle::default();
        let cell = pair_cost(&g, Action::Task(0), Action::Task(1), &o).unwrap();
        let done = apply_joint_action(&g, JointAction::tasks(0, 1), &cell).unwrap();
        let mask = global_mask(&done, &o);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 1);
        assert!(mask[8]);
        assert!(return_cost(&g, &o).is_err());
        assert_eq!(return_cost(&g.clone(), &o).map_err(|e| e.to_string()).unwrap_err(), "2 tasks remain undone");
        let rt = return_cost(&done, &o).unwrap();
        assert_eq!(build_cost_matrix(&done, &o).get(2, 2).c_mv, rt);
    }

    #[test]
    fn out_of_range_index() {
        let g = graph(separated());
        assert!(matches!(
            pair_cost(&g, Action::Task(5), Action::Task(0), &CostOracle::default()),
            Err(CoopError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn euclidean_ignores_orientation() {
        let o = CostOracle::default().with_variant(OracleVariant::Euclidean);
        let a = Pose::on_table(0.0, 0.0, 0.0);
        assert_eq!(o.leg_time(&a, &Pose::on_table(0.0, 0.0, 2.0)), 0.0);
    }

    #[test]
    fn failure_injection_is_deterministic() {
        let g = graph(separated());
        let o = CostOracle::default().with_failures(0.5, 7);
        let a = JointAction::tasks(0, 1);
        assert_eq!(o.execution_fails(&g, a), o.execution_fails(&g, a));
        assert!(!CostOracle::default().execution_fails(&g, a));
    }
}
