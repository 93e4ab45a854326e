#![allow(dead_code)]

use coop_mtsp::bench::sample_instance;
use coop_mtsp::costmodel::{CostOracle, OracleVariant};
use coop_mtsp::geometry::Pose;
use coop_mtsp::graph::{
    apply_joint_action, Action, Arm, EpisodeLog, EpisodeStatus, JointAction, ReturnMode, StepRecord, TaskStateGraph,
};

pub fn graph(n: usize, seed: u64) -> TaskStateGraph {
    TaskStateGraph::from_instance(&sample_instance(n, seed).unwrap(), ReturnMode::Strict).unwrap()
}

fn wrap(a: f64) -> f64 {
    a.sin().atan2(a.cos())
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn diff(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Segment distance by exact projection for the inner variable and ternary
/// search over the outer one.
pub fn ref_segment_distance(p0: [f64; 3], p1: [f64; 3], q0: [f64; 3], q1: [f64; 3]) -> f64 {
    let d2 = diff(q1, q0);
    let l2 = d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2];
    let at = |s: f64| {
        let p = [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1]), p0[2] + s * (p1[2] - p0[2])];
        let t = if l2 == 0.0 {
            0.0
        } else {
            let w = diff(p, q0);
            ((w[0] * d2[0] + w[1] * d2[1] + w[2] * d2[2]) / l2).clamp(0.0, 1.0)
        };
        norm(diff(p, [q0[0] + t * d2[0], q0[1] + t * d2[1], q0[2] + t * d2[2]]))
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if at(m1) <= at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    at(0.5 * (lo + hi)).min(at(0.0)).min(at(1.0))
}

/// Closest approach of two synchronized linear motions, by sampling plus
/// ternary refinement (the gap is convex in the shared progress variable).
pub fn ref_clearance(p0: [f64; 3], p1: [f64; 3], q0: [f64; 3], q1: [f64; 3]) -> f64 {
    let at = |s: f64| {
        let a = [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1]), p0[2] + s * (p1[2] - p0[2])];
        let b = [q0[0] + s * (q1[0] - q0[0]), q0[1] + s * (q1[1] - q0[1]), q0[2] + s * (q1[2] - q0[2])];
        norm(diff(a, b))
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let (m1, m2) = (lo + (hi - lo) / 3.0, hi - (hi - lo) / 3.0);
        if at(m1) <= at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    at(0.5 * (lo + hi)).min(at(0.0)).min(at(1.0))
}

pub fn ref_leg(a: &Pose, b: &Pose, o: &CostOracle) -> f64 {
    let lin = norm(diff(b.position, a.position)) / o.params.v;
    match o.variant {
        OracleVariant::Kinematic => {
            let ang = (0..3).map(|k| wrap(b.orientation[k] - a.orientation[k]).abs()).fold(0.0, f64::max);
            lin + ang / o.params.omega
        }
        _ => lin,
    }
}

/// Synchronized two-leg phase: slower arm times the interference factor.
pub fn ref_phase(a1: &Pose, b1: &Pose, a2: &Pose, b2: &Pose, o: &CostOracle) -> (f64, f64) {
    let t = ref_leg(a1, b1, o).max(ref_leg(a2, b2, o));
    let d = ref_segment_distance(a1.position, b1.position, a2.position, b2.position);
    let beta = if o.variant == OracleVariant::Euclidean { 0.0 } else { o.params.beta };
    (t * (1.0 + beta * (1.0 - d / o.params.d0).max(0.0)), d)
}

/// `(c_mv, c_tf, feasible)` for two distinct undone tasks.
pub fn ref_cell(g: &TaskStateGraph, i: usize, j: usize, o: &CostOracle) -> (f64, f64, bool) {
    if i == j || g.is_done(i) || g.is_done(j) {
        return (0.0, 0.0, false);
    }
    let (e1, e2) = (g.effector(Arm::Arm1), g.effector(Arm::Arm2));
    let (t1, t2) = (g.task(i), g.task(j));
    let (mv, _) = ref_phase(&e1, &t1.pick, &e2, &t2.pick, o);
    let (tf, _) = ref_phase(&t1.pick, &t1.place, &t2.pick, &t2.place, o);
    let dmv = ref_clearance(e1.position, t1.pick.position, e2.position, t2.pick.position);
    let dtf = ref_clearance(t1.pick.position, t1.place.position, t2.pick.position, t2.place.position);
    let p = &o.params;
    let ok = norm(diff(t1.pick.position, t2.pick.position)) >= p.d_safe
        && norm(diff(t1.place.position, t2.place.position)) >= p.d_safe
        && dmv >= p.d_col
        && dtf >= p.d_col;
    if ok {
        (mv, tf, true)
    } else {
        (0.0, 0.0, false)
    }
}

pub fn ref_return(g: &TaskStateGraph, o: &CostOracle) -> f64 {
    let (d1, d2) = (g.depot(Arm::Arm1), g.depot(Arm::Arm2));
    ref_phase(&d1.current, &d1.initial, &d2.current, &d2.initial, o).0
}

/// Replays a task-pair sequence with the reference formulas; `None` if any
/// step is infeasible.
pub fn ref_sequence_cost(start: &TaskStateGraph, seq: &[(usize, usize)], o: &CostOracle) -> Option<f64> {
    let mut g = start.clone();
    let mut total = 0.0;
    for &(i, j) in seq {
        let (mv, tf, ok) = ref_cell(&g, i, j, o);
        if !ok {
            return None;
        }
        total += mv + tf;
        let cell = coop_mtsp::graph::CellCost { c_mv: mv, c_tf: tf, feasible: true };
        g = apply_joint_action(&g, JointAction::tasks(i, j), &cell).unwrap();
    }
    Some(total + ref_return(&g, o))
}

/// Minimum over every permutation of tasks, read as consecutive
/// `(arm 1, arm 2)` pairs.
pub fn brute_force_optimum(start: &TaskStateGraph, o: &CostOracle) -> Option<f64> {
    let n = start.n();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best: Option<f64> = None;
    permute(&mut perm, 0, &mut |p| {
        let seq: Vec<(usize, usize)> = p.chunks(2).map(|c| (c[0], c[1])).collect();
        if let Some(c) = ref_sequence_cost(start, &seq, o) {
            best = Some(best.map_or(c, |b: f64| b.min(c)));
        }
    });
    best
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

pub fn log_of(steps: &[(f64, f64)], c_rt: f64) -> EpisodeLog {
    EpisodeLog {
        steps: steps
            .iter()
            .map(|&(c_mv, c_tf)| StepRecord { action: JointAction { a1: Action::Return, a2: Action::Return }, c_mv, c_tf })
            .collect(),
        c_rt,
        status: Some(EpisodeStatus::Success),
    }
}
