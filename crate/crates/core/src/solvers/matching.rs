use std::time::Instant;

use super::{simulate, Plan};
use crate::costmodel::{CostOracle, PairQuery};
use crate::error::Result;
use crate::geometry::{distance, Pose, OBJECT_EDGE};
use crate::graph::{Arm, JointAction, TaskStateGraph};

const EXACT_MATCHING_MAX: usize = 16;
const EXACT_ORDER_MAX: usize = 12;
/// Added per infeasible transition in the heuristic ordering.
const PENALTY: f64 = 1e6;

/// Minimum-weight perfect matching on `n` vertices. `weight(i, j)` with
/// `i < j` returns `None` for forbidden pairs. Exact subset dynamic
/// programming up to 16 vertices; greedy matching improved by pair swaps
/// beyond.
pub fn min_weight_perfect_matching(
    n: usize,
    weight: impl Fn(usize, usize) -> Option<f64>,
) -> Option<(Vec<(usize, usize)>, f64)> {
    if n % 2 == 1 {
        return None;
    }
    let w: Vec<Vec<Option<f64>>> =
        (0..n).map(|i| (0..n).map(|j| if i < j { weight(i, j) } else if j < i { weight(j, i) } else { None }).collect()).collect();
    if n <= EXACT_MATCHING_MAX {
        exact_matching(n, &w)
    } else {
        heuristic_matching(n, &w)
    }
}

fn exact_matching(n: usize, w: &[Vec<Option<f64>>]) -> Option<(Vec<(usize, usize)>, f64)> {
    let full = (1usize << n) - 1;
    let mut dp = vec![f64::INFINITY; 1 << n];
    let mut choice = vec![(0usize, 0usize); 1 << n];
    dp[0] = 0.0;
    for mask in 0..full {
        if !dp[mask].is_finite() {
            continue;
        }
        let i = (!mask).trailing_zeros() as usize;
        for j in i + 1..n {
            if mask & (1 << j) != 0 {
                continue;
            }
            if let Some(c) = w[i][j] {
                let next = mask | (1 << i) | (1 << j);
                if dp[mask] + c < dp[next] {
                    dp[next] = dp[mask] + c;
                    choice[next] = (i, j);
                }
            }
        }
    }
    if !dp[full].is_finite() {
        return None;
    }
    let mut pairs = Vec::new();
    let mut mask = full;
    while mask != 0 {
        let (i, j) = choice[mask];
        pairs.push((i, j));
        mask &= !((1 << i) | (1 << j));
    }
    pairs.sort_unstable();
    Some((pairs, dp[full]))
}

fn heuristic_matching(n: usize, w: &[Vec<Option<f64>>]) -> Option<(Vec<(usize, usize)>, f64)> {
    let cost = |i: usize, j: usize| w[i][j].unwrap_or(PENALTY);
    let mut edges: Vec<(f64, usize, usize)> =
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| (cost(i, j), i, j)).collect();
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used = vec![false; n];
    let mut pairs = Vec::new();
    for (_, i, j) in edges {
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    loop {
        let mut improved = false;
        for p in 0..pairs.len() {
            for q in p + 1..pairs.len() {
                let ((a, b), (c, d)) = (pairs[p], pairs[q]);
                let now = cost(a, b) + cost(c, d);
                let opt1 = cost(a.min(c), a.max(c)) + cost(b.min(d), b.max(d));
                let opt2 = cost(a.min(d), a.max(d)) + cost(b.min(c), b.max(c));
                if opt1 < now - 1e-12 && opt1 <= opt2 {
                    pairs[p] = (a.min(c), a.max(c));
                    pairs[q] = (b.min(d), b.max(d));
                    improved = true;
                } else if opt2 < now - 1e-12 {
                    pairs[p] = (a.min(d), a.max(d));
                    pairs[q] = (b.min(c), b.max(c));
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let total: f64 = pairs.iter().map(|&(i, j)| cost(i, j)).sum();
    if pairs.iter().any(|&(i, j)| w[i][j].is_none()) {
        return None;
    }
    pairs.sort_unstable();
    Some((pairs, total))
}

/// Transfer-phase cost of arm 1 doing `i` while arm 2 does `j`, if that
/// transfer is allowed.
fn transfer_cost(g: &TaskStateGraph, oracle: &CostOracle, i: usize, j: usize) -> Option<f64> {
    let (ti, tj) = (g.task(i), g.task(j));
    if distance(ti.pick.position, tj.pick.position) < oracle.params.d_safe {
        return None;
    }
    let q = PairQuery {
        arm1_current: ti.pick,
        arm2_current: tj.pick,
        arm1_pick: ti.pick,
        arm1_place: ti.place,
        arm2_pick: tj.pick,
        arm2_place: tj.place,
        bbox: [OBJECT_EDGE; 3],
    };
    let e = oracle.evaluate_pair(&q);
    e.transfer_ok.then_some(e.c_tf)
}

/// A matched pair with its arm orientation: arm 1 takes `.0`, arm 2 `.1`.
type Oriented = (usize, usize);

struct Ordering<'a> {
    g: &'a TaskStateGraph,
    oracle: &'a CostOracle,
}

impl Ordering<'_> {
    fn ee_after(&self, prev: Option<Oriented>) -> (Pose, Pose) {
        match prev {
            None => (self.g.effector(Arm::Arm1), self.g.effector(Arm::Arm2)),
            Some((a, b)) => (self.g.task(a).place, self.g.task(b).place),
        }
    }

    /// Move plus transfer cost of doing `next` after `prev`, if feasible.
    fn step(&self, prev: Option<Oriented>, next: Oriented) -> Option<f64> {
        let (e1, e2) = self.ee_after(prev);
        let (t1, t2) = (self.g.task(next.0), self.g.task(next.1));
        let q = PairQuery {
            arm1_current: e1,
            arm2_current: e2,
            arm1_pick: t1.pick,
            arm1_place: t1.place,
            arm2_pick: t2.pick,
            arm2_place: t2.place,
            bbox: [OBJECT_EDGE; 3],
        };
        let e = self.oracle.evaluate_pair(&q);
        e.feasible().then_some(e.c_mv + e.c_tf)
    }

    fn finish(&self, last: Oriented) -> f64 {
        let (p1, p2) = self.ee_after(Some(last));
        let (h1, h2) = (self.g.depot(Arm::Arm1).initial, self.g.depot(Arm::Arm2).initial);
        self.oracle.phase((&p1, &h1), (&p2, &h2)).0
    }

    /// Held-Karp over pairs; `flip` lets each pair use either orientation.
    fn exact(&self, pairs: &[Oriented], flip: bool) -> Option<Vec<Oriented>> {
        let m = pairs.len();
        let orients = if flip { 2 } else { 1 };
        let variant = |p: usize, o: usize| if o == 0 { pairs[p] } else { (pairs[p].1, pairs[p].0) };
        let states = orients * m;
        let idx = |mask: usize, s: usize| mask * states + s;
        let mut dp = vec![f64::INFINITY; (1 << m) * states];
        let mut parent = vec![usize::MAX; (1 << m) * states];
        for p in 0..m {
            for o in 0..orients {
                if let Some(c) = self.step(None, variant(p, o)) {
                    dp[idx(1 << p, p * orients + o)] = c;
                }
            }
        }
        for mask in 1..(1usize << m) {
            for s in 0..states {
                let cur = dp[idx(mask, s)];
                if !cur.is_finite() {
                    continue;
                }
                let from = variant(s / orients, s % orients);
                for q in 0..m {
                    if mask & (1 << q) != 0 {
                        continue;
                    }
                    for o in 0..orients {
                        if let Some(c) = self.step(Some(from), variant(q, o)) {
                            let t = idx(mask | (1 << q), q * orients + o);
                            if cur + c < dp[t] {
                                dp[t] = cur + c;
                                parent[t] = s;
                            }
                        }
                    }
                }
            }
        }
        let full = (1usize << m) - 1;
        let (best_s, _) = (0..states)
            .map(|s| (s, dp[idx(full, s)] + self.finish(variant(s / orients, s % orients))))
            .filter(|(_, c)| c.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))?;
        let mut order = Vec::with_capacity(m);
        let (mut mask, mut s) = (full, best_s);
        loop {
            order.push(variant(s / orients, s % orients));
            let p = parent[idx(mask, s)];
            mask &= !(1 << (s / orients));
            if mask == 0 {
                break;
            }
            s = p;
        }
        order.reverse();
        Some(order)
    }

    fn tour_cost(&self, order: &[Oriented]) -> f64 {
        let mut prev = None;
        let mut total = 0.0;
        for &p in order {
            total += self.step(prev, p).unwrap_or(PENALTY);
            prev = Some(p);
        }
        total + prev.map_or(0.0, |l| self.finish(l))
    }

    /// Nearest neighbour, then 2-opt and orientation flips on the penalized
    /// tour cost.
    fn heuristic(&self, pairs: &[Oriented], transfer_ok: impl Fn(Oriented) -> bool) -> Option<Vec<Oriented>> {
        let mut left: Vec<Oriented> = pairs.to_vec();
        let mut order = Vec::with_capacity(pairs.len());
        let mut prev = None;
        while !left.is_empty() {
            let (k, _) = left
                .iter()
                .enumerate()
                .map(|(k, &p)| (k, self.step(prev, p).unwrap_or(PENALTY)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .expect("non-empty");
            let p = left.remove(k);
            order.push(p);
            prev = Some(p);
        }
        let mut best = self.tour_cost(&order);
        loop {
            let mut improved = false;
            for i in 0..order.len() {
                for j in i + 1..order.len() {
                    order[i..=j].reverse();
                    let c = self.tour_cost(&order);
                    if c < best - 1e-12 {
                        best = c;
                        improved = true;
                    } else {
                        order[i..=j].reverse();
                    }
                }
                let flipped = (order[i].1, order[i].0);
                if transfer_ok(flipped) {
                    let keep = order[i];
                    order[i] = flipped;
                    let c = self.tour_cost(&order);
                    if c < best - 1e-12 {
                        best = c;
                        improved = true;
                    } else {
                        order[i] = keep;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        (best < PENALTY).then_some(order)
    }
}

/// Pairs tasks by minimum total transfer cost, then orders the pairs as a
/// shortest tour over inter-pair move costs. Returns an infeasible plan when
/// no matching or no feasible order exists.
pub fn perfect_matching_plan(start: &TaskStateGraph, oracle: &CostOracle) -> Result<Plan> {
    let t0 = Instant::now();
    let n = start.n();
    let orient = |i: usize, j: usize| -> Option<(f64, Oriented)> {
        match (transfer_cost(start, oracle, i, j), transfer_cost(start, oracle, j, i)) {
            (Some(a), Some(b)) if b < a => Some((b, (j, i))),
            (Some(a), _) => Some((a, (i, j))),
            (None, Some(b)) => Some((b, (j, i))),
            (None, None) => None,
        }
    };
    let Some((matched, _)) = min_weight_perfect_matching(n, |i, j| orient(i, j).map(|x| x.0)) else {
        return Ok(Plan::infeasible(t0.elapsed().as_secs_f64()));
    };
    let pairs: Vec<Oriented> = matched.iter().map(|&(i, j)| orient(i, j).expect("matched pairs are allowed").1).collect();
    let ord = Ordering { g: start, oracle };
    let transfer_ok = |p: Oriented| transfer_cost(start, oracle, p.0, p.1).is_some();
    let order = if pairs.len() <= EXACT_ORDER_MAX {
        ord.exact(&pairs, false).or_else(|| ord.exact(&pairs, true))
    } else {
        ord.heuristic(&pairs, transfer_ok)
    };
    let elapsed = t0.elapsed().as_secs_f64();
    let Some(order) = order else {
        return Ok(Plan::infeasible(elapsed));
    };
    let actions: Vec<JointAction> = order.iter().map(|&(a, b)| JointAction::tasks(a, b)).collect();
    match simulate(start, &actions, oracle) {
        Ok(log) => Ok(Plan::from_log(log, elapsed, 0)),
        Err(_) => Ok(Plan::infeasible(elapsed)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_matching_small() {
        let w = |i: usize, j: usize| Some(((i as f64) - (j as f64)).abs());
        let (pairs, cost) = min_weight_perfect_matching(4, w).unwrap();
        assert_eq!(pairs, vec![(0, 1), (2, 3)]);
        assert_eq!(cost, 2.0);
    }

    #[test]
    fn forbidden_pairs_respected() {
        let w = |i: usize, j: usize| if (i, j) == (0, 1) { None } else { Some(1.0) };
        let (pairs, _) = min_weight_perfect_matching(4, w).unwrap();
        assert!(!pairs.contains(&(0, 1)));
        assert!(min_weight_perfect_matching(2, |_, _| None).is_none());
    }

    #[test]
    fn heuristic_matching_on_a_line() {
        let w = |i: usize, j: usize| Some(((i as f64) - (j as f64)).abs());
        let (pairs, cost) = min_weight_perfect_matching(20, w).unwrap();
        assert_eq!(pairs.len(), 10);
        assert_eq!(cost, 10.0);
    }
}
