use std::collections::HashMap;
use std::time::Instant;

use super::{simulate, Plan};
use crate::costmodel::{pair_cost, return_cost, CostOracle};
use crate::error::{CoopError, Result};
use crate::graph::{apply_joint_action, Action, CellCost, JointAction, NodeRef, TaskStateGraph};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExhaustiveConfig {
    /// Wall-clock budget in seconds.
    pub budget_s: f64,
    /// Largest accepted instance size.
    pub max_n: usize,
    /// Prune states reached again with no lower accumulated cost.
    pub dominance: bool,
}

impl Default for ExhaustiveConfig {
    fn default() -> Self {
        Self { budget_s: 1000.0, max_n: 10, dominance: true }
    }
}

type StateKey = (Vec<u64>, [NodeRef; 2]);

fn state_key(g: &TaskStateGraph) -> StateKey {
    let mut bits = vec![0u64; g.n().div_ceil(64)];
    for (i, t) in g.tasks().iter().enumerate() {
        if t.done {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    (bits, [g.agent_at(crate::graph::Arm::Arm1), g.agent_at(crate::graph::Arm::Arm2)])
}

struct Search<'a> {
    oracle: &'a CostOracle,
    config: ExhaustiveConfig,
    t0: Instant,
    expanded: u64,
    best: f64,
    best_path: Option<Vec<JointAction>>,
    memo: HashMap<StateKey, f64>,
    path: Vec<JointAction>,
}

impl Search<'_> {
    fn dfs(&mut self, g: &TaskStateGraph, acc: f64) -> Result<()> {
        self.expanded += 1;
        if self.expanded.is_multiple_of(1024) && self.t0.elapsed().as_secs_f64() > self.config.budget_s {
            return Err(CoopError::BudgetExceeded(self.t0.elapsed().as_secs_f64()));
        }
        if g.all_done() {
            let total = acc + return_cost(g, self.oracle)?;
            if total < self.best {
                self.best = total;
                self.best_path = Some(self.path.clone());
            }
            return Ok(());
        }
        if acc >= self.best {
            return Ok(());
        }
        if self.config.dominance {
            let key = state_key(g);
            match self.memo.get(&key) {
                Some(&seen) if seen <= acc => return Ok(()),
                _ => {
                    self.memo.insert(key, acc);
                }
            }
        }
        let n = g.n();
        let mut children: Vec<(f64, usize, JointAction, CellCost)> = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let a = JointAction { a1: Action::from_index(i, n)?, a2: Action::from_index(j, n)? };
                let cell = pair_cost(g, a.a1, a.a2, self.oracle)?;
                if cell.feasible {
                    children.push((cell.total(), a.cell(n), a, cell));
                }
            }
        }
        children.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (cost, _, a, cell) in children {
            if acc + cost >= self.best {
                continue;
            }
            let next = apply_joint_action(g, a, &cell)?;
            self.path.push(a);
            self.dfs(&next, acc + cost)?;
            self.path.pop();
        }
        Ok(())
    }
}

/// Depth-first branch and bound over all feasible joint-action sequences.
/// Returns the cheapest plan, or an infeasible plan if none completes.
pub fn exhaustive_search(start: &TaskStateGraph, oracle: &CostOracle, config: ExhaustiveConfig) -> Result<Plan> {
    if start.n() > config.max_n {
        return Err(CoopError::InvalidConfig(format!(
            "exhaustive search limited to n <= {} (got {})",
            config.max_n,
            start.n()
        )));
    }
    let mut s = Search {
        oracle,
        config,
        t0: Instant::now(),
        expanded: 0,
        best: f64::INFINITY,
        best_path: None,
        memo: HashMap::new(),
        path: Vec::new(),
    };
    s.dfs(start, 0.0)?;
    let elapsed = s.t0.elapsed().as_secs_f64();
    match s.best_path {
        Some(actions) => Ok(Plan::from_log(simulate(start, &actions, oracle)?, elapsed, 0)),
        None => Ok(Plan::infeasible(elapsed)),
    }
}
