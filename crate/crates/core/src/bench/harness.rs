use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::costmodel::{CostOracle, MatrixSource};
use crate::error::{CoopError, Result};
use crate::graph::{ReturnMode, TaskStateGraph};
use crate::policy::{Policy, PolicyPlanner, SelectMode};
use crate::solvers::{
    exhaustive_search, greedy_plan, perfect_matching_plan, run_planner, simulate, ExhaustiveConfig, Plan,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Exhaustive,
    Greedy,
    Matching,
    Policy,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Exhaustive, Method::Greedy, Method::Matching, Method::Policy];

    pub fn name(self) -> &'static str {
        match self {
            Method::Exhaustive => "exhaustive",
            Method::Greedy => "greedy",
            Method::Matching => "matching",
            Method::Policy => "policy",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CoopError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CoopError::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// What a benchmark run needs besides the dataset.
pub struct BenchContext<'a> {
    /// Ground truth for feasibility, execution and the reported cost.
    pub oracle: CostOracle,
    /// Matrices consumed step by step by greedy and the policy.
    pub source: &'a dyn MatrixSource,
    pub policy: Option<&'a Policy>,
    /// Step-back budget for greedy and the policy; `None` disables it.
    pub step_back: Option<usize>,
    pub exhaustive: ExhaustiveConfig,
}

impl<'a> BenchContext<'a> {
    /// Oracle matrices, step-back at the default budget, no policy.
    pub fn new(oracle: CostOracle, source: &'a dyn MatrixSource) -> Self {
        Self {
            oracle,
            source,
            policy: None,
            step_back: Some(crate::solvers::DEFAULT_STEP_BACK_BUDGET),
            exhaustive: ExhaustiveConfig::default(),
        }
    }
}

/// One single-shot planner call. The reported cost is always a replay of
/// the plan's actions under the oracle.
pub fn run_method(method: Method, start: &TaskStateGraph, ctx: &BenchContext) -> Result<Plan> {
    let plan = match method {
        Method::Exhaustive => match exhaustive_search(start, &ctx.oracle, ctx.exhaustive) {
            Err(CoopError::BudgetExceeded(t)) => Plan::infeasible(t),
            other => other?,
        },
        Method::Greedy => greedy_plan(start, ctx.source, &ctx.oracle, ctx.step_back)?,
        Method::Matching => perfect_matching_plan(start, &ctx.oracle)?,
        Method::Policy => {
            let policy = ctx.policy.ok_or_else(|| CoopError::MissingCheckpoint("policy".into()))?;
            let mut planner = PolicyPlanner { policy, mode: SelectMode::Argmax, rng: ChaCha8Rng::seed_from_u64(0) };
            run_planner(start, &mut planner, ctx.source, &ctx.oracle, ctx.step_back)?
        }
    };
    resimulate(start, plan, &ctx.oracle)
}

fn resimulate(start: &TaskStateGraph, mut plan: Plan, oracle: &CostOracle) -> Result<Plan> {
    if plan.feasible {
        let log = simulate(start, &plan.actions, &oracle.with_failures(0.0, oracle.seed))?;
        plan.cost = crate::graph::cumulative_cost(&log)?;
    }
    Ok(plan)
}

/// Per-instance plans of each method, in dataset order.
pub fn run_instances(methods: &[Method], dataset: &Dataset, ctx: &BenchContext) -> Result<Vec<(Method, Vec<Plan>)>> {
    let graphs = dataset
        .instances
        .iter()
        .map(|inst| TaskStateGraph::from_instance(inst, ReturnMode::Strict))
        .collect::<Result<Vec<_>>>()?;
    methods
        .iter()
        .map(|&m| Ok((m, graphs.iter().map(|g| run_method(m, g, ctx)).collect::<Result<Vec<_>>>()?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub n: usize,
    pub success_rate: f64,
    /// Mean oracle cost over successful runs; NaN when none succeeded.
    pub mean_cost: f64,
    pub mean_plan_time_s: f64,
}

impl MetricsRow {
    pub fn aggregate(method: &str, n: usize, plans: &[Plan]) -> Self {
        let ok: Vec<&Plan> = plans.iter().filter(|p| p.feasible).collect();
        let count = plans.len().max(1) as f64;
        Self {
            method: method.to_string(),
            n,
            success_rate: ok.len() as f64 / count,
            mean_cost: if ok.is_empty() { f64::NAN } else { ok.iter().map(|p| p.cost).sum::<f64>() / ok.len() as f64 },
            mean_plan_time_s: plans.iter().map(|p| p.planning_time).sum::<f64>() / count,
        }
    }
}

/// One aggregated row per method over `dataset`.
pub fn run_benchmark(methods: &[Method], dataset: &Dataset, ctx: &BenchContext) -> Result<Vec<MetricsRow>> {
    if methods.contains(&Method::Policy) && ctx.policy.is_none() {
        return Err(CoopError::MissingCheckpoint("policy".into()));
    }
    Ok(run_instances(methods, dataset, ctx)?
        .into_iter()
        .map(|(m, plans)| MetricsRow::aggregate(m.name(), dataset.n, &plans))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = CoopError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(CoopError::InvalidConfig(format!("unknown report format `{s}`"))),
        }
    }
}

pub const CSV_HEADER: &str = "method,n,success_rate,mean_cost,mean_plan_time_s";

/// Rounds to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn rounded(row: &MetricsRow) -> MetricsRow {
    MetricsRow {
        success_rate: sig6(row.success_rate),
        mean_cost: sig6(row.mean_cost),
        mean_plan_time_s: sig6(row.mean_plan_time_s),
        ..row.clone()
    }
}

pub fn render_report(rows: &[MetricsRow], format: ReportFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(CoopError::InvalidConfig("report needs at least one row".into()));
    }
    let rows: Vec<MetricsRow> = rows.iter().map(rounded).collect();
    Ok(match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &rows {
                out.push_str(&format!("{},{},{},{},{}\n", r.method, r.n, r.success_rate, r.mean_cost, r.mean_plan_time_s));
            }
            out
        }
        ReportFormat::Json => {
            // serde_json writes NaN as null; parse_report maps it back.
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            s
        }
    })
}

pub fn emit_report(rows: &[MetricsRow], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let text = render_report(rows, format)?;
    if let Some(dir) = path.as_ref().parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<MetricsRow>> {
    match format {
        ReportFormat::Json => {
            let raw: Vec<serde_json::Value> = serde_json::from_str(text)?;
            raw.into_iter()
                .map(|v| {
                    let f = |k: &str| v[k].as_f64().unwrap_or(f64::NAN);
                    Ok(MetricsRow {
                        method: v["method"].as_str().ok_or_else(|| CoopError::Format("row without method".into()))?.into(),
                        n: v["n"].as_u64().ok_or_else(|| CoopError::Format("row without n".into()))? as usize,
                        success_rate: f("success_rate"),
                        mean_cost: f("mean_cost"),
                        mean_plan_time_s: f("mean_plan_time_s"),
                    })
                })
                .collect()
        }
        ReportFormat::Csv => {
            let mut lines = text.lines();
            if lines.next() != Some(CSV_HEADER) {
                return Err(CoopError::Format("unexpected report header".into()));
            }
            lines
                .filter(|l| !l.is_empty())
                .map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    if f.len() != 5 {
                        return Err(CoopError::Format(format!("bad report line `{l}`")));
                    }
                    let num = |s: &str| s.parse::<f64>().map_err(|e| CoopError::Format(format!("`{s}`: {e}")));
                    Ok(MetricsRow {
                        method: f[0].into(),
                        n: f[1].parse().map_err(|e| CoopError::Format(format!("`{}`: {e}", f[1])))?,
                        success_rate: num(f[2])?,
                        mean_cost: num(f[3])?,
                        mean_plan_time_s: num(f[4])?,
                    })
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cost: f64) -> MetricsRow {
        MetricsRow { method: "greedy".into(), n: 6, success_rate: 1.0, mean_cost: cost, mean_plan_time_s: 0.001234567 }
    }

    #[test]
    fn one_row_gives_two_csv_lines() {
        let text = render_report(&[row(18.1523456)], ReportFormat::Csv).unwrap();
        assert_eq!(text, "method,n,success_rate,mean_cost,mean_plan_time_s\ngreedy,6,1,18.1523,0.00123457\n");
    }

    #[test]
    fn json_csv_json_round_trip() {
        let rows = vec![row(18.1523456), row(f64::NAN)];
        let json = parse_report(&render_report(&rows, ReportFormat::Json).unwrap(), ReportFormat::Json).unwrap();
        let csv = parse_report(&render_report(&json, ReportFormat::Csv).unwrap(), ReportFormat::Csv).unwrap();
        let back = parse_report(&render_report(&csv, ReportFormat::Json).unwrap(), ReportFormat::Json).unwrap();
        assert_eq!(back[0], rounded(&rows[0]));
        assert!(back[1].mean_cost.is_nan());
        assert_eq!(back[0].mean_cost, 18.1523);
    }

    #[test]
    fn empty_report_is_rejected() {
        assert!(render_report(&[], ReportFormat::Csv).is_err());
    }

    #[test]
    fn sig6_examples() {
        assert_eq!(sig6(123456789.0), 123457000.0);
        assert_eq!(sig6(0.000123456789), 0.000123457);
        assert_eq!(sig6(1.0), 1.0);
    }
}
