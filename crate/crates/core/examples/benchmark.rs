//! The classical planners over several sizes, printed as CSV.

use coop_mtsp::bench::{generate_dataset, render_report, run_benchmark, BenchContext, Method, ReportFormat};
use coop_mtsp::costmodel::CostOracle;

fn main() -> coop_mtsp::Result<()> {
    let oracle = CostOracle::default();
    let ctx = BenchContext::new(oracle, &oracle);
    let mut rows = Vec::new();
    for n in [4, 6, 10, 20] {
        let methods: &[Method] =
            if n <= 6 { &[Method::Exhaustive, Method::Greedy, Method::Matching] } else { &[Method::Greedy, Method::Matching] };
        rows.extend(run_benchmark(methods, &generate_dataset(n, 20, 0)?, &ctx)?);
    }
    print!("{}", render_report(&rows, ReportFormat::Csv)?);
    Ok(())
}
