//! Instance generation, the benchmark harness, reports and ablations.

mod ablation;
mod dataset;
mod harness;

pub use ablation::{ablation_variants, run_ablation, AblationAxis, AblationConfig, Variant};
pub use dataset::{generate_dataset, random_yaw, sample_instance, sample_separated, Dataset};
pub use harness::{
    emit_report, parse_report, render_report, run_benchmark, run_instances, run_method, sig6, BenchContext, Method,
    MetricsRow, ReportFormat, CSV_HEADER,
};
