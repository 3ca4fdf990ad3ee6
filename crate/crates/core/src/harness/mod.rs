//! End-to-end orchestration: identification pipeline, paired closed-loop
//! benchmark, tracking/safety metrics and report files.

mod benchmark;
mod config;
mod metrics;
mod pipeline;
mod report;

pub use benchmark::{
    benchmark_reference, hull_exterior_rows, paired_audit, run_benchmark, run_closed_loop, AuditReport,
    BenchmarkResult, RunRecord,
};
pub use config::{BenchmarkSpec, DrawSpec, MasterConfig, ScenarioConfig, SCHEMA_VERSION, STRESS_AMPLITUDE};
pub use metrics::{metrics, rrmse_series, MetricsReport};
pub use pipeline::{run_pipeline, Pipeline};
pub use report::{emit_report, rescan_trace_violations, ControllerAggregate, RunSummary, Summary};
