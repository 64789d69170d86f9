//! Metrics, benchmark protocol and report export.

pub mod benchmark;
pub mod metrics;
pub mod report;

pub use benchmark::{run_benchmark, BenchmarkSpec, Method};
pub use metrics::{compute_metrics, summarize, MetricSummary, MetricsRecord};
pub use report::{export_report, import_report, EvaluationReport, ReportFormat};
