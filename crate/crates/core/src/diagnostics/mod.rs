//! Metrics logs, plots, sweeps and the tabular theory harness.

pub mod metrics;
pub mod plot;
pub mod sweep;
pub mod theory;

use thiserror::Error;

pub use plot::{emit_plot, PlotOptions};
pub use sweep::{sweep, SweepCell, SweepGrid, SweepSummary};
pub use metrics::{emit_metrics, read_metrics, MetricsRow, MetricsTable, MetricsWriter, METRIC_COLUMNS};
pub use theory::{
    bias_experiment, value_iteration, variance_experiment, verify_theory, BiasReport, TabularMdp, TheoryReport,
    VarianceReport,
};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("column `{0}` not found")]
    MissingKey(String),
    #[error("malformed metrics file {path} at line {line}")]
    Parse { path: String, line: usize },
    #[error("plot rendering failed: {0}")]
    Plot(String),
}

/// `max - min` of a non-empty vector of action values.
pub fn q_discrepancy(q_values: &[f64]) -> Result<f64, DiagError> {
    if q_values.is_empty() {
        return Err(DiagError::EmptyInput("q-values"));
    }
    let max = q_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = q_values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}
