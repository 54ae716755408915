//! Fit metrics, residual tables, the residual-smoothing simulation and the
//! two-proportion test.

pub mod metrics;
pub mod residuals;
pub mod stats;
pub mod sweep;

pub use metrics::{
    accuracy, auc, binned_split, binned_split_indices, calibration, empirical_upper_bound, evaluate,
    metric_report, normalized_aic, Calibration, CalibrationBin, MetricReport, SplitIndices,
};
pub use residuals::{
    raw_residuals, rank, residual_records, residuals_to_csv, smoothed_residuals, ResidualKind, ResidualRecord,
    DEFAULT_MIN_N,
};
pub use stats::{chi2_sf, pearson, two_proportion_chisq, ChiSquared};
pub use sweep::{ols_line, noise_decomposition, size_sweep, Line, NoiseDecomposition, SweepConfig, SweepReport, SweepRow};

/// Pearson correlation between two aligned residual series.
pub fn residual_correlation(a: &[f64], b: &[f64]) -> crate::Result<f64> {
    pearson(a, b)
}
