//! The polynomial residual-smoothing simulation: how well raw and
//! network-smoothed residuals track the true residuals of a straight-line
//! model as the dataset grows.

use serde::{Deserialize, Serialize};

use super::stats::{mean, pearson, standard_error};
use crate::dilemma::RegressionPoint;
use crate::error::{Result, SrmError};
use crate::models::{mlp_fit_regression, MlpTrainConfig};
use crate::synth::{gen_polynomial_dataset_with, polynomial, PolynomialConfig};

/// Ordinary least-squares line `intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn ols_line(points: &[RegressionPoint]) -> Result<Line> {
    if points.len() < 2 {
        return Err(SrmError::Undefined("a line needs at least two points".into()));
    }
    let mx = points.iter().map(|p| p.x).sum::<f64>() / points.len() as f64;
    let my = points.iter().map(|p| p.y).sum::<f64>() / points.len() as f64;
    let sxx: f64 = points.iter().map(|p| (p.x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.x - mx) * (p.y - my)).sum();
    if sxx == 0.0 {
        return Err(SrmError::Undefined("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    Ok(Line {
        intercept: my - slope * mx,
        slope,
    })
}

/// Decomposition of the data-vs-model squared error into the truth-vs-model
/// error plus the noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDecomposition {
    /// mean (y - g)^2
    pub mse_data_model: f64,
    /// mean (f - g)^2
    pub mse_truth_model: f64,
    pub noise_variance: f64,
    /// mse_data_model - mse_truth_model - noise_variance
    pub discrepancy: f64,
    /// Standard error of the discrepancy.
    pub standard_error: f64,
}

pub fn noise_decomposition(points: &[RegressionPoint], g: impl Fn(f64) -> f64, noise_sd: f64) -> Result<NoiseDecomposition> {
    if points.len() < 2 {
        return Err(SrmError::Undefined("decomposition needs at least two points".into()));
    }
    let data: Vec<f64> = points.iter().map(|p| (p.y - g(p.x)).powi(2)).collect();
    let truth: Vec<f64> = points.iter().map(|p| (polynomial(p.x) - g(p.x)).powi(2)).collect();
    let diff: Vec<f64> = data.iter().zip(&truth).map(|(a, b)| a - b).collect();
    let noise_variance = noise_sd * noise_sd;
    let (mse_data_model, mse_truth_model) = (mean(&data), mean(&truth));
    Ok(NoiseDecomposition {
        mse_data_model,
        mse_truth_model,
        noise_variance,
        discrepancy: mse_data_model - mse_truth_model - noise_variance,
        standard_error: standard_error(&diff),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub sims: usize,
    pub seed: u64,
    pub polynomial: PolynomialConfig,
    pub mlp: MlpTrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: vec![100, 1_000, 10_000, 100_000],
            sims: 10,
            seed: 0,
            polynomial: PolynomialConfig::default(),
            mlp: MlpTrainConfig::regression(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub sim: usize,
    /// corr(y - g, f - g)
    pub corr_raw: f64,
    /// corr(f_hat - g, f - g)
    pub corr_smoothed: f64,
    /// mean (y - f)^2
    pub mse_data: f64,
    /// mean (f_hat - f)^2
    pub mse_model: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    fn of(xs: &[f64]) -> Self {
        MeanSe {
            mean: mean(xs),
            se: standard_error(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub sims: usize,
    pub corr_raw: MeanSe,
    pub corr_smoothed: MeanSe,
    pub mse_data: MeanSe,
    pub mse_model: MeanSe,
    /// Mean and standard error of corr_smoothed - corr_raw across sims.
    pub corr_gain: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SizeSummary>,
}

pub const SWEEP_CSV_HEADER: [&str; 6] = ["size", "sim", "corr_raw", "corr_smoothed", "mse_data", "mse_model"];

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        crate::io::to_csv(&self.rows, &SWEEP_CSV_HEADER)
    }

    pub fn size(&self, size: usize) -> Option<&SizeSummary> {
        self.summary.iter().find(|s| s.size == size)
    }
}

/// Seed for one (size, sim) cell, independent of the other cells.
pub fn cell_seed(base: u64, size: usize, sim: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((size as u64).wrapping_mul(1_000_003))
        .wrapping_add(sim as u64)
}

pub fn run_simulation(size: usize, sim: usize, cfg: &SweepConfig) -> Result<SweepRow> {
    let seed = cell_seed(cfg.seed, size, sim);
    let points = gen_polynomial_dataset_with(size, seed, &cfg.polynomial)?;
    let line = ols_line(&points)?;
    let mlp_cfg = MlpTrainConfig {
        seed,
        ..cfg.mlp.clone()
    };
    let net = mlp_fit_regression(&points, &mlp_cfg)?;
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let fhat = net.predict_x(&xs);
    let truth: Vec<f64> = xs.iter().map(|&x| polynomial(x)).collect();
    let g: Vec<f64> = xs.iter().map(|&x| line.at(x)).collect();

    let true_resid: Vec<f64> = truth.iter().zip(&g).map(|(f, g)| f - g).collect();
    let raw_resid: Vec<f64> = points.iter().zip(&g).map(|(p, g)| p.y - g).collect();
    let smooth_resid: Vec<f64> = fhat.iter().zip(&g).map(|(f, g)| f - g).collect();
    Ok(SweepRow {
        size,
        sim,
        corr_raw: pearson(&raw_resid, &true_resid)?,
        corr_smoothed: pearson(&smooth_resid, &true_resid)?,
        mse_data: mean(&points.iter().zip(&truth).map(|(p, f)| (p.y - f).powi(2)).collect::<Vec<_>>()),
        mse_model: mean(&fhat.iter().zip(&truth).map(|(a, f)| (a - f).powi(2)).collect::<Vec<_>>()),
    })
}

pub fn summarize(rows: &[SweepRow]) -> Vec<SizeSummary> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.size).collect();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|size| {
            let rs: Vec<&SweepRow> = rows.iter().filter(|r| r.size == size).collect();
            let col = |f: fn(&SweepRow) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<f64>>();
            SizeSummary {
                size,
                sims: rs.len(),
                corr_raw: MeanSe::of(&col(|r| r.corr_raw)),
                corr_smoothed: MeanSe::of(&col(|r| r.corr_smoothed)),
                mse_data: MeanSe::of(&col(|r| r.mse_data)),
                mse_model: MeanSe::of(&col(|r| r.mse_model)),
                corr_gain: MeanSe::of(&col(|r| r.corr_smoothed - r.corr_raw)),
            }
        })
        .collect()
}

/// Runs every (size, sim) cell in order, reporting each finished row.
pub fn size_sweep(cfg: &SweepConfig, mut progress: impl FnMut(&SweepRow)) -> Result<SweepReport> {
    if cfg.sizes.is_empty() || cfg.sims == 0 {
        return Err(SrmError::Config("sweep needs at least one size and one simulation".into()));
    }
    if let Some(&bad) = cfg.sizes.iter().find(|&&s| s < 2) {
        return Err(SrmError::Config(format!("dataset size {bad} is too small")));
    }
    let mut rows = Vec::with_capacity(cfg.sizes.len() * cfg.sims);
    for &size in &cfg.sizes {
        for sim in 0..cfg.sims {
            let row = run_simulation(size, sim, cfg)?;
            progress(&row);
            rows.push(row);
        }
    }
    Ok(SweepReport {
        summary: summarize(&rows),
        rows,
    })
}
