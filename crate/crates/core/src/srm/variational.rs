//! Mean-field Gaussian variational Bayes for the aggregated softmax choice
//! likelihood, and credible-interval feature pruning built on it.

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analytics::{evaluate, MetricReport};
use crate::dilemma::AggregatedJudgment;
use crate::error::{Result, SrmError};
use crate::features::{drop_constant_columns, expand_interactions, DesignMatrix, FeatureSet};
use crate::models::choice::{logistic, softplus};
use crate::models::{fit_choice_model, ChoiceModel, FitConfig};

/// Half-width of a 95% Gaussian interval in standard deviations.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationalConfig {
    pub prior_sd: f64,
    /// Stochastic ELBO steps after the MAP warm start.
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate at step t is `learning_rate / sqrt(1 + t / decay)`.
    pub decay: f64,
    /// Monte Carlo draws per step.
    pub samples: usize,
    /// Epoch budget for the MAP warm start.
    pub map_epochs: usize,
    pub seed: u64,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        VariationalConfig {
            prior_sd: 0.1,
            steps: 400,
            learning_rate: 0.01,
            decay: 50.0,
            samples: 1,
            map_epochs: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Monte Carlo ELBO estimate at the final parameters (nats).
    pub elbo: f64,
}

impl PosteriorSummary {
    /// Whether the 95% interval of feature `j` excludes zero.
    pub fn significant(&self, j: usize) -> bool {
        self.mean[j].abs() > Z95 * self.sd[j]
    }

    pub fn point_model(&self, fs: &FeatureSet) -> Result<ChoiceModel> {
        ChoiceModel::new(fs.clone(), self.mean.clone())
    }
}

struct Data {
    design: DesignMatrix,
    pos: Vec<f64>,
    total: Vec<f64>,
}

fn kl(mu: &[f64], sigma: &[f64], s0: f64) -> f64 {
    mu.iter()
        .zip(sigma)
        .map(|(m, s)| (s0 / s).ln() + (s * s + m * m) / (2.0 * s0 * s0) - 0.5)
        .sum()
}

/// Approximates the posterior over weights with a diagonal Gaussian.
///
/// The mean starts at the MAP estimate and each sd at the inverse square root
/// of the diagonal posterior precision; Adam then climbs the evidence lower
/// bound with locally reparameterized samples of each dilemma's value gap,
/// and the last quarter of the iterates is averaged.
pub fn fit_variational_blr(
    data: &[AggregatedJudgment],
    fs: &FeatureSet,
    cfg: &VariationalConfig,
) -> Result<PosteriorSummary> {
    if data.is_empty() {
        return Err(SrmError::Data("variational fit needs data".into()));
    }
    if !(cfg.prior_sd > 0.0) || cfg.samples == 0 || !(cfg.learning_rate > 0.0) {
        return Err(SrmError::Config("prior_sd, samples and learning_rate must be positive".into()));
    }
    let s0 = cfg.prior_sd;
    let n_total: f64 = data.iter().map(|j| j.n as f64).sum();
    let d = Data {
        design: DesignMatrix::build(fs, data.iter().map(|j| &j.dilemma)),
        pos: data.iter().map(|j| j.n_save_left as f64).collect(),
        total: data.iter().map(|j| j.n as f64).collect(),
    };
    let k = fs.len();
    let rows = d.design.rows;

    let map = fit_choice_model(
        data,
        fs,
        &FitConfig {
            l2_penalty: 1.0 / (s0 * s0 * n_total),
            max_epochs: cfg.map_epochs,
            tolerance: 1e-12,
            ..FitConfig::default()
        },
    )?;
    let mut mu = map.model.weights().to_vec();
    let mut precision = vec![1.0 / (s0 * s0); k];
    for i in 0..rows {
        let z = d.design.row(i);
        let p = logistic(crate::models::choice::dot(&mu, z));
        let c = d.total[i] * p * (1.0 - p);
        for (h, zj) in precision.iter_mut().zip(z) {
            *h += c * zj * zj;
        }
    }
    let mut rho: Vec<f64> = precision.iter().map(|h| -0.5 * h.ln()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut m1 = vec![0.0; 2 * k];
    let mut m2 = vec![0.0; 2 * k];
    let mut grad = vec![0.0; 2 * k];
    let avg_from = cfg.steps - cfg.steps / 4;
    let mut mu_avg = vec![0.0; k];
    let mut rho_avg = vec![0.0; k];
    let mut n_avg = 0.0;

    for t in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let sigma2: Vec<f64> = rho.iter().map(|r| (2.0 * r).exp()).collect();
        for _ in 0..cfg.samples {
            for i in 0..rows {
                let z = d.design.row(i);
                let mean = crate::models::choice::dot(&mu, z);
                let var: f64 = z.iter().zip(&sigma2).map(|(zj, s2)| zj * zj * s2).sum();
                let e: f64 = StandardNormal.sample(&mut rng);
                let sd = var.sqrt();
                let s = mean + sd * e;
                // d loglik / ds for k successes out of n.
                let g = d.pos[i] - d.total[i] * logistic(s);
                for j in 0..k {
                    if z[j] != 0.0 {
                        grad[j] += g * z[j];
                        if sd > 0.0 {
                            grad[k + j] += g * e * z[j] * z[j] * sigma2[j] / sd;
                        }
                    }
                }
            }
        }
        // Ascent direction on the ELBO, turned into a descent gradient.
        for j in 0..k {
            let gm = grad[j] / cfg.samples as f64 - mu[j] / (s0 * s0);
            let gr = grad[k + j] / cfg.samples as f64 + 1.0 - sigma2[j] / (s0 * s0);
            grad[j] = -gm;
            grad[k + j] = -gr;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(SrmError::Divergence(format!("non-finite ELBO gradient at step {t}")));
        }
        let lr = cfg.learning_rate / (1.0 + t as f64 / cfg.decay).sqrt();
        let tt = (t + 1) as i32;
        for (idx, g) in grad.iter().enumerate() {
            m1[idx] = b1 * m1[idx] + (1.0 - b1) * g;
            m2[idx] = b2 * m2[idx] + (1.0 - b2) * g * g;
            let step = lr * (m1[idx] / (1.0 - b1.powi(tt))) / ((m2[idx] / (1.0 - b2.powi(tt))).sqrt() + eps);
            if idx < k {
                mu[idx] -= step;
            } else {
                rho[idx - k] -= step;
            }
        }
        if t >= avg_from {
            for j in 0..k {
                mu_avg[j] += mu[j];
                rho_avg[j] += rho[j];
            }
            n_avg += 1.0;
        }
    }
    if n_avg > 0.0 {
        mu = mu_avg.iter().map(|m| m / n_avg).collect();
        rho = rho_avg.iter().map(|r| r / n_avg).collect();
    }
    let sd: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
    if mu.iter().chain(&sd).any(|v| !v.is_finite()) || sd.iter().any(|&s| s <= 0.0) {
        return Err(SrmError::Divergence("variational parameters are not finite".into()));
    }

    let mut loglik = 0.0;
    for i in 0..rows {
        let z = d.design.row(i);
        let mean = crate::models::choice::dot(&mu, z);
        let var: f64 = z.iter().zip(&sd).map(|(zj, s)| zj * zj * s * s).sum();
        let e: f64 = StandardNormal.sample(&mut rng);
        let s = mean + var.sqrt() * e;
        loglik -= d.pos[i] * softplus(-s) + (d.total[i] - d.pos[i]) * softplus(s);
    }
    Ok(PosteriorSummary {
        names: fs.names().map(str::to_string).collect(),
        elbo: loglik - kl(&mu, &sd, s0),
        mean: mu,
        sd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// 1 keeps the base features as candidates; 2 or 3 adds interactions.
    pub max_order: usize,
    pub max_rounds: usize,
    /// Drop candidates that never differ between sides before the first fit.
    pub drop_constant: bool,
    pub variational: VariationalConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            max_order: 3,
            max_rounds: 20,
            drop_constant: true,
            variational: VariationalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRound {
    pub round: usize,
    pub n_features: usize,
    pub dropped: Vec<String>,
    /// In-sample fit of the posterior-mean model.
    pub metrics: MetricReport,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub features: FeatureSet,
    pub posterior: Option<PosteriorSummary>,
    pub trajectory: Vec<SelectionRound>,
    pub warnings: Vec<String>,
}

/// Repeatedly fits the variational posterior and removes every feature whose
/// 95% interval contains zero, until none is removed or the round budget runs
/// out. Feature counts never increase along the trajectory.
pub fn selection_loop(
    data: &[AggregatedJudgment],
    base: &FeatureSet,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    let mut fs = match cfg.max_order {
        1 => base.clone(),
        2 | 3 => expand_interactions(base, cfg.max_order)?,
        other => return Err(SrmError::Config(format!("max_order must be 1, 2 or 3, got {other}"))),
    };
    if cfg.drop_constant {
        fs = drop_constant_columns(&fs, data.iter().map(|j| &j.dilemma));
    }
    let mut trajectory = Vec::new();
    let mut warnings = Vec::new();
    let mut posterior = None;
    for round in 1..=cfg.max_rounds {
        if fs.is_empty() {
            break;
        }
        let post = fit_variational_blr(
            data,
            &fs,
            &VariationalConfig {
                seed: cfg.variational.seed.wrapping_add(round as u64),
                ..cfg.variational.clone()
            },
        )?;
        let keep: Vec<usize> = (0..fs.len()).filter(|&j| post.significant(j)).collect();
        let dropped: Vec<String> = (0..fs.len())
            .filter(|j| !keep.contains(j))
            .map(|j| post.names[j].clone())
            .collect();
        let metrics = evaluate(&post.point_model(&fs)?, data)?;
        info!("selection round {round}: {} features, dropping {}", fs.len(), dropped.len());
        trajectory.push(SelectionRound {
            round,
            n_features: fs.len(),
            dropped: dropped.clone(),
            metrics,
        });
        if dropped.is_empty() {
            posterior = Some(post);
            break;
        }
        fs = fs.subset(&keep);
        if round == cfg.max_rounds {
            warnings.push(format!("stopped after {round} rounds with features still being removed"));
        }
    }
    if fs.is_empty() {
        warnings.push("every candidate feature was removed".into());
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(SelectionResult {
        features: fs,
        posterior,
        trajectory,
        warnings,
    })
}
