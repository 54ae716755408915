//! Synthetic ground truths: the noisy polynomial regression demo and a
//! dilemma population sampler whose judgments come from a known choice model.

use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dilemma::{AgentCounts, AgentType, AggregatedJudgment, Dilemma, RegressionPoint, Side, Signal};
use crate::error::{Result, SrmError};
use crate::features::{axes, axis_id, parse_feature_spec, AxisKind};
use crate::models::{ChoiceModel, Predictor};

/// f(x) = 3x(x-2)^2(x+2)^2(x+1).
pub fn polynomial(x: f64) -> f64 {
    3.0 * x * (x - 2.0).powi(2) * (x + 2.0).powi(2) * (x + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolynomialConfig {
    pub noise_sd: f64,
    pub domain: (f64, f64),
    /// x is rounded to this many decimals after sampling.
    pub decimals: u32,
}

impl Default for PolynomialConfig {
    fn default() -> Self {
        PolynomialConfig {
            noise_sd: 10.0,
            domain: (-2.5, 2.5),
            decimals: 3,
        }
    }
}

/// The generating process behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticTruth {
    Polynomial(PolynomialConfig),
    Choice(ChoiceModel),
}

impl SyntheticTruth {
    /// Noise-free regression value, or `None` for a choice truth.
    pub fn regression_mean(&self, x: f64) -> Option<f64> {
        match self {
            SyntheticTruth::Polynomial(_) => Some(polynomial(x)),
            SyntheticTruth::Choice(_) => None,
        }
    }

    pub fn save_left_probability(&self, d: &Dilemma) -> Option<f64> {
        match self {
            SyntheticTruth::Choice(m) => Some(m.predict_save_left(d)),
            SyntheticTruth::Polynomial(_) => None,
        }
    }
}

pub fn gen_polynomial_dataset(n: usize, seed: u64) -> Vec<RegressionPoint> {
    gen_polynomial_dataset_with(n, seed, &PolynomialConfig::default())
        .expect("default polynomial config is valid")
}

pub fn gen_polynomial_dataset_with(n: usize, seed: u64, cfg: &PolynomialConfig) -> Result<Vec<RegressionPoint>> {
    let (lo, hi) = cfg.domain;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(SrmError::Config(format!("empty domain [{lo}, {hi}]")));
    }
    let noise = Normal::new(0.0, cfg.noise_sd)
        .map_err(|e| SrmError::Config(format!("noise_sd {}: {e}", cfg.noise_sd)))?;
    let scale = 10f64.powi(cfg.decimals as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let x = (rng.random_range(lo..=hi) * scale).round() / scale;
            let y = polynomial(x) + noise.sample(&mut rng);
            RegressionPoint { x, y }
        })
        .collect())
}

/// Probabilities of each left-side crossing signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMix {
    pub legal_left: f64,
    pub illegal_left: f64,
    pub none: f64,
}

impl Default for SignalMix {
    fn default() -> Self {
        SignalMix {
            legal_left: 0.35,
            illegal_left: 0.35,
            none: 0.3,
        }
    }
}

impl SignalMix {
    fn sample(&self, rng: &mut impl Rng) -> Signal {
        let u: f64 = rng.random::<f64>() * (self.legal_left + self.illegal_left + self.none);
        if u < self.legal_left {
            Signal::Legal
        } else if u < self.legal_left + self.illegal_left {
            Signal::Illegal
        } else {
            Signal::None
        }
    }
}

/// How many respondents answer each dilemma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JudgmentCounts {
    Fixed { n: u64 },
    LogUniform { min: u64, max: u64 },
}

impl JudgmentCounts {
    fn sample(&self, rng: &mut impl Rng) -> u64 {
        match *self {
            JudgmentCounts::Fixed { n } => n,
            JudgmentCounts::LogUniform { min, max } => {
                if min == max {
                    return min;
                }
                let v = rng.random_range((min as f64).ln()..=(max as f64).ln()).exp();
                (v.round() as u64).clamp(min, max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationConfig {
    pub n_dilemmas: usize,
    /// Inclusive range of agents on each side.
    pub agents_per_side: (u32, u32),
    pub judgments_per_dilemma: JudgmentCounts,
    /// Share of dilemmas built as a controlled contrast along one axis.
    pub axis_structured_fraction: f64,
    pub signal_mix: SignalMix,
    /// Axes the structured recipe draws from.
    pub axes: Vec<String>,
    pub car_left_probability: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_dilemmas: 1000,
            agents_per_side: (1, 5),
            judgments_per_dilemma: JudgmentCounts::LogUniform { min: 20, max: 5000 },
            axis_structured_fraction: 0.8,
            signal_mix: SignalMix::default(),
            axes: axes::PRIMARY_AXES.iter().map(|s| s.to_string()).collect(),
            car_left_probability: 0.5,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.agents_per_side;
        if lo == 0 || lo > hi {
            return Err(SrmError::Config(format!(
                "agents_per_side ({lo}, {hi}) must satisfy 1 <= min <= max"
            )));
        }
        if !(0.0..=1.0).contains(&self.axis_structured_fraction) {
            return Err(SrmError::Config("axis_structured_fraction must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.car_left_probability) {
            return Err(SrmError::Config("car_left_probability must lie in [0, 1]".into()));
        }
        let m = self.signal_mix;
        if [m.legal_left, m.illegal_left, m.none].iter().any(|p| !(*p >= 0.0))
            || (m.legal_left + m.illegal_left + m.none - 1.0).abs() > 1e-6
        {
            return Err(SrmError::Config("signal_mix must be non-negative and sum to 1".into()));
        }
        match self.judgments_per_dilemma {
            JudgmentCounts::Fixed { n: 0 } => {
                return Err(SrmError::Config("judgment count must be positive".into()))
            }
            JudgmentCounts::LogUniform { min, max } if min == 0 || min > max => {
                return Err(SrmError::Config(format!(
                    "judgment range [{min}, {max}] must satisfy 1 <= min <= max"
                )))
            }
            _ => {}
        }
        if self.axis_structured_fraction > 0.0 && self.n_dilemmas > 0 {
            if self.axes.is_empty() {
                return Err(SrmError::Config("structured sampling needs at least one axis".into()));
            }
            for name in &self.axes {
                if axis_id(name)?.axis().kind == AxisKind::MoreVsLess && hi < lo + 1 {
                    return Err(SrmError::Config(format!(
                        "{name} needs sides of different sizes but agents_per_side is ({lo}, {hi})"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn draw_agents(counts: &mut AgentCounts, pool: &[AgentType], k: u32, rng: &mut impl Rng) {
    for _ in 0..k {
        counts.add(*pool.choose(rng).expect("non-empty pool"), 1);
    }
}

fn structured_sides(axis: &'static axes::Axis, cfg: &PopulationConfig, rng: &mut impl Rng) -> (AgentCounts, AgentCounts) {
    let (lo, hi) = cfg.agents_per_side;
    let mut shared = AgentCounts::default();
    match axis.kind {
        AxisKind::Contrast {
            favored,
            disfavored,
        } => {
            let m = rng.random_range(1..=hi);
            let s = rng.random_range(lo.saturating_sub(m)..=hi - m);
            draw_agents(&mut shared, &AgentType::ALL, s, rng);
            let (mut fav, mut dis) = (shared, shared);
            draw_agents(&mut fav, favored, m, rng);
            draw_agents(&mut dis, disfavored, m, rng);
            (fav, dis)
        }
        AxisKind::MoreVsLess => {
            let s = rng.random_range(lo..hi);
            let m = rng.random_range(1..=hi - s);
            draw_agents(&mut shared, &AgentType::ALL, s, rng);
            let mut more = shared;
            draw_agents(&mut more, &AgentType::ALL, m, rng);
            (more, shared)
        }
    }
}

fn uniform_side(cfg: &PopulationConfig, rng: &mut impl Rng) -> AgentCounts {
    let (lo, hi) = cfg.agents_per_side;
    let mut c = AgentCounts::default();
    let k = rng.random_range(lo..=hi);
    draw_agents(&mut c, &AgentType::ALL, k, rng);
    c
}

/// Samples `n_dilemmas` distinct scenarios with ids `d0000000`, `d0000001`, ...
pub fn sample_dilemma_population(cfg: &PopulationConfig, seed: u64) -> Result<Vec<Dilemma>> {
    cfg.validate()?;
    let axis_list: Vec<&'static axes::Axis> = cfg
        .axes
        .iter()
        .map(|n| axis_id(n).map(|id| id.axis()))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(cfg.n_dilemmas);
    let mut out = Vec::with_capacity(cfg.n_dilemmas);
    let max_attempts = 1000 + 100 * cfg.n_dilemmas;
    let mut attempts = 0;
    while out.len() < cfg.n_dilemmas {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SrmError::Config(format!(
                "could only draw {} distinct dilemmas of the {} requested",
                out.len(),
                cfg.n_dilemmas
            )));
        }
        let (left, right) = if rng.random_bool(cfg.axis_structured_fraction) {
            let axis = axis_list.choose(&mut rng).expect("validated non-empty");
            let (favored, other) = structured_sides(axis, cfg, &mut rng);
            if rng.random_bool(0.5) {
                (favored, other)
            } else {
                (other, favored)
            }
        } else {
            (uniform_side(cfg, &mut rng), uniform_side(cfg, &mut rng))
        };
        let signal_left = cfg.signal_mix.sample(&mut rng);
        let car_side = if rng.random_bool(cfg.car_left_probability) {
            Side::Left
        } else {
            Side::Right
        };
        if !seen.insert((left, right, signal_left, car_side)) {
            continue;
        }
        out.push(Dilemma {
            id: format!("d{:07}", out.len()),
            left,
            right,
            signal_left,
            car_side,
        });
    }
    Ok(out)
}

/// Draws `n` softmax choosers for `d` under `truth`.
pub fn sample_judgments(truth: &dyn Predictor, d: &Dilemma, n: u64, seed: u64) -> Result<AggregatedJudgment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(truth.predict_save_left(d), d, n, &mut rng)
}

fn sample_with(p: f64, d: &Dilemma, n: u64, rng: &mut impl Rng) -> Result<AggregatedJudgment> {
    let binom = Binomial::new(n, p.clamp(0.0, 1.0))
        .map_err(|e| SrmError::Data(format!("dilemma {}: {e}", d.id)))?;
    AggregatedJudgment::new(d.clone(), n, binom.sample(rng))
}

/// A population with judgments drawn from `truth`. Each dilemma gets its own
/// seed from a stream derived from `seed`, so datasets are reproducible.
pub fn generate_dataset(cfg: &PopulationConfig, truth: &dyn Predictor, seed: u64) -> Result<Vec<AggregatedJudgment>> {
    let dilemmas = sample_dilemma_population(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let preds = truth.predict_many(&dilemmas);
    dilemmas
        .iter()
        .zip(preds)
        .map(|(d, p)| {
            let n = cfg.judgments_per_dilemma.sample(&mut rng);
            sample_with(p, d, n, &mut rng)
        })
        .collect()
}

/// Truth model file: feature-spec text plus named weights; unnamed features
/// get weight 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub features: String,
    pub weights: BTreeMap<String, f64>,
}

impl TruthSpec {
    pub fn from_model(m: &ChoiceModel) -> Self {
        TruthSpec {
            features: m.features().to_spec_text(),
            weights: m
                .features()
                .names()
                .zip(m.weights())
                .map(|(n, &w)| (n.to_string(), w))
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<ChoiceModel> {
        let fs = parse_feature_spec(&self.features)?;
        if let Some(bad) = self.weights.keys().find(|k| fs.get(k).is_none()) {
            return Err(SrmError::Config(format!("truth weight for unknown feature `{bad}`")));
        }
        let w = fs.names().map(|n| self.weights.get(n).copied().unwrap_or(0.0)).collect();
        ChoiceModel::new(fs, w)
    }
}
