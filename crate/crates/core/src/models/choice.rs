//! Softmax choice models over side-level features, fitted by maximum
//! likelihood on aggregated judgments.

use log::warn;
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::dilemma::{AggregatedJudgment, Dilemma};
use crate::error::{Result, SrmError};
use crate::features::{evaluate_features, DesignMatrix, FeatureSet};

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceModel {
    features: FeatureSet,
    weights: Vec<f64>,
}

impl ChoiceModel {
    pub fn new(features: FeatureSet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != features.len() {
            return Err(SrmError::LengthMismatch {
                expected: features.len(),
                actual: weights.len(),
            });
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(SrmError::Data(format!("weight {i} is not finite")));
        }
        Ok(ChoiceModel { features, weights })
    }

    pub fn zeros(features: FeatureSet) -> Self {
        let weights = vec![0.0; features.len()];
        ChoiceModel { features, weights }
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, name: &str) -> Option<f64> {
        self.features
            .names()
            .position(|n| n == name)
            .map(|i| self.weights[i])
    }

    /// Value of one side: the weighted sum of its feature values.
    pub fn side_value(&self, x_side: &[f64]) -> Result<f64> {
        if x_side.len() != self.weights.len() {
            return Err(SrmError::LengthMismatch {
                expected: self.weights.len(),
                actual: x_side.len(),
            });
        }
        Ok(dot(&self.weights, x_side))
    }

    pub fn side_values(&self, d: &Dilemma) -> (f64, f64) {
        let (xl, xr) = evaluate_features(&self.features, d);
        (dot(&self.weights, &xl), dot(&self.weights, &xr))
    }
}

impl Predictor for ChoiceModel {
    fn predict_save_left(&self, d: &Dilemma) -> f64 {
        let (vl, vr) = self.side_values(d);
        softmax_left(vl, vr)
    }

    fn n_params(&self) -> usize {
        self.weights.len()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-way softmax with the larger value subtracted first.
pub fn softmax_left(v_left: f64, v_right: f64) -> f64 {
    let m = v_left.max(v_right);
    let el = (v_left - m).exp();
    let er = (v_right - m).exp();
    el / (el + er)
}

#[inline]
pub(crate) fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
#[inline]
pub(crate) fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub step_size: f64,
    pub max_epochs: usize,
    /// Stop once an accepted step lowers the per-judgment NLL by less.
    pub tolerance: f64,
    pub l2_penalty: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            step_size: 0.1,
            max_epochs: 500,
            tolerance: 1e-8,
            l2_penalty: 0.0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(SrmError::Config("step_size must be positive".into()));
        }
        if !(self.l2_penalty >= 0.0) {
            return Err(SrmError::Config("l2_penalty must be non-negative".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(SrmError::Config("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitWarning {
    /// No feature ever differs between the two sides.
    Singular,
    /// These features never differ between sides; their weights stay at 0.
    ConstantFeatures { names: Vec<String> },
    /// Feature columns that are exact multiples of each other.
    Collinear { pairs: Vec<(String, String)> },
    /// `max_epochs` was reached before the tolerance was met.
    NotConverged { epochs: usize },
}

impl std::fmt::Display for FitWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FitWarning::Singular => f.write_str("singular fit: no feature differs between sides"),
            FitWarning::ConstantFeatures { names } => {
                write!(f, "features never differ between sides: {}", names.join(", "))
            }
            FitWarning::Collinear { pairs } => {
                let p: Vec<String> = pairs.iter().map(|(a, b)| format!("{a}~{b}")).collect();
                write!(f, "collinear features: {}", p.join(", "))
            }
            FitWarning::NotConverged { epochs } => {
                write!(f, "stopped after {epochs} epochs before reaching tolerance")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChoiceFit {
    pub model: ChoiceModel,
    pub epochs: usize,
    pub converged: bool,
    /// Per-judgment NLL after each accepted step, starting from zero weights.
    pub loss_trace: Vec<f64>,
    pub warnings: Vec<FitWarning>,
}

/// Aggregated negative log-likelihood (per judgment) and its gradient.
struct Objective<'a> {
    design: &'a DesignMatrix,
    pos: Vec<f64>,
    total: Vec<f64>,
    n_total: f64,
    l2: f64,
}

impl Objective<'_> {
    fn loss(&self, w: &[f64]) -> f64 {
        let mut nll = 0.0;
        for i in 0..self.design.rows {
            let s = dot(w, self.design.row(i));
            let k = self.pos[i];
            nll += k * softplus(-s) + (self.total[i] - k) * softplus(s);
        }
        nll / self.n_total + 0.5 * self.l2 * dot(w, w)
    }

    fn gradient(&self, w: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..self.design.rows {
            let row = self.design.row(i);
            let r = self.total[i] * logistic(dot(w, row)) - self.pos[i];
            for (g, z) in grad.iter_mut().zip(row) {
                *g += r * z;
            }
        }
        for (g, wi) in grad.iter_mut().zip(w) {
            *g = *g / self.n_total + self.l2 * wi;
        }
    }
}

const ARMIJO: f64 = 1e-4;
const STEP_GROWTH: f64 = 1.25;
const MAX_HALVINGS: usize = 60;

/// Fits weights by full-batch gradient descent with backtracking on the
/// aggregated likelihood. Every accepted step lowers the objective, so the
/// loss trace is non-increasing.
pub fn fit_choice_model(
    data: &[AggregatedJudgment],
    features: &FeatureSet,
    cfg: &FitConfig,
) -> Result<ChoiceFit> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(SrmError::Data("cannot fit a choice model to an empty dataset".into()));
    }
    let design = DesignMatrix::build(features, data.iter().map(|j| &j.dilemma));
    let mut warnings = diagnose(features, &design);

    let objective = Objective {
        design: &design,
        pos: data.iter().map(|j| j.n_save_left as f64).collect(),
        total: data.iter().map(|j| j.n as f64).collect(),
        n_total: data.iter().map(|j| j.n as f64).sum(),
        l2: cfg.l2_penalty,
    };

    let p = features.len();
    let mut w = vec![0.0; p];
    let mut loss = objective.loss(&w);
    let mut trace = vec![loss];
    let mut grad = vec![0.0; p];
    let mut trial = vec![0.0; p];
    let mut step = cfg.step_size;
    let mut converged = p == 0;
    let mut epochs = 0;

    while !converged && epochs < cfg.max_epochs {
        epochs += 1;
        objective.gradient(&w, &mut grad);
        let gnorm2 = dot(&grad, &grad);
        if !gnorm2.is_finite() {
            return Err(SrmError::Divergence(format!("gradient is not finite at epoch {epochs}")));
        }
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            for ((t, wi), g) in trial.iter_mut().zip(&w).zip(&grad) {
                *t = wi - step * g;
            }
            let l = objective.loss(&trial);
            if l.is_finite() && l <= loss - ARMIJO * step * gnorm2 {
                accepted = Some(l);
                break;
            }
            step *= 0.5;
        }
        let Some(new_loss) = accepted else {
            // No descent step exists at floating-point resolution.
            converged = true;
            break;
        };
        std::mem::swap(&mut w, &mut trial);
        let improvement = loss - new_loss;
        loss = new_loss;
        trace.push(loss);
        step *= STEP_GROWTH;
        if improvement < cfg.tolerance {
            converged = true;
        }
    }
    if !loss.is_finite() {
        return Err(SrmError::Divergence("loss is not finite".into()));
    }
    if !converged {
        warnings.push(FitWarning::NotConverged { epochs });
    }
    for wrn in &warnings {
        warn!("{wrn}");
    }
    Ok(ChoiceFit {
        model: ChoiceModel::new(features.clone(), w)?,
        epochs,
        converged,
        loss_trace: trace,
        warnings,
    })
}

fn diagnose(features: &FeatureSet, design: &DesignMatrix) -> Vec<FitWarning> {
    let mut out = Vec::new();
    if features.is_empty() {
        return out;
    }
    let constant = design.constant_columns();
    let names: Vec<&str> = features.names().collect();
    if constant.len() == features.len() {
        out.push(FitWarning::Singular);
    } else if !constant.is_empty() {
        out.push(FitWarning::ConstantFeatures {
            names: constant.iter().map(|&j| names[j].to_string()).collect(),
        });
    }
    let pairs = design.proportional_columns();
    if !pairs.is_empty() {
        out.push(FitWarning::Collinear {
            pairs: pairs
                .into_iter()
                .map(|(a, b)| (names[a].to_string(), names[b].to_string()))
                .collect(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilemma::{figure_one_dilemma, mirror, AgentCounts, AgentType, Side, Signal};
    use crate::features::{hybrid_feature_set, parse_feature_spec};
    use crate::models::nll;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_weights_value_zero() {
        let m = ChoiceModel::zeros(hybrid_feature_set());
        let (vl, vr) = m.side_values(&figure_one_dilemma());
        assert_eq!((vl, vr), (0.0, 0.0));
        assert_eq!(m.predict_save_left(&figure_one_dilemma()), 0.5);
    }

    #[test]
    fn side_value_is_weighted_sum() {
        let fs = parse_feature_spec("count Girl\ncount OldWoman\n").unwrap();
        let m = ChoiceModel::new(fs, vec![1.291, 0.365]).unwrap();
        assert_relative_eq!(m.side_value(&[1.0, 1.0]).unwrap(), 1.656, epsilon = 1e-12);
        assert_relative_eq!(m.side_value(&[2.0, 2.0]).unwrap(), 2.0 * 1.656, epsilon = 1e-12);
        assert!(matches!(
            m.side_value(&[1.0]),
            Err(SrmError::LengthMismatch {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn rejects_misaligned_or_non_finite_weights() {
        let fs = parse_feature_spec("count Girl\n").unwrap();
        assert!(ChoiceModel::new(fs.clone(), vec![]).is_err());
        assert!(ChoiceModel::new(fs, vec![f64::NAN]).is_err());
    }

    #[test]
    fn softmax_values() {
        assert_eq!(softmax_left(2.0, 2.0), 0.5);
        assert_relative_eq!(softmax_left(3f64.ln(), 0.0), 0.75, epsilon = 1e-15);
        assert_relative_eq!(softmax_left(1000.0, 1000.0 - 3f64.ln()), 0.75, epsilon = 1e-12);
        assert_eq!(softmax_left(50.0, 0.0), 1.0);
    }

    fn toy_data() -> Vec<AggregatedJudgment> {
        let mk = |id: &str, l: &[(AgentType, u32)], r: &[(AgentType, u32)], sig, car, n, k| {
            AggregatedJudgment::new(
                Dilemma {
                    id: id.into(),
                    left: AgentCounts::from_pairs(l),
                    right: AgentCounts::from_pairs(r),
                    signal_left: sig,
                    car_side: car,
                },
                n,
                k,
            )
            .unwrap()
        };
        vec![
            mk("a", &[(AgentType::Man, 1)], &[(AgentType::Dog, 1)], Signal::None, Side::Left, 40, 31),
            mk("b", &[(AgentType::Cat, 2)], &[(AgentType::Man, 1)], Signal::Legal, Side::Right, 25, 9),
            mk("c", &[(AgentType::Man, 2)], &[(AgentType::Man, 1), (AgentType::Cat, 1)], Signal::Illegal, Side::Left, 60, 38),
            mk("d", &[(AgentType::Dog, 1)], &[(AgentType::Cat, 1), (AgentType::Man, 1)], Signal::None, Side::Right, 15, 2),
        ]
    }

    #[test]
    fn empty_feature_set_predicts_half() {
        let data = toy_data();
        let fit = fit_choice_model(&data, &FeatureSet::default(), &FitConfig::default()).unwrap();
        let total: u64 = data.iter().map(|j| j.n).sum();
        for j in &data {
            assert_eq!(fit.model.predict_save_left(&j.dilemma), 0.5);
        }
        assert_relative_eq!(nll(&fit.model, &data) / total as f64, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gradient_descent_reaches_stationary_point() {
        let data = toy_data();
        let fs = parse_feature_spec("count Man\ncount Dog\ncount Cat\nindicator swerve intervention\n")
            .unwrap();
        let cfg = FitConfig {
            max_epochs: 20_000,
            tolerance: 1e-15,
            ..FitConfig::default()
        };
        let fit = fit_choice_model(&data, &fs, &cfg).unwrap();
        assert!(fit.loss_trace.windows(2).all(|w| w[1] <= w[0]));
        // Score equations: sum_d (k_d - n_d p_d) z_d = 0 at the optimum.
        let design = DesignMatrix::build(&fs, data.iter().map(|j| &j.dilemma));
        for col in 0..fs.len() {
            let score: f64 = data
                .iter()
                .enumerate()
                .map(|(i, j)| {
                    let p = fit.model.predict_save_left(&j.dilemma);
                    (j.n_save_left as f64 - j.n as f64 * p) * design.row(i)[col]
                })
                .sum();
            assert!(score.abs() < 1e-4, "column {col}: score {score}");
        }
    }

    #[test]
    fn duplicated_records_leave_argmin_unchanged() {
        let data = toy_data();
        let doubled: Vec<_> = data.iter().chain(data.iter()).cloned().collect();
        let fs = parse_feature_spec("count Man\ncount Dog\nindicator swerve intervention\n").unwrap();
        let cfg = FitConfig {
            max_epochs: 20_000,
            tolerance: 1e-15,
            ..FitConfig::default()
        };
        let a = fit_choice_model(&data, &fs, &cfg).unwrap().model;
        let b = fit_choice_model(&doubled, &fs, &cfg).unwrap().model;
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert_relative_eq!(x, y, epsilon = 1e-6);
        }
    }

    #[test]
    fn singular_and_collinear_warnings() {
        let data = toy_data();
        let fs = parse_feature_spec("count Pregnant\n").unwrap();
        let fit = fit_choice_model(&data, &fs, &FitConfig::default()).unwrap();
        assert!(fit.warnings.contains(&FitWarning::Singular));

        let fs = parse_feature_spec("count Man\nindicator ill signal:illegal\nindicator leg signal:legal\n")
            .unwrap();
        let fit = fit_choice_model(&data, &fs, &FitConfig::default()).unwrap();
        assert!(fit.warnings.iter().any(|w| matches!(w, FitWarning::Collinear { .. })));
    }

    #[test]
    fn huge_step_is_tamed_by_backtracking() {
        let data = toy_data();
        let fs = parse_feature_spec("count Man\ncount Dog\n").unwrap();
        let cfg = FitConfig {
            step_size: 1e6,
            ..FitConfig::default()
        };
        let fit = fit_choice_model(&data, &fs, &cfg).unwrap();
        assert!(fit.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_config_and_empty_data() {
        let fs = hybrid_feature_set();
        assert!(fit_choice_model(&[], &fs, &FitConfig::default()).is_err());
        let bad = FitConfig {
            step_size: 0.0,
            ..FitConfig::default()
        };
        assert!(fit_choice_model(&toy_data(), &fs, &bad).is_err());
    }

    proptest! {
        #[test]
        fn mirror_antisymmetry(
            d in crate::dilemma::tests::arb_dilemma(),
            w in proptest::collection::vec(-3.0f64..3.0, 24),
        ) {
            let fs = parse_feature_spec(&format!(
                "{}indicator hva axis:humans_vs_animals:favored\nindicator yo (and axis:young_vs_old:favored signal:illegal)\n",
                crate::features::hybrid_spec_text()
            )).unwrap();
            let m = ChoiceModel::new(fs, w).unwrap();
            let p = m.predict_save_left(&d);
            let q = m.predict_save_left(&mirror(&d));
            prop_assert!((p + q - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_shift_invariance(a in -30.0f64..30.0, b in -30.0f64..30.0, c in -100.0f64..100.0) {
            prop_assert!((softmax_left(a, b) - softmax_left(a + c, b + c)).abs() < 1e-12);
        }
    }
}
