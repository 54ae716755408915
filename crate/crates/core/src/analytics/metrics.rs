//! Judgment-weighted fit metrics and the binned train/test split.

use std::cmp::Ordering;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dilemma::{AggregatedJudgment, Dilemma};
use crate::error::{Result, SrmError};
use crate::models::{nll_from_predictions, Predictor};

pub const BIN_SIZE: usize = 5;

/// Indices into the input of the train and test dilemmas, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn apply(&self, data: &[AggregatedJudgment]) -> (Vec<AggregatedJudgment>, Vec<AggregatedJudgment>) {
        (
            self.train.iter().map(|&i| data[i].clone()).collect(),
            self.test.iter().map(|&i| data[i].clone()).collect(),
        )
    }
}

/// Sorts dilemmas by `n` (descending, ties by id), cuts bins of five and sends
/// one random member of each bin to the test set. Members of a trailing
/// partial bin go to test independently with probability 1/5.
pub fn binned_split_indices(data: &[AggregatedJudgment], seed: u64) -> Result<SplitIndices> {
    if data.len() < BIN_SIZE {
        return Err(SrmError::Data(format!(
            "binned split needs at least {BIN_SIZE} dilemmas, got {}",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        data[b]
            .n
            .cmp(&data[a].n)
            .then_with(|| data[a].dilemma.id.cmp(&data[b].dilemma.id))
            .then(a.cmp(&b))
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; data.len()];
    for bin in order.chunks(BIN_SIZE) {
        if bin.len() == BIN_SIZE {
            is_test[*bin.choose(&mut rng).expect("full bin")] = true;
        } else {
            for &i in bin {
                is_test[i] = rng.random_bool(1.0 / BIN_SIZE as f64);
            }
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| is_test[i]);
    Ok(SplitIndices { train, test })
}

pub fn binned_split(
    data: &[AggregatedJudgment],
    seed: u64,
) -> Result<(Vec<AggregatedJudgment>, Vec<AggregatedJudgment>)> {
    Ok(binned_split_indices(data, seed)?.apply(data))
}

fn check_aligned(preds: &[f64], data: &[AggregatedJudgment]) -> Result<()> {
    if preds.len() != data.len() {
        return Err(SrmError::LengthMismatch {
            expected: data.len(),
            actual: preds.len(),
        });
    }
    if data.is_empty() {
        return Err(SrmError::Undefined("metric over an empty dataset".into()));
    }
    Ok(())
}

fn total_judgments(data: &[AggregatedJudgment]) -> f64 {
    data.iter().map(|j| j.n as f64).sum()
}

/// Share of individual judgments matching the predicted majority; a
/// prediction of exactly 0.5 earns half credit.
pub fn accuracy(preds: &[f64], data: &[AggregatedJudgment]) -> Result<f64> {
    check_aligned(preds, data)?;
    let correct: f64 = preds
        .iter()
        .zip(data)
        .map(|(&p, j)| match p.partial_cmp(&0.5) {
            Some(Ordering::Greater) => j.n_save_left as f64,
            Some(Ordering::Less) => j.n_save_right() as f64,
            _ => j.n as f64 / 2.0,
        })
        .sum();
    Ok(correct / total_judgments(data))
}

/// Exact Mann-Whitney AUC where each dilemma contributes `n_save_left`
/// positives and the rest negatives, all scored at its prediction.
pub fn auc(preds: &[f64], data: &[AggregatedJudgment]) -> Result<f64> {
    check_aligned(preds, data)?;
    if preds.iter().any(|p| p.is_nan()) {
        return Err(SrmError::Undefined("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    let (mut pos_total, mut neg_total) = (0u128, 0u128);
    // Twice the count of correctly ordered pairs, plus one per tied pair.
    let mut twice_wins = 0u128;
    let mut start = 0;
    while start < order.len() {
        let score = preds[order[start]];
        let mut end = start;
        let (mut pos, mut neg) = (0u128, 0u128);
        while end < order.len() && preds[order[end]] == score {
            pos += u128::from(data[order[end]].n_save_left);
            neg += u128::from(data[order[end]].n_save_right());
            end += 1;
        }
        twice_wins += 2 * pos * neg_total + pos * neg;
        pos_total += pos;
        neg_total += neg;
        start = end;
    }
    if pos_total == 0 || neg_total == 0 {
        return Err(SrmError::Undefined("AUC needs both positive and negative judgments".into()));
    }
    Ok(twice_wins as f64 / (2.0 * pos_total as f64 * neg_total as f64))
}

/// (2k + 2 NLL) / N, with N the number of judgments.
pub fn normalized_aic(preds: &[f64], data: &[AggregatedJudgment], n_params: usize) -> Result<f64> {
    check_aligned(preds, data)?;
    Ok((2.0 * n_params as f64 + 2.0 * nll_from_predictions(preds, data)) / total_judgments(data))
}

/// In-sample accuracy of always predicting each dilemma's majority choice.
pub fn empirical_upper_bound(data: &[AggregatedJudgment]) -> Result<f64> {
    if data.is_empty() {
        return Err(SrmError::Undefined("upper bound over an empty dataset".into()));
    }
    let best: f64 = data
        .iter()
        .map(|j| j.n_save_left.max(j.n_save_right()) as f64)
        .sum();
    Ok(best / total_judgments(data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub dilemmas: usize,
    pub judgments: u64,
    /// Judgment-weighted means.
    pub mean_predicted: f64,
    pub mean_observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub slope: f64,
    pub intercept: f64,
    pub dilemmas: usize,
    pub bins: Vec<CalibrationBin>,
}

/// Judgment-weighted least-squares line of observed on predicted proportions
/// over dilemmas with at least `min_n` judgments, plus decile bins.
pub fn calibration(preds: &[f64], data: &[AggregatedJudgment], min_n: u64) -> Result<Calibration> {
    check_aligned(preds, data)?;
    let rows: Vec<(f64, f64, f64)> = preds
        .iter()
        .zip(data)
        .filter(|(_, j)| j.n >= min_n)
        .map(|(&p, j)| (p, j.p_data(), j.n as f64))
        .collect();
    if rows.is_empty() {
        return Err(SrmError::Undefined(format!("no dilemma has n >= {min_n}")));
    }
    let w: f64 = rows.iter().map(|r| r.2).sum();
    let mx = rows.iter().map(|r| r.2 * r.0).sum::<f64>() / w;
    let my = rows.iter().map(|r| r.2 * r.1).sum::<f64>() / w;
    let sxx: f64 = rows.iter().map(|r| r.2 * (r.0 - mx).powi(2)).sum();
    let sxy: f64 = rows.iter().map(|r| r.2 * (r.0 - mx) * (r.1 - my)).sum();
    if sxx <= 1e-12 * w {
        return Err(SrmError::Undefined("calibration slope undefined: constant predictions".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;

    let mut bins: Vec<CalibrationBin> = (0..10)
        .map(|b| CalibrationBin {
            lower: b as f64 / 10.0,
            upper: (b + 1) as f64 / 10.0,
            dilemmas: 0,
            judgments: 0,
            mean_predicted: 0.0,
            mean_observed: 0.0,
        })
        .collect();
    for &(p, y, n) in &rows {
        let b = &mut bins[((p * 10.0).floor() as usize).min(9)];
        b.dilemmas += 1;
        b.judgments += n as u64;
        b.mean_predicted += n * p;
        b.mean_observed += n * y;
    }
    for b in &mut bins {
        if b.judgments > 0 {
            b.mean_predicted /= b.judgments as f64;
            b.mean_observed /= b.judgments as f64;
        }
    }
    Ok(Calibration {
        slope,
        intercept,
        dilemmas: rows.len(),
        bins,
    })
}

/// Fit summary for one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub auc: f64,
    pub normalized_aic: f64,
    pub nll_per_judgment: f64,
    pub n_params: usize,
    pub n_test_judgments: u64,
}

pub fn metric_report(preds: &[f64], data: &[AggregatedJudgment], n_params: usize) -> Result<MetricReport> {
    check_aligned(preds, data)?;
    let n: u64 = data.iter().map(|j| j.n).sum();
    Ok(MetricReport {
        accuracy: accuracy(preds, data)?,
        auc: auc(preds, data)?,
        normalized_aic: normalized_aic(preds, data, n_params)?,
        nll_per_judgment: nll_from_predictions(preds, data) / n as f64,
        n_params,
        n_test_judgments: n,
    })
}

pub fn evaluate(model: &dyn Predictor, data: &[AggregatedJudgment]) -> Result<MetricReport> {
    let ds: Vec<Dilemma> = data.iter().map(|j| j.dilemma.clone()).collect();
    metric_report(&model.predict_many(&ds), data, model.n_params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilemma::{AgentCounts, AgentType, Side, Signal};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn j(id: &str, n: u64, k: u64) -> AggregatedJudgment {
        AggregatedJudgment::new(
            Dilemma {
                id: id.into(),
                left: AgentCounts::from_pairs(&[(AgentType::Man, 1)]),
                right: AgentCounts::from_pairs(&[(AgentType::Dog, 1)]),
                signal_left: Signal::None,
                car_side: Side::Left,
            },
            n,
            k,
        )
        .unwrap()
    }

    /// O(pairs) oracle over individual judgments, grouped by dilemma.
    fn brute_force_auc(preds: &[f64], data: &[AggregatedJudgment]) -> f64 {
        let (mut num, mut p_tot, mut n_tot) = (0.0, 0.0, 0.0);
        for (a, ja) in data.iter().enumerate() {
            p_tot += ja.n_save_left as f64;
            n_tot += ja.n_save_right() as f64;
            for (b, jb) in data.iter().enumerate() {
                let pairs = ja.n_save_left as f64 * jb.n_save_right() as f64;
                if preds[a] > preds[b] {
                    num += pairs;
                } else if preds[a] == preds[b] {
                    num += 0.5 * pairs;
                }
            }
        }
        num / (p_tot * n_tot)
    }

    #[test]
    fn accuracy_examples() {
        let data = [j("a", 10, 9), j("b", 10, 4)];
        assert_eq!(accuracy(&[0.9, 0.3], &data).unwrap(), 0.75);
        assert_eq!(accuracy(&[0.5, 0.5], &data).unwrap(), 0.5);
        let unanimous = [j("a", 7, 7), j("b", 3, 0)];
        assert_eq!(accuracy(&[1.0, 0.0], &unanimous).unwrap(), 1.0);
        assert!(accuracy(&[0.5], &data).is_err());
    }

    #[test]
    fn upper_bound_examples() {
        assert_eq!(empirical_upper_bound(&[j("a", 10, 9), j("b", 10, 4)]).unwrap(), 0.75);
        assert_eq!(empirical_upper_bound(&[j("a", 10, 5), j("b", 4, 2)]).unwrap(), 0.5);
        assert_eq!(empirical_upper_bound(&[j("a", 10, 10), j("b", 4, 0)]).unwrap(), 1.0);
    }

    #[test]
    fn auc_examples() {
        let data = [j("a", 10, 10), j("b", 10, 0)];
        assert_eq!(auc(&[0.9, 0.1], &data).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.9], &data).unwrap(), 0.0);
        let mixed = [j("a", 10, 3), j("b", 6, 5), j("c", 9, 0)];
        assert_eq!(auc(&[0.4, 0.4, 0.4], &mixed).unwrap(), 0.5);
        assert!(matches!(auc(&[0.4], &[j("a", 4, 4)]), Err(SrmError::Undefined(_))));
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(
            rows in prop::collection::vec((1u64..40, 0u64..40, 0usize..6), 2..50)
        ) {
            // Scores drawn from a small grid to force ties.
            let data: Vec<AggregatedJudgment> = rows
                .iter()
                .enumerate()
                .map(|(i, &(n, k, _))| j(&format!("d{i}"), n, k % (n + 1)))
                .collect();
            let preds: Vec<f64> = rows.iter().map(|r| r.2 as f64 / 5.0).collect();
            if let Ok(a) = auc(&preds, &data) {
                prop_assert!((a - brute_force_auc(&preds, &data)).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }
            let acc = accuracy(&preds, &data).unwrap();
            prop_assert!(acc <= empirical_upper_bound(&data).unwrap() + 1e-15);
        }
    }

    #[test]
    fn aic_examples() {
        let data = [j("a", 10, 3), j("b", 10, 7)];
        assert_relative_eq!(normalized_aic(&[0.5, 0.5], &data, 0).unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-12);
        let perfect = [j("a", 10, 10), j("b", 10, 0)];
        assert!(normalized_aic(&[1.0, 0.0], &perfect, 0).unwrap() < 1e-10);
        // Hand formula with k = 22 on the 2-dilemma toy set.
        let nll = -(3.0 * 0.3f64.ln() + 7.0 * 0.7f64.ln()) - (7.0 * 0.7f64.ln() + 3.0 * 0.3f64.ln());
        assert_relative_eq!(
            normalized_aic(&[0.3, 0.7], &data, 22).unwrap(),
            (44.0 + 2.0 * nll) / 20.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn split_of_ten() {
        let data: Vec<_> = (0..10).map(|i| j(&format!("d{i}"), 100 + i, 3)).collect();
        let s = binned_split_indices(&data, 3).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        // Bins are {109..105} and {104..100}.
        assert_eq!(s.test.iter().filter(|&&i| i >= 5).count(), 1);
        assert_eq!(s, binned_split_indices(&data, 3).unwrap());
        assert!(binned_split(&data[..4], 0).is_err());
    }

    #[test]
    fn split_matches_size_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<_> = (0..10_000)
            .map(|i| {
                let n = rand::Rng::random_range(&mut rng, 20f64.ln()..5000f64.ln()).exp().round() as u64;
                j(&format!("d{i:05}"), n, n / 2)
            })
            .collect();
        let (train, test) = binned_split(&data, 9).unwrap();
        assert_eq!(test.len(), 2000);
        let mean = |v: &[AggregatedJudgment]| v.iter().map(|j| j.n as f64).sum::<f64>() / v.len() as f64;
        assert!((mean(&test) / mean(&train) - 1.0).abs() < 0.1);
    }

    proptest! {
        #[test]
        fn every_full_bin_has_one_test(ns in prop::collection::vec(1u64..50, 5..60), seed in any::<u64>()) {
            let data: Vec<_> = ns.iter().enumerate().map(|(i, &n)| j(&format!("d{i:03}"), n, 0)).collect();
            let s = binned_split_indices(&data, seed).unwrap();
            prop_assert_eq!(s.train.len() + s.test.len(), data.len());
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.sort_by(|&a, &b| data[b].n.cmp(&data[a].n).then(data[a].dilemma.id.cmp(&data[b].dilemma.id)));
            for bin in order.chunks(5).filter(|b| b.len() == 5) {
                prop_assert_eq!(bin.iter().filter(|i| s.test.contains(i)).count(), 1);
            }
        }
    }

    #[test]
    fn calibration_examples() {
        let data = [j("a", 200, 20), j("b", 150, 90), j("c", 120, 108), j("d", 10, 5)];
        let exact: Vec<f64> = data.iter().map(|j| j.p_data()).collect();
        let c = calibration(&exact, &data, 100).unwrap();
        assert_relative_eq!(c.slope, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.intercept, 0.0, epsilon = 1e-12);
        assert_eq!(c.dilemmas, 3);
        assert_eq!(c.bins.iter().map(|b| b.dilemmas).sum::<usize>(), 3);
        assert!(matches!(calibration(&[0.3; 4], &data, 100), Err(SrmError::Undefined(_))));
        assert!(calibration(&exact, &data, 1000).is_err());
        // Compressed predictions give a slope above 1.
        let shrunk: Vec<f64> = exact.iter().map(|p| 0.5 + 0.5 * (p - 0.5)).collect();
        assert_relative_eq!(calibration(&shrunk, &data, 100).unwrap().slope, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn report_is_consistent() {
        let data = [j("a", 10, 9), j("b", 10, 4)];
        let r = metric_report(&[0.9, 0.3], &data, 2).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.n_test_judgments, 20);
        assert_relative_eq!(r.normalized_aic, (4.0 + 2.0 * 20.0 * r.nll_per_judgment) / 20.0, epsilon = 1e-12);
    }
}
