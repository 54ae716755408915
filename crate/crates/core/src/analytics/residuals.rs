//! Raw (data vs model) and smoothed (reference vs model) residual tables.

use serde::{Deserialize, Serialize};

use crate::dilemma::{AggregatedJudgment, Dilemma};
use crate::error::Result;
use crate::io::to_csv;
use crate::models::Predictor;

pub const DEFAULT_MIN_N: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    Raw,
    Smoothed,
}

impl std::str::FromStr for ResidualKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raw" => Ok(ResidualKind::Raw),
            "smoothed" => Ok(ResidualKind::Smoothed),
            other => Err(format!("unknown residual kind `{other}` (expected raw or smoothed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub id: String,
    pub n: u64,
    pub p_data: f64,
    pub p_model: f64,
    /// Empty when no reference model was supplied.
    pub p_reference: Option<f64>,
    pub raw: f64,
    pub smoothed: Option<f64>,
}

impl ResidualRecord {
    fn new(j: &AggregatedJudgment, p_model: f64, p_reference: Option<f64>) -> Self {
        ResidualRecord {
            id: j.dilemma.id.clone(),
            n: j.n,
            p_data: j.p_data(),
            p_model,
            p_reference,
            raw: j.p_data() - p_model,
            smoothed: p_reference.map(|r| r - p_model),
        }
    }

    pub fn gap(&self, kind: ResidualKind) -> f64 {
        match kind {
            ResidualKind::Raw => self.raw,
            ResidualKind::Smoothed => self.smoothed.unwrap_or(0.0),
        }
    }
}

fn dilemmas(data: &[AggregatedJudgment]) -> Vec<Dilemma> {
    data.iter().map(|j| j.dilemma.clone()).collect()
}

/// Gaps are compared on a 1e-12 grid so that values differing only by
/// rounding (a dilemma and its mirror image, say) count as ties.
fn rank_key(gap: f64) -> f64 {
    (gap.abs() * 1e12).round()
}

/// Orders by |gap| descending, then larger n, then id; keeps `top_k`.
pub fn rank(mut records: Vec<ResidualRecord>, kind: ResidualKind, top_k: Option<usize>) -> Vec<ResidualRecord> {
    records.sort_by(|a, b| {
        rank_key(b.gap(kind))
            .total_cmp(&rank_key(a.gap(kind)))
            .then(b.n.cmp(&a.n))
            .then_with(|| a.id.cmp(&b.id))
    });
    if let Some(k) = top_k {
        records.truncate(k);
    }
    records
}

/// Records for every dilemma, unranked.
pub fn residual_records(
    model: &dyn Predictor,
    reference: Option<&dyn Predictor>,
    data: &[AggregatedJudgment],
) -> Vec<ResidualRecord> {
    let ds = dilemmas(data);
    let pm = model.predict_many(&ds);
    let pr = reference.map(|r| r.predict_many(&ds));
    data.iter()
        .enumerate()
        .map(|(i, j)| ResidualRecord::new(j, pm[i], pr.as_ref().map(|v| v[i])))
        .collect()
}

/// Largest gaps between observed proportions and the model, among dilemmas
/// with at least `min_n` judgments.
pub fn raw_residuals(
    model: &dyn Predictor,
    reference: Option<&dyn Predictor>,
    data: &[AggregatedJudgment],
    min_n: u64,
    top_k: Option<usize>,
) -> Vec<ResidualRecord> {
    let eligible: Vec<AggregatedJudgment> = data.iter().filter(|j| j.n >= min_n).cloned().collect();
    rank(residual_records(model, reference, &eligible), ResidualKind::Raw, top_k)
}

/// Largest gaps between the reference model and the model. No sample-size
/// filter: both sides of the gap are deterministic.
pub fn smoothed_residuals(
    model: &dyn Predictor,
    reference: &dyn Predictor,
    data: &[AggregatedJudgment],
    top_k: Option<usize>,
) -> Vec<ResidualRecord> {
    rank(residual_records(model, Some(reference), data), ResidualKind::Smoothed, top_k)
}

pub const RESIDUAL_CSV_HEADER: [&str; 7] = ["id", "n", "p_data", "p_model", "p_reference", "raw", "smoothed"];

pub fn residuals_to_csv(records: &[ResidualRecord]) -> Result<String> {
    to_csv(records, &RESIDUAL_CSV_HEADER)
}
