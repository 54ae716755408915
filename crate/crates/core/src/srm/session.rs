//! The refinement session: a frozen split, a choice model refit after every
//! feature addition, a reference network, and the per-iteration history.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{
    binned_split_indices, evaluate, raw_residuals, residuals_to_csv, smoothed_residuals, MetricReport, ResidualKind,
    ResidualRecord, SplitIndices,
};
use crate::dilemma::{AggregatedJudgment, Dilemma};
use crate::error::{ParseDiagnostic, Result, SrmError};
use crate::features::{parse_feature_spec, FeatureSet};
use crate::io::{judgments_to_jsonl, read_jsonl, to_json_pretty, write_atomic};
use crate::models::{
    fit_choice_model, mlp_train, AnyModel, Checkpoint, ChoiceModel, FitConfig, MlpTrainConfig, TrainedMLP,
};

pub const DEFAULT_STOP_EPSILON: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub split_seed: u64,
    pub fit: FitConfig,
    pub mlp: MlpTrainConfig,
    /// Minimum respondents for a dilemma to enter the raw residual table.
    pub min_n: u64,
    /// Rows kept in each residual table of an iteration report.
    pub top_k: usize,
    pub stop_epsilon: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            split_seed: 0,
            fit: FitConfig::default(),
            mlp: MlpTrainConfig::default(),
            min_n: 100,
            top_k: 20,
            stop_epsilon: DEFAULT_STOP_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Idle,
    Fitting,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub features_added: Vec<String>,
    pub n_features: usize,
    pub feature_hash: String,
    /// Test-set fit of the choice model and of the reference network.
    pub choice: MetricReport,
    pub reference: MetricReport,
    pub reference_retrained: bool,
    pub fit_epochs: usize,
    pub fit_converged: bool,
    pub warnings: Vec<String>,
    /// Over the whole dataset; raw rows respect `min_n`.
    pub raw_residuals: Vec<ResidualRecord>,
    pub smoothed_residuals: Vec<ResidualRecord>,
}

impl IterationReport {
    /// Reference accuracy minus choice accuracy.
    pub fn accuracy_gap(&self) -> f64 {
        self.reference.accuracy - self.choice.accuracy
    }
}

/// True once the choice model is within `epsilon` of the reference in
/// accuracy and within `2 * epsilon` in AUC.
pub fn stopping_check(report: &IterationReport, epsilon: f64) -> bool {
    (report.choice.accuracy - report.reference.accuracy).abs() <= epsilon
        && (report.choice.auc - report.reference.auc).abs() <= 2.0 * epsilon
}

/// One recorded analyst action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationInput {
    pub features: String,
    #[serde(default)]
    pub retrain_reference: bool,
}

/// Everything needed to rebuild a session from its data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub tool_version: String,
    pub config: SessionConfig,
    pub data_file: String,
    pub data_sha256: String,
    pub base_features: String,
    pub iterations: Vec<IterationInput>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.jsonl";

#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    data: Arc<Vec<AggregatedJudgment>>,
    data_sha256: String,
    split: SplitIndices,
    base_features: String,
    inputs: Vec<IterationInput>,
    features: FeatureSet,
    choice: ChoiceModel,
    reference: TrainedMLP,
    reference_iteration: usize,
    history: Vec<IterationReport>,
    status: SessionStatus,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Trains the reference network on `split.train`, holding out a shuffled
/// `validation_fraction` of those rows for early stopping.
pub fn train_reference(
    data: &[AggregatedJudgment],
    split: &SplitIndices,
    cfg: &MlpTrainConfig,
) -> Result<TrainedMLP> {
    let mut idx = split.train.clone();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    let n_val = (idx.len() as f64 * cfg.validation_fraction).floor() as usize;
    let (val, train) = idx.split_at(n_val.min(idx.len().saturating_sub(1)));
    let pick = |ids: &[usize]| ids.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    Ok(mlp_train(&pick(train), &pick(val), cfg)?.model)
}

impl Session {
    /// Splits the data, fits the choice model on the base features and the
    /// reference network on the training side, and records iteration 0.
    pub fn init(data: Vec<AggregatedJudgment>, base_features: &str, config: SessionConfig) -> Result<Session> {
        let features = parse_feature_spec(base_features)?;
        let data_sha256 = sha256_hex(judgments_to_jsonl(&data)?.as_bytes());
        let split = binned_split_indices(&data, config.split_seed)?;
        let (train, _) = split.apply(&data);
        let fit = fit_choice_model(&train, &features, &config.fit)?;
        info!("training reference network on {} dilemmas", train.len());
        let reference = train_reference(&data, &split, &config.mlp)?;
        let mut s = Session {
            config,
            data: Arc::new(data),
            data_sha256,
            split,
            base_features: base_features.to_string(),
            inputs: Vec::new(),
            features,
            choice: fit.model,
            reference,
            reference_iteration: 0,
            history: Vec::new(),
            status: SessionStatus::Idle,
        };
        let names = s.features.names().map(str::to_string).collect();
        let warnings = fit.warnings.iter().map(|w| w.to_string()).collect();
        let report = s.report(names, true, fit.epochs, fit.converged, warnings)?;
        s.push_report(report);
        Ok(s)
    }

    fn report(
        &self,
        features_added: Vec<String>,
        reference_retrained: bool,
        fit_epochs: usize,
        fit_converged: bool,
        warnings: Vec<String>,
    ) -> Result<IterationReport> {
        let (_, test) = self.split.apply(&self.data);
        let top = Some(self.config.top_k);
        Ok(IterationReport {
            iteration: self.history.len(),
            features_added,
            n_features: self.features.len(),
            feature_hash: self.features.content_hash().to_string(),
            choice: evaluate(&self.choice, &test)?,
            reference: evaluate(&self.reference, &test)?,
            reference_retrained,
            fit_epochs,
            fit_converged,
            warnings,
            raw_residuals: raw_residuals(&self.choice, Some(&self.reference), &self.data, self.config.min_n, top),
            smoothed_residuals: smoothed_residuals(&self.choice, &self.reference, &self.data, top),
        })
    }

    fn push_report(&mut self, report: IterationReport) {
        self.status = if stopping_check(&report, self.config.stop_epsilon) {
            SessionStatus::Done
        } else {
            SessionStatus::Idle
        };
        self.history.push(report);
    }

    /// Parses `text` as new features appended to the current set. Parse
    /// errors are reported with line numbers relative to `text`.
    pub fn parse_addition(&self, text: &str) -> Result<FeatureSet> {
        let current = self.features.to_spec_text();
        let offset = current.lines().count();
        let combined = parse_feature_spec(&format!("{current}{text}")).map_err(|e| match e {
            SrmError::Parse(d) if d.line > offset => SrmError::Parse(ParseDiagnostic {
                line: d.line - offset,
                message: d.message,
            }),
            other => other,
        })?;
        Ok(combined)
    }

    /// Adds the features in `text` (possibly none), refits the choice model
    /// from scratch on the same split and appends a report.
    pub fn iterate(&mut self, text: &str, retrain_reference: bool) -> Result<&IterationReport> {
        let features = self.parse_addition(text)?;
        let added: Vec<String> = features.names().skip(self.features.len()).map(str::to_string).collect();
        let (train, _) = self.split.apply(&self.data);
        let fit = fit_choice_model(&train, &features, &self.config.fit)?;
        if retrain_reference {
            self.reference = train_reference(&self.data, &self.split, &self.config.mlp)?;
            self.reference_iteration = self.history.len();
        }
        self.features = features;
        self.choice = fit.model;
        self.inputs.push(IterationInput {
            features: text.to_string(),
            retrain_reference,
        });
        let warnings = fit.warnings.iter().map(|w| w.to_string()).collect();
        let report = self.report(added, retrain_reference, fit.epochs, fit.converged, warnings)?;
        self.push_report(report);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn stopping_check(&self, epsilon: f64) -> Result<bool> {
        let last = self
            .history
            .last()
            .ok_or_else(|| SrmError::Session("no iteration has been run".into()))?;
        Ok(stopping_check(last, epsilon))
    }

    /// Residual table over the whole dataset with caller-chosen limits.
    pub fn residuals(&self, kind: ResidualKind, top_k: Option<usize>, min_n: u64) -> Vec<ResidualRecord> {
        match kind {
            ResidualKind::Raw => raw_residuals(&self.choice, Some(&self.reference), &self.data, min_n, top_k),
            ResidualKind::Smoothed => smoothed_residuals(&self.choice, &self.reference, &self.data, top_k),
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn data(&self) -> &[AggregatedJudgment] {
        &self.data
    }

    pub fn judgment(&self, id: &str) -> Option<&AggregatedJudgment> {
        self.data.iter().find(|j| j.dilemma.id == id)
    }

    pub fn dilemma(&self, id: &str) -> Option<&Dilemma> {
        self.judgment(id).map(|j| &j.dilemma)
    }

    pub fn split(&self) -> &SplitIndices {
        &self.split
    }

    pub fn features(&self) -> &FeatureSet {
        &self.features
    }

    pub fn choice_model(&self) -> &ChoiceModel {
        &self.choice
    }

    pub fn reference_model(&self) -> &TrainedMLP {
        &self.reference
    }

    pub fn history(&self) -> &[IterationReport] {
        &self.history
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn set_status(&mut self, status: SessionStatus) {
        self.status = status;
    }

    pub fn manifest(&self) -> SessionManifest {
        SessionManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            data_file: DATA_FILE.to_string(),
            data_sha256: self.data_sha256.clone(),
            base_features: self.base_features.clone(),
            iterations: self.inputs.clone(),
        }
    }

    /// Re-runs every recorded step of `manifest` against `data`.
    pub fn from_manifest(manifest: &SessionManifest, data: Vec<AggregatedJudgment>) -> Result<Session> {
        let mut s = Session::init(data, &manifest.base_features, manifest.config.clone())?;
        for step in &manifest.iterations {
            s.iterate(&step.features, step.retrain_reference)?;
        }
        Ok(s)
    }
}

/// Directory layout of a persisted session.
#[derive(Debug, Clone)]
pub struct SessionDir {
    root: PathBuf,
}

impl SessionDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn data_path(&self) -> PathBuf {
        self.root.join(DATA_FILE)
    }

    pub fn choice_checkpoint(&self, k: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("choice-{k}.json"))
    }

    pub fn reference_checkpoint(&self, k: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("reference-{k}.json"))
    }

    pub fn iteration_dir(&self, k: usize) -> PathBuf {
        self.root.join("iterations").join(k.to_string())
    }

    pub fn report_path(&self, k: usize) -> PathBuf {
        self.iteration_dir(k).join("report.json")
    }

    fn mkdir(path: &Path) -> Result<()> {
        fs::create_dir_all(path).map_err(|e| SrmError::io(path, e))
    }

    /// Writes a freshly initialized session. Refuses to overwrite an existing one.
    pub fn create(&self, session: &Session) -> Result<()> {
        if self.manifest_path().exists() {
            return Err(SrmError::Session(format!(
                "{} already holds a session",
                self.root.display()
            )));
        }
        Self::mkdir(&self.root)?;
        write_atomic(&self.data_path(), judgments_to_jsonl(session.data())?.as_bytes())?;
        self.save(session)
    }

    /// Writes the current checkpoints, any iteration reports not yet on disk,
    /// and finally the manifest, so a crash never leaves a manifest that
    /// points past the saved reports.
    pub fn save(&self, session: &Session) -> Result<()> {
        Self::mkdir(&self.root.join("checkpoints"))?;
        let last = session.history().len() - 1;
        Checkpoint::from_choice(session.choice_model(), Some(session.config().fit)).save(&self.choice_checkpoint(last))?;
        let rk = session.reference_iteration;
        if !self.reference_checkpoint(rk).exists() {
            Checkpoint::from_mlp(session.reference_model(), Some(session.config().mlp.clone()))
                .save(&self.reference_checkpoint(rk))?;
        }
        for report in session.history() {
            let k = report.iteration;
            if self.report_path(k).exists() {
                continue;
            }
            let dir = self.iteration_dir(k);
            Self::mkdir(&dir)?;
            write_atomic(&dir.join("raw_residuals.csv"), residuals_to_csv(&report.raw_residuals)?.as_bytes())?;
            write_atomic(
                &dir.join("smoothed_residuals.csv"),
                residuals_to_csv(&report.smoothed_residuals)?.as_bytes(),
            )?;
            write_atomic(&self.report_path(k), to_json_pretty(report)?.as_bytes())?;
        }
        write_atomic(&self.manifest_path(), to_json_pretty(&session.manifest())?.as_bytes())
    }

    pub fn load_manifest(&self) -> Result<SessionManifest> {
        let path = self.manifest_path();
        let text = fs::read_to_string(&path).map_err(|e| SrmError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn load_data(&self, manifest: &SessionManifest) -> Result<Vec<AggregatedJudgment>> {
        let data = read_jsonl(&self.root.join(&manifest.data_file))?;
        let hash = sha256_hex(judgments_to_jsonl(&data)?.as_bytes());
        if hash != manifest.data_sha256 {
            return Err(SrmError::Session("data file does not match the manifest hash".into()));
        }
        Ok(data)
    }

    /// Restores a session from its saved checkpoints and reports without
    /// refitting anything.
    pub fn open(&self) -> Result<Session> {
        let manifest = self.load_manifest()?;
        let data = self.load_data(&manifest)?;
        let n_iter = manifest.iterations.len() + 1;
        let mut history = Vec::with_capacity(n_iter);
        for k in 0..n_iter {
            let path = self.report_path(k);
            let text = fs::read_to_string(&path).map_err(|e| SrmError::io(&path, e))?;
            history.push(serde_json::from_str::<IterationReport>(&text)?);
        }
        let last = n_iter - 1;
        let AnyModel::Choice(choice) = Checkpoint::load(&self.choice_checkpoint(last))?.into_model()? else {
            return Err(SrmError::Session("choice checkpoint holds a different model kind".into()));
        };
        let reference_iteration = (0..n_iter)
            .rev()
            .find(|&k| k == 0 || manifest.iterations[k - 1].retrain_reference)
            .unwrap_or(0);
        let AnyModel::Mlp(reference) = Checkpoint::load(&self.reference_checkpoint(reference_iteration))?.into_model()?
        else {
            return Err(SrmError::Session("reference checkpoint holds a different model kind".into()));
        };
        let split = binned_split_indices(&data, manifest.config.split_seed)?;
        let mut s = Session {
            config: manifest.config.clone(),
            data_sha256: manifest.data_sha256.clone(),
            data: Arc::new(data),
            split,
            base_features: manifest.base_features.clone(),
            inputs: manifest.iterations.clone(),
            features: choice.features().clone(),
            choice,
            reference,
            reference_iteration,
            history: Vec::new(),
            status: SessionStatus::Idle,
        };
        for r in history {
            s.push_report(r);
        }
        Ok(s)
    }

    /// Rebuilds the session from the manifest and data alone and compares
    /// each regenerated report with the saved one, byte for byte.
    pub fn replay(&self) -> Result<ReplayOutcome> {
        let manifest = self.load_manifest()?;
        let data = self.load_data(&manifest)?;
        let rebuilt = Session::from_manifest(&manifest, data)?;
        let mut mismatched = Vec::new();
        for report in rebuilt.history() {
            let saved = fs::read_to_string(self.report_path(report.iteration)).unwrap_or_default();
            if saved != to_json_pretty(report)? {
                mismatched.push(report.iteration);
            }
        }
        Ok(ReplayOutcome {
            iterations: rebuilt.history().len(),
            mismatched,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub iterations: usize,
    /// Iterations whose regenerated report differs from the saved one.
    pub mismatched: Vec<usize>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.mismatched.is_empty()
    }
}
