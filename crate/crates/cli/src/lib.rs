//! Batch entry points for every pipeline stage.
//!
//! Exit codes: 0 on success, 2 on a usage error (bad flags, missing input
//! files, unparseable feature text), 1 when the computation itself fails.

mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use srm_core::analytics::{
    binned_split_indices, evaluate, raw_residuals, residuals_to_csv, size_sweep, smoothed_residuals,
    two_proportion_chisq, SweepConfig, DEFAULT_MIN_N,
};
use srm_core::features::{hybrid_spec_text, parse_feature_spec};
use srm_core::io::{judgments_to_jsonl, read_jsonl, to_json_pretty, write_atomic};
use srm_core::models::{fit_choice_model, AnyModel, Checkpoint, FitConfig, MlpTrainConfig, Predictor};
use srm_core::srm::{
    selection_loop, train_reference, SelectionConfig, Session, SessionConfig, SessionDir,
};
use srm_core::synth::{generate_dataset, PopulationConfig, TruthSpec};
use srm_core::SrmError;
use thiserror::Error;

pub use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] SrmError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(SrmError::Parse(_)) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "srm", version, about = "Residual-driven refinement of interpretable choice models")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Polynomial residual-smoothing sweep.
    DemoPoly(DemoPolyArgs),
    /// Generate a synthetic judgment dataset from a known choice model.
    Gen(GenArgs),
    /// Fit a choice model or a reference network on the training split.
    Fit(FitArgs),
    /// Rank the largest residuals of a fitted model.
    Residuals(ResidualArgs),
    /// Manage a refinement session directory.
    #[command(subcommand)]
    Srm(SrmCommand),
    /// Variational feature selection over interaction candidates.
    BayesSelect(BayesArgs),
    /// Pearson chi-squared test of two proportions.
    Chisq(ChisqArgs),
    /// Serve a session over HTTP on the loopback interface.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DemoPolyArgs {
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000,100000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub sims: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-row CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-size summary JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Override the network's epoch budget.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Population config JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Truth model JSON: {"features": "...", "weights": {...}}.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Hybrid,
    Mlp,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Feature spec for the choice model; the 22-feature hybrid set by default.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Training config JSON (FitConfig or MlpTrainConfig).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Raw,
    Smoothed,
}

#[derive(Debug, Args)]
pub struct ResidualArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_N)]
    pub min_n: u64,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SrmCommand {
    /// Split the data, fit both models and write iteration 0.
    Init(SrmInitArgs),
    /// Add features, refit, and append an iteration.
    Iterate(SrmIterateArgs),
    /// Print the metric trajectory and the stopping check.
    Status(SrmStatusArgs),
    /// Rebuild from the manifest and compare every saved report.
    Replay(SrmDirArg),
}

#[derive(Debug, Args)]
pub struct SrmDirArg {
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SrmInitArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Base feature spec; the hybrid set by default.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// SessionConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's split seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Overrides the config's network seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SrmIterateArgs {
    #[arg(long)]
    pub dir: PathBuf,
    /// File holding the feature text to add.
    #[arg(long, conflicts_with = "text")]
    pub features: Option<PathBuf>,
    /// Feature text to add, inline.
    #[arg(long)]
    pub text: Option<String>,
    /// Retrain the reference network too.
    #[arg(long)]
    pub retrain: bool,
}

#[derive(Debug, Args)]
pub struct SrmStatusArgs {
    #[arg(long)]
    pub dir: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BayesArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// SelectionConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ChisqArgs {
    #[arg(long)]
    pub k1: u64,
    #[arg(long)]
    pub n1: u64,
    #[arg(long)]
    pub k2: u64,
    #[arg(long)]
    pub n2: u64,
    #[arg(long)]
    pub yates: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long)]
    pub session: PathBuf,
    /// Directory of UI assets served at `/`.
    #[arg(long, name = "static")]
    pub static_dir: Option<PathBuf>,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::DemoPoly(a) => demo_poly(a),
        Command::Gen(a) => gen(a),
        Command::Fit(a) => fit(a),
        Command::Residuals(a) => residuals(a),
        Command::Srm(SrmCommand::Init(a)) => srm_init(a),
        Command::Srm(SrmCommand::Iterate(a)) => srm_iterate(a),
        Command::Srm(SrmCommand::Status(a)) => srm_status(a),
        Command::Srm(SrmCommand::Replay(a)) => srm_replay(a),
        Command::BayesSelect(a) => bayes_select(a),
        Command::Chisq(a) => chisq(a),
        Command::Serve(a) => serve(a),
    }
}

fn input(path: &Path) -> CliResult<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::Usage(format!("input file {} does not exist", path.display())))
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(input(path)?).map_err(|e| SrmError::io(path, e).into())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn read_json_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn read_data(path: &Path) -> CliResult<Vec<srm_core::dilemma::AggregatedJudgment>> {
    Ok(read_jsonl(input(path)?)?)
}

fn feature_text(path: Option<&Path>) -> CliResult<String> {
    path.map_or_else(|| Ok(hybrid_spec_text()), read_text)
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| SrmError::io(parent, e))?;
    }
    Ok(write_atomic(path, bytes)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write(path, to_json_pretty(value)?.as_bytes())
}

fn demo_poly(a: DemoPolyArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg = SweepConfig {
        sizes: a.sizes,
        sims: a.sims,
        seed: a.seed,
        ..Default::default()
    };
    if let Some(e) = a.max_epochs {
        cfg.mlp.max_epochs = e;
    }
    let report = size_sweep(&cfg, |r| info!("size {} sim {}: raw {:.4} smoothed {:.4}", r.size, r.sim, r.corr_raw, r.corr_smoothed))?;
    write(&a.out, report.to_csv()?.as_bytes())?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.summary {
        write_json(path, &report.summary)?;
        outputs.push(path.clone());
    }
    for s in &report.summary {
        println!(
            "size={} corr_raw={:.4} corr_smoothed={:.4} mse_data={:.2} mse_model={:.2}",
            s.size, s.corr_raw.mean, s.corr_smoothed.mean, s.mse_data.mean, s.mse_model.mean
        );
    }
    RunManifest::new("demo-poly", &cfg, start)
        .seed("seed", cfg.seed)
        .outputs(&outputs)
        .write_next_to(&a.out)
}

fn gen(a: GenArgs) -> CliResult<()> {
    let start = Instant::now();
    let cfg: PopulationConfig = read_json_or_default(a.config.as_deref())?;
    let truth: TruthSpec = read_json(&a.truth)?;
    let model = truth.to_model()?;
    let data = generate_dataset(&cfg, &model, a.seed)?;
    write(&a.out, judgments_to_jsonl(&data)?.as_bytes())?;
    println!(
        "wrote {} dilemmas, {} judgments",
        data.len(),
        data.iter().map(|j| j.n).sum::<u64>()
    );
    RunManifest::new("gen", &serde_json::json!({ "population": cfg, "truth": truth }), start)
        .seed("seed", a.seed)
        .inputs(a.config.iter().chain([&a.truth]))
        .outputs(std::slice::from_ref(&a.out))
        .write_next_to(&a.out)
}

fn fit(a: FitArgs) -> CliResult<()> {
    let start = Instant::now();
    let data = read_data(&a.data)?;
    let split = binned_split_indices(&data, a.split_seed)?;
    let (train, test) = split.apply(&data);
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.config.iter().cloned());
    let (checkpoint, model, config) = match a.model {
        ModelKind::Hybrid => {
            let fs = parse_feature_spec(&feature_text(a.features.as_deref())?)?;
            inputs.extend(a.features.iter().cloned());
            let cfg: FitConfig = read_json_or_default(a.config.as_deref())?;
            let fit = fit_choice_model(&train, &fs, &cfg)?;
            (
                Checkpoint::from_choice(&fit.model, Some(cfg)),
                AnyModel::Choice(fit.model),
                serde_json::to_value(cfg).map_err(SrmError::from)?,
            )
        }
        ModelKind::Mlp => {
            let mut cfg: MlpTrainConfig = read_json_or_default(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let net = train_reference(&data, &split, &cfg)?;
            (
                Checkpoint::from_mlp(&net, Some(cfg.clone())),
                AnyModel::Mlp(net),
                serde_json::to_value(&cfg).map_err(SrmError::from)?,
            )
        }
    };
    let report = evaluate(&model, &test)?;
    write_json(&a.out, &checkpoint)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.metrics {
        write_json(path, &report)?;
        outputs.push(path.clone());
    }
    println!(
        "train={} test={} accuracy={:.4} auc={:.4} normalized_aic={:.4}",
        train.len(),
        test.len(),
        report.accuracy,
        report.auc,
        report.normalized_aic
    );
    RunManifest::new("fit", &config, start)
        .seed("split_seed", a.split_seed)
        .inputs(&inputs)
        .outputs(&outputs)
        .write_next_to(&a.out)
}

fn load_model(path: &Path) -> CliResult<AnyModel> {
    Ok(Checkpoint::load(input(path)?)?.into_model()?)
}

fn residuals(a: ResidualArgs) -> CliResult<()> {
    let start = Instant::now();
    let data = read_data(&a.data)?;
    let model = load_model(&a.model)?;
    let reference = a.reference.as_deref().map(load_model).transpose()?;
    let top = Some(a.top);
    let records = match (a.kind, &reference) {
        (KindArg::Raw, r) => raw_residuals(&model, r.as_ref().map(|m| m as &dyn Predictor), &data, a.min_n, top),
        (KindArg::Smoothed, Some(r)) => smoothed_residuals(&model, r, &data, top),
        (KindArg::Smoothed, None) => {
            return Err(CliError::Usage("smoothed residuals need --reference".into()));
        }
    };
    let csv = residuals_to_csv(&records)?;
    match &a.out {
        Some(path) => {
            write(path, csv.as_bytes())?;
            let mut inputs = vec![a.data.clone(), a.model.clone()];
            inputs.extend(a.reference.iter().cloned());
            RunManifest::new(
                "residuals",
                &serde_json::json!({ "kind": format!("{:?}", a.kind).to_lowercase(), "min_n": a.min_n, "top": a.top }),
                start,
            )
            .inputs(&inputs)
            .outputs(std::slice::from_ref(path))
            .write_next_to(path)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn srm_init(a: SrmInitArgs) -> CliResult<()> {
    let mut cfg: SessionConfig = read_json_or_default(a.config.as_deref())?;
    if let Some(s) = a.split_seed {
        cfg.split_seed = s;
    }
    if let Some(s) = a.seed {
        cfg.mlp.seed = s;
    }
    let base = feature_text(a.features.as_deref())?;
    let data = read_data(&a.data)?;
    let dir = SessionDir::new(&a.dir);
    if dir.manifest_path().exists() {
        return Err(CliError::Usage(format!("{} already holds a session", a.dir.display())));
    }
    let session = Session::init(data, &base, cfg)?;
    dir.create(&session)?;
    print_iteration(session.history().last().expect("iteration 0"));
    Ok(())
}

fn open_dir(dir: &Path) -> CliResult<SessionDir> {
    let d = SessionDir::new(dir);
    if !d.manifest_path().is_file() {
        return Err(CliError::Usage(format!("{} is not a session directory", dir.display())));
    }
    Ok(d)
}

fn srm_iterate(a: SrmIterateArgs) -> CliResult<()> {
    let dir = open_dir(&a.dir)?;
    let text = match (&a.features, &a.text) {
        (Some(p), _) => read_text(p)?,
        (None, Some(t)) => t.clone(),
        (None, None) => String::new(),
    };
    let mut session = dir.open()?;
    let report = session.iterate(&text, a.retrain)?.clone();
    dir.save(&session)?;
    print_iteration(&report);
    Ok(())
}

fn print_iteration(r: &srm_core::srm::IterationReport) {
    println!(
        "iteration={} features={} choice_acc={:.4} ref_acc={:.4} gap={:.4} choice_auc={:.4} ref_auc={:.4}",
        r.iteration,
        r.n_features,
        r.choice.accuracy,
        r.reference.accuracy,
        r.accuracy_gap(),
        r.choice.auc,
        r.reference.auc
    );
}

fn srm_status(a: SrmStatusArgs) -> CliResult<()> {
    let session = open_dir(&a.dir)?.open()?;
    let eps = a.epsilon.unwrap_or(session.config().stop_epsilon);
    let stop = session.stopping_check(eps)?;
    if a.json {
        let rows: Vec<_> = session
            .history()
            .iter()
            .map(|r| {
                serde_json::json!({
                    "iteration": r.iteration,
                    "n_features": r.n_features,
                    "features_added": r.features_added,
                    "choice": r.choice,
                    "reference": r.reference,
                    "accuracy_gap": r.accuracy_gap(),
                })
            })
            .collect();
        let v = serde_json::json!({ "status": session.status(), "epsilon": eps, "stop": stop, "history": rows });
        println!("{}", serde_json::to_string_pretty(&v).map_err(SrmError::from)?);
    } else {
        for r in session.history() {
            print_iteration(r);
        }
        println!("epsilon={eps} stop={stop}");
    }
    Ok(())
}

fn srm_replay(a: SrmDirArg) -> CliResult<()> {
    let outcome = open_dir(&a.dir)?.replay()?;
    println!("iterations={} identical={}", outcome.iterations, outcome.identical());
    if outcome.identical() {
        Ok(())
    } else {
        Err(SrmError::Session(format!("reports differ at iterations {:?}", outcome.mismatched)).into())
    }
}

fn bayes_select(a: BayesArgs) -> CliResult<()> {
    let start = Instant::now();
    let mut cfg: SelectionConfig = read_json_or_default(a.config.as_deref())?;
    cfg.max_order = a.order;
    if let Some(s) = a.seed {
        cfg.variational.seed = s;
    }
    let base = parse_feature_spec(&feature_text(a.features.as_deref())?)?;
    let data = read_data(&a.data)?;
    let result = selection_loop(&data, &base, &cfg)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    for r in &result.trajectory {
        println!("round={} features={} dropped={}", r.round, r.n_features, r.dropped.len());
    }
    let out = serde_json::json!({
        "features": result.features.to_spec_text(),
        "posterior": result.posterior,
        "trajectory": result.trajectory,
        "warnings": result.warnings,
    });
    write_json(&a.out, &out)?;
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.features.iter().cloned());
    RunManifest::new("bayes-select", &cfg, start)
        .seed("seed", cfg.variational.seed)
        .inputs(&inputs)
        .outputs(std::slice::from_ref(&a.out))
        .write_next_to(&a.out)
}

fn chisq(a: ChisqArgs) -> CliResult<()> {
    let r = two_proportion_chisq(a.k1, a.n1, a.k2, a.n2, a.yates)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    println!("chi2={} p={}", r.chi2, r.p_value);
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let dir = open_dir(&a.session)?;
    let state = srm_service::AppState::open(dir)?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| SrmError::io("tokio runtime", e))?;
    rt.block_on(srm_service::serve(state, srm_service::loopback(a.port), a.static_dir))
        .map_err(|e| SrmError::io(format!("port {}", a.port), e))?;
    Ok(())
}
