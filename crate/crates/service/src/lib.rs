//! Local HTTP API over a live refinement session.
//!
//! Reads are served from an immutable snapshot of the session; the one
//! mutating operation (an iteration) runs as a background job that swaps in a
//! new snapshot only after it has fully completed and been persisted.

mod error;
mod jobs;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info};
use serde::{Deserialize, Serialize};
use srm_core::analytics::{ResidualKind, ResidualRecord};
use srm_core::dilemma::Dilemma;
use srm_core::features::evaluate_features;
use srm_core::models::Predictor;
use srm_core::srm::{stopping_check, IterationReport, Session, SessionDir, SessionStatus};
use tower_http::services::ServeDir;

pub use error::ApiError;
pub use jobs::{JobKind, JobState, JobStatus};

use jobs::JobTable;

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Shared server state.
pub struct AppState {
    session: RwLock<Arc<Session>>,
    dir: Option<SessionDir>,
    jobs: Mutex<JobTable>,
}

impl AppState {
    /// Serves an in-memory session; iterations are not persisted.
    pub fn new(session: Session) -> Arc<Self> {
        Self::build(session, None)
    }

    /// Serves a session directory, saving it after every iteration.
    pub fn open(dir: SessionDir) -> srm_core::Result<Arc<Self>> {
        let session = dir.open()?;
        Ok(Self::build(session, Some(dir)))
    }

    fn build(session: Session, dir: Option<SessionDir>) -> Arc<Self> {
        Arc::new(AppState {
            session: RwLock::new(Arc::new(session)),
            dir,
            jobs: Mutex::new(JobTable::default()),
        })
    }

    /// The current immutable snapshot.
    pub fn snapshot(&self) -> Arc<Session> {
        self.session.read().expect("session lock poisoned").clone()
    }

    pub fn job(&self, id: u64) -> Option<JobState> {
        self.jobs.lock().expect("job lock poisoned").get(id)
    }
}

/// All API routes, plus static files from `static_dir` at `/` when given.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/state", get(get_state))
        .route("/api/metrics", get(get_metrics))
        .route("/api/residuals", get(get_residuals))
        .route("/api/dilemma/{id}", get(get_dilemma))
        .route("/api/features", get(get_features))
        .route("/api/iterate", post(post_iterate))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/stopcheck", post(post_stopcheck))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds to `addr` and serves until the process exits.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}

/// Loopback address for `port`.
pub fn loopback(port: u16) -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], port))
}

#[derive(Debug, Serialize)]
struct StateView<'a> {
    status: SessionStatus,
    n_dilemmas: usize,
    n_train: usize,
    n_test: usize,
    n_features: usize,
    feature_hash: &'a str,
    stop_epsilon: f64,
    history: &'a [IterationReport],
}

async fn get_state(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let s = app.snapshot();
    let busy = app.jobs.lock().expect("job lock poisoned").active().is_some();
    let view = StateView {
        status: if busy { SessionStatus::Fitting } else { s.status() },
        n_dilemmas: s.data().len(),
        n_train: s.split().train.len(),
        n_test: s.split().test.len(),
        n_features: s.features().len(),
        feature_hash: s.features().content_hash(),
        stop_epsilon: s.config().stop_epsilon,
        history: s.history(),
    };
    Json(serde_json::to_value(view).expect("state serializes"))
}

#[derive(Debug, Serialize)]
struct MetricsRow<'a> {
    iteration: usize,
    features_added: &'a [String],
    n_features: usize,
    choice: &'a srm_core::analytics::MetricReport,
    reference: &'a srm_core::analytics::MetricReport,
    accuracy_gap: f64,
}

async fn get_metrics(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let s = app.snapshot();
    let rows: Vec<MetricsRow> = s
        .history()
        .iter()
        .map(|r| MetricsRow {
            iteration: r.iteration,
            features_added: &r.features_added,
            n_features: r.n_features,
            choice: &r.choice,
            reference: &r.reference,
            accuracy_gap: r.accuracy_gap(),
        })
        .collect();
    Json(serde_json::to_value(rows).expect("metrics serialize"))
}

#[derive(Debug, Deserialize)]
struct ResidualQuery {
    kind: Option<String>,
    top: Option<usize>,
    min_n: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ResidualView {
    #[serde(flatten)]
    record: ResidualRecord,
    dilemma: Dilemma,
}

async fn get_residuals(
    State(app): State<Arc<AppState>>,
    Query(q): Query<ResidualQuery>,
) -> ApiResult<Json<Vec<ResidualView>>> {
    let kind: ResidualKind = q.kind.as_deref().unwrap_or("smoothed").parse().map_err(ApiError::bad_request)?;
    let s = app.snapshot();
    let top = q.top.unwrap_or(s.config().top_k);
    let min_n = q.min_n.unwrap_or(s.config().min_n);
    let rows = s
        .residuals(kind, Some(top), min_n)
        .into_iter()
        .map(|record| {
            let dilemma = s.dilemma(&record.id).expect("record ids come from the data").clone();
            ResidualView { record, dilemma }
        })
        .collect();
    Ok(Json(rows))
}

#[derive(Debug, Serialize)]
struct DilemmaView {
    dilemma: Dilemma,
    n: u64,
    n_save_left: u64,
    p_data: f64,
    p_model: f64,
    p_reference: f64,
    /// Current feature values on each side.
    features: BTreeMap<String, [f64; 2]>,
}

async fn get_dilemma(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<DilemmaView>> {
    let s = app.snapshot();
    let j = s.judgment(&id).ok_or_else(|| ApiError::not_found(format!("no dilemma `{id}`")))?;
    let (left, right) = evaluate_features(s.features(), &j.dilemma);
    let features = s
        .features()
        .names()
        .zip(left.iter().zip(&right))
        .map(|(name, (l, r))| (name.to_string(), [*l, *r]))
        .collect();
    Ok(Json(DilemmaView {
        dilemma: j.dilemma.clone(),
        n: j.n,
        n_save_left: j.n_save_left,
        p_data: j.p_data(),
        p_model: s.choice_model().predict_save_left(&j.dilemma),
        p_reference: s.reference_model().predict_save_left(&j.dilemma),
        features,
    }))
}

#[derive(Debug, Serialize)]
struct FeaturesView {
    text: String,
    names: Vec<String>,
    hash: String,
}

async fn get_features(State(app): State<Arc<AppState>>) -> Json<FeaturesView> {
    let s = app.snapshot();
    Json(FeaturesView {
        text: s.features().to_spec_text(),
        names: s.features().names().map(str::to_string).collect(),
        hash: s.features().content_hash().to_string(),
    })
}

#[derive(Debug, Deserialize)]
struct IterateQuery {
    #[serde(default)]
    retrain: bool,
}

#[derive(Debug, Serialize)]
struct JobCreated {
    job_id: u64,
}

async fn post_iterate(
    State(app): State<Arc<AppState>>,
    Query(q): Query<IterateQuery>,
    body: String,
) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    if body.trim().is_empty() {
        return Err(ApiError::bad_request("feature text is empty"));
    }
    // Validate up front so the client sees parse diagnostics synchronously.
    app.snapshot().parse_addition(&body).map_err(ApiError::from)?;
    let kind = if q.retrain { JobKind::Iterate } else { JobKind::Refit };
    let id = app
        .jobs
        .lock()
        .expect("job lock poisoned")
        .start(kind)
        .map_err(|running| ApiError::conflict(format!("job {running} is still running")))?;

    let worker = app.clone();
    tokio::task::spawn_blocking(move || {
        worker.jobs.lock().expect("job lock poisoned").running(id, 0.1);
        let outcome = run_iteration(&worker, &body, q.retrain);
        let mut jobs = worker.jobs.lock().expect("job lock poisoned");
        match outcome {
            Ok(iteration) => jobs.finish(id, Some(iteration)),
            Err(e) => {
                error!("job {id} failed: {e}");
                jobs.fail(id, e.to_string());
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id: id })))
}

fn run_iteration(app: &AppState, text: &str, retrain: bool) -> srm_core::Result<usize> {
    let mut next = (*app.snapshot()).clone();
    let iteration = next.iterate(text, retrain)?.iteration;
    if let Some(dir) = &app.dir {
        dir.save(&next)?;
    }
    *app.session.write().expect("session lock poisoned") = Arc::new(next);
    Ok(iteration)
}

async fn get_job(State(app): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<JobState>> {
    app.job(id).map(Json).ok_or_else(|| ApiError::not_found(format!("no job {id}")))
}

#[derive(Debug, Deserialize)]
struct StopQuery {
    epsilon: Option<f64>,
}

#[derive(Debug, Serialize)]
struct StopView {
    iteration: usize,
    epsilon: f64,
    passed: bool,
    accuracy_gap: f64,
    auc_gap: f64,
}

async fn post_stopcheck(State(app): State<Arc<AppState>>, Query(q): Query<StopQuery>) -> ApiResult<Json<StopView>> {
    let s = app.snapshot();
    let epsilon = q.epsilon.unwrap_or(s.config().stop_epsilon);
    if !(epsilon >= 0.0) {
        return Err(ApiError::bad_request("epsilon must be a non-negative number"));
    }
    let last = s.history().last().ok_or_else(|| ApiError::conflict("no iteration has been run"))?;
    Ok(Json(StopView {
        iteration: last.iteration,
        epsilon,
        passed: stopping_check(last, epsilon),
        accuracy_gap: last.accuracy_gap(),
        auc_gap: last.reference.auc - last.choice.auc,
    }))
}
