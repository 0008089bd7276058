//! HTTP+JSON backend for reviewing ranked candidates: browse runs and their
//! candidate lists, inspect light curves, record triage labels and launch
//! retraining with the labeled artifact groups.
//!
//! All state lives in the run directory: runs are immutable, labels go to
//! each run's append-only `labels.jsonl`, and jobs are mirrored under
//! `.jobs/`. When a token is configured every request must carry it in the
//! [`TOKEN_HEADER`] header.

mod error;
mod jobs;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use rfbn_core::lightcurve::{fold, read_lightcurve, FoldedLightCurve};
use rfbn_core::pipeline::{
    append_label, read_labels, replay, undersized_groups, ArtifactGroup, CandidateRecord, Decision, RunInfo, RunStore,
    TriageLabel, TriageState,
};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

pub use error::{ApiError, ServiceError};
pub use jobs::{JobStatus, RetrainJob};

/// Header carrying the shared token.
pub const TOKEN_HEADER: &str = "x-triage-token";

const DEFAULT_PAGE_SIZE: usize = 50;
const MAX_PAGE_SIZE: usize = 1000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub runs_dir: PathBuf,
    pub token: Option<String>,
}

struct RunCandidates {
    classes: Vec<String>,
    candidates: Vec<CandidateRecord>,
    index: HashMap<String, usize>,
}

struct AppState {
    store: Arc<RunStore>,
    token: Option<String>,
    jobs: Arc<jobs::JobQueue>,
    cache: RwLock<HashMap<String, Arc<RunCandidates>>>,
    labels: RwLock<()>,
}

/// Build the router and start the retrain worker. Must be called inside a
/// tokio runtime.
pub fn router(cfg: &ServiceConfig) -> Result<Router, ServiceError> {
    let store = Arc::new(RunStore::open(&cfg.runs_dir)?);
    let jobs = jobs::JobQueue::start(store.clone())?;
    let state = Arc::new(AppState {
        store,
        token: cfg.token.clone(),
        jobs,
        cache: RwLock::new(HashMap::new()),
        labels: RwLock::new(()),
    });
    Ok(Router::new()
        .route("/runs", get(list_runs))
        .route("/runs/{run_id}/candidates", get(list_candidates))
        .route("/runs/{run_id}/candidates/{object_id}", get(candidate_detail))
        .route("/runs/{run_id}/candidates/{object_id}/label", post(post_label))
        .route("/runs/{run_id}/retrain", post(start_retrain))
        .route("/jobs/{job_id}", get(get_job))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state))
}

/// Serve until ctrl-c.
pub async fn serve(addr: SocketAddr, cfg: &ServiceConfig) -> Result<(), ServiceError> {
    let app = router(cfg)?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}

type Shared = State<Arc<AppState>>;

async fn require_token(State(state): Shared, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = req.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(token.as_str()) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

impl AppState {
    async fn run_candidates(&self, run_id: &str) -> Result<Arc<RunCandidates>, ApiError> {
        if let Some(c) = self.cache.read().await.get(run_id) {
            return Ok(c.clone());
        }
        let store = self.store.clone();
        let id = run_id.to_string();
        let (classes, candidates) = tokio::task::spawn_blocking(move || store.candidates(&id))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
        let index = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.object_id.clone(), i))
            .collect();
        let entry = Arc::new(RunCandidates {
            classes,
            candidates,
            index,
        });
        self.cache.write().await.insert(run_id.to_string(), entry.clone());
        Ok(entry)
    }

    /// Current triage state per object of a run.
    async fn label_state(&self, run_id: &str) -> Result<BTreeMap<String, TriageState>, ApiError> {
        let path = self.store.labels_path(run_id)?;
        let _guard = self.labels.read().await;
        Ok(replay(&read_labels(&path)?))
    }
}

fn with_state(c: &CandidateRecord, state: &BTreeMap<String, TriageState>) -> CandidateRecord {
    let mut c = c.clone();
    if let Some(s) = state.get(&c.object_id) {
        c.triage_label = s.clone();
    }
    c
}

async fn list_runs(State(state): Shared) -> Result<Json<Vec<RunInfo>>, ApiError> {
    Ok(Json(state.store.list()?))
}

/// Which candidates a listing shows.
#[derive(Debug, Clone, PartialEq)]
enum LabelFilter {
    All,
    Unreviewed,
    Interesting,
    AnyArtifact,
    AnyKnown,
    Exactly(TriageState),
}

impl LabelFilter {
    fn parse(s: Option<&str>) -> Result<Self, ApiError> {
        Ok(match s.map(str::trim) {
            None | Some("") | Some("all") => LabelFilter::All,
            Some("unreviewed") => LabelFilter::Unreviewed,
            Some("interesting") => LabelFilter::Interesting,
            Some("artifact") => LabelFilter::AnyArtifact,
            Some("known") => LabelFilter::AnyKnown,
            Some(other) => match other.parse::<TriageState>() {
                Ok(st) => LabelFilter::Exactly(st),
                Err(e) => return Err(ApiError::bad_request(format!("bad filter: {e}"))),
            },
        })
    }

    fn accepts(&self, s: &TriageState) -> bool {
        match self {
            LabelFilter::All => true,
            LabelFilter::Unreviewed => *s == TriageState::Unreviewed,
            LabelFilter::Interesting => *s == TriageState::Interesting,
            LabelFilter::AnyArtifact => matches!(s, TriageState::Artifact(_)),
            LabelFilter::AnyKnown => matches!(s, TriageState::Known(_)),
            LabelFilter::Exactly(t) => s == t,
        }
    }
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    page: Option<usize>,
    size: Option<usize>,
    filter: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatePage {
    pub run_id: String,
    pub page: usize,
    pub size: usize,
    /// Candidates matching the filter, over all pages.
    pub total: usize,
    pub classes: Vec<String>,
    pub candidates: Vec<CandidateRecord>,
}

async fn list_candidates(
    State(state): Shared,
    Path(run_id): Path<String>,
    Query(q): Query<PageQuery>,
) -> Result<Json<CandidatePage>, ApiError> {
    let page = q.page.unwrap_or(1);
    let size = q.size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 {
        return Err(ApiError::bad_request("page is 1-based"));
    }
    if size == 0 || size > MAX_PAGE_SIZE {
        return Err(ApiError::bad_request(format!("size must be in 1..={MAX_PAGE_SIZE}")));
    }
    let filter = LabelFilter::parse(q.filter.as_deref())?;
    let run = state.run_candidates(&run_id).await?;
    let labels = state.label_state(&run_id).await?;
    let matching: Vec<CandidateRecord> = run
        .candidates
        .iter()
        .map(|c| with_state(c, &labels))
        .filter(|c| filter.accepts(&c.triage_label))
        .collect();
    let total = matching.len();
    let candidates = matching.into_iter().skip((page - 1).saturating_mul(size)).take(size).collect();
    Ok(Json(CandidatePage {
        run_id,
        page,
        size,
        total,
        classes: run.classes.clone(),
        candidates,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurveSamples {
    pub times: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub errors: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidateDetail {
    pub candidate: CandidateRecord,
    pub classes: Vec<String>,
    pub curve: CurveSamples,
    /// Absent when the period feature is missing or unusable.
    pub folded: Option<FoldedLightCurve>,
    pub invalid_period: bool,
}

async fn candidate_detail(
    State(state): Shared,
    Path((run_id, object_id)): Path<(String, String)>,
) -> Result<Json<CandidateDetail>, ApiError> {
    let run = state.run_candidates(&run_id).await?;
    let &i = run
        .index
        .get(&object_id)
        .ok_or_else(|| ApiError::not_found(format!("candidate `{object_id}` in run `{run_id}`")))?;
    let labels = state.label_state(&run_id).await?;
    let candidate = with_state(&run.candidates[i], &labels);
    let path = candidate
        .path
        .clone()
        .ok_or_else(|| ApiError::not_found(format!("no curve file recorded for `{object_id}`")))?;
    let (id, band) = (candidate.object_id.clone(), candidate.band);
    let lc = tokio::task::spawn_blocking(move || read_lightcurve(&path, &id, band))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let folded = match candidate.period {
        Some(p) if p.is_finite() && p > 0.0 => fold(&lc, p, None).ok(),
        _ => None,
    };
    Ok(Json(CandidateDetail {
        invalid_period: folded.is_none(),
        classes: run.classes.clone(),
        curve: CurveSamples {
            times: lc.times().to_vec(),
            magnitudes: lc.magnitudes().to_vec(),
            errors: lc.errors().to_vec(),
        },
        folded,
        candidate,
    }))
}

#[derive(Debug, Deserialize)]
struct LabelBody {
    decision: String,
    #[serde(default)]
    reviewer: String,
    timestamp: Option<DateTime<Utc>>,
    object_id: Option<String>,
    run_id: Option<String>,
}

async fn post_label(
    State(state): Shared,
    Path((run_id, object_id)): Path<(String, String)>,
    body: Bytes,
) -> Result<(StatusCode, Json<TriageLabel>), ApiError> {
    let body: LabelBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("bad label body: {e}")))?;
    let decision: Decision = body
        .decision
        .parse()
        .map_err(|e: rfbn_core::Error| ApiError::bad_request(e.to_string()))?;
    for (field, given, expected) in [("object_id", &body.object_id, &object_id), ("run_id", &body.run_id, &run_id)] {
        if given.as_ref().is_some_and(|g| g != expected) {
            return Err(ApiError::bad_request(format!("{field} in body differs from the path")));
        }
    }
    let run = state.run_candidates(&run_id).await?;
    if !run.index.contains_key(&object_id) {
        return Err(ApiError::not_found(format!("candidate `{object_id}` in run `{run_id}`")));
    }
    let label = TriageLabel {
        object_id,
        decision,
        reviewer: body.reviewer,
        timestamp: body.timestamp.unwrap_or_else(Utc::now),
        run_id: run_id.clone(),
    };
    let path = state.store.labels_path(&run_id)?;
    let _guard = state.labels.write().await;
    append_label(&path, &label)?;
    Ok((StatusCode::CREATED, Json(label)))
}

#[derive(Debug, Deserialize)]
struct RetrainBody {
    groups: Vec<String>,
}

async fn start_retrain(
    State(state): Shared,
    Path(run_id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<RetrainJob>), ApiError> {
    let body: RetrainBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("bad retrain body: {e}")))?;
    if body.groups.is_empty() {
        return Err(ApiError::bad_request("no artifact groups given"));
    }
    let info = state.store.info(&run_id)?;
    if info.input.is_none() {
        return Err(ApiError::bad_request(format!("run `{run_id}` has no scored candidates to retrain from")));
    }
    let min = state.store.load_model(&run_id)?.config().min_group_size;
    let labels = state.label_state(&run_id).await?;
    let labeled = rfbn_core::pipeline::artifact_groups(&labels);
    let requested: Vec<ArtifactGroup> = body
        .groups
        .iter()
        .map(|g| ArtifactGroup::new(g.clone(), labeled.get(g).cloned().unwrap_or_default()))
        .collect();
    let small = undersized_groups(&requested, min);
    if !small.is_empty() {
        let list: Vec<String> = small.iter().map(|(g, n)| format!("`{g}` has {n}")).collect();
        return Err(ApiError::conflict(format!(
            "artifact groups below the minimum of {min} members: {}",
            list.join(", ")
        )));
    }
    let job = state.jobs.submit(&run_id, body.groups);
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_job(State(state): Shared, Path(job_id): Path<String>) -> Result<Json<RetrainJob>, ApiError> {
    state
        .jobs
        .get(&job_id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("job `{job_id}`")))
}
