//! HTTP API over an ensemble store.
//!
//! Routes, all JSON:
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/api/schemas` | schema per body type |
//! | GET | `/api/runs` | `RunSummary` list |
//! | GET | `/api/runs/{run}` | `RunSummary` |
//! | GET | `/api/runs/{run}/graph` | `GraphPage` |
//! | GET | `/api/runs/{run}/instances/{id}/provenance` | `ProvenanceView` |
//! | POST | `/api/runs/{run}/timelines` | `TimelineRequest` → `ExtractionResult` or 202 `ExtractionPending` |
//! | GET | `/api/runs/{run}/timelines/{tid}` | `TimelineDetail` |
//! | POST | `/api/runs/{run}/timelines/{tid}/export` | `ExportResult` |
//!
//! Errors use `ErrorBody`: 404 for unknown runs, instances and timelines,
//! 422 for invalid requests.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use futures::future::{BoxFuture, FutureExt, Shared};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use timeweave::store::{StoreError, SubGraph};
use timeweave::timeline::{TimelineError, TimelineExport};
use timeweave::{extract_top_k, EnsembleGraph, EnsembleStore, InstanceId, PreferenceCriterion, Timeline};
use tower_http::services::ServeDir;

use crate::api::*;

pub const DEFAULT_MAX_POINTS: usize = 2000;
pub const DEFAULT_PAGE: usize = 500;
pub const MAX_PAGE: usize = 5000;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub extract_budget: Duration,
    pub export_dir: PathBuf,
    /// Directory of static assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: error.into(), fields: Vec::new() } }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }

    fn invalid(fields: Vec<(String, String)>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: ErrorBody {
                error: "invalid request".into(),
                fields: fields.into_iter().map(|(field, message)| FieldError { field, message }).collect(),
            },
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownRun(_) | StoreError::UnknownInstance(_) => Self::not_found(e.to_string()),
            other => Self::internal(other),
        }
    }
}

impl From<TimelineError> for ApiError {
    fn from(e: TimelineError) -> Self {
        match e {
            TimelineError::UnknownInstance(_) => Self::not_found(e.to_string()),
            TimelineError::InvalidCriterion(m) | TimelineError::InvalidDiversity(m) => {
                let (field, msg) = m.split_once(": ").unwrap_or(("", &m));
                Self::invalid(vec![(field.to_owned(), msg.to_owned())])
            }
            TimelineError::UnknownVariable { .. } => Self::invalid(vec![("criterion".into(), e.to_string())]),
            other => Self::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Extraction = Shared<BoxFuture<'static, Result<Arc<Vec<Timeline>>, ApiError>>>;

struct StoredTimeline {
    timeline: Timeline,
    criterion: PreferenceCriterion,
}

struct AppState {
    store: Arc<EnsembleStore>,
    config: ServiceConfig,
    /// Extractions by request hash, running or finished.
    extractions: Mutex<HashMap<String, Extraction>>,
    /// Every timeline returned so far, by (run, timeline id).
    timelines: Mutex<HashMap<(String, String), Arc<StoredTimeline>>>,
}

impl AppState {
    fn graph(&self, run_id: &str) -> Result<Arc<EnsembleGraph>, ApiError> {
        Ok(self.store.open_run(run_id)?.snapshot())
    }

    fn timeline(&self, run_id: &str, tid: &str) -> Result<Arc<StoredTimeline>, ApiError> {
        self.timelines
            .lock()
            .expect("timeline lock")
            .get(&(run_id.to_owned(), tid.to_owned()))
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown timeline `{tid}` for run `{run_id}`")))
    }
}

pub fn router(store: Arc<EnsembleStore>, config: ServiceConfig) -> Router {
    let static_dir = config.static_dir.clone();
    let state = Arc::new(AppState {
        store,
        config,
        extractions: Mutex::new(HashMap::new()),
        timelines: Mutex::new(HashMap::new()),
    });
    let api = Router::new()
        .route("/api/schemas", get(get_schemas))
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{run}", get(get_run))
        .route("/api/runs/{run}/graph", get(get_graph))
        .route("/api/runs/{run}/instances/{id}/provenance", get(get_provenance))
        .route("/api/runs/{run}/timelines", post(post_extraction))
        .route("/api/runs/{run}/timelines/{tid}", get(get_timeline))
        .route("/api/runs/{run}/timelines/{tid}/export", post(post_export))
        .route("/api/{*rest}", any(no_route))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(no_route),
    }
}

async fn no_route() -> ApiError {
    ApiError::not_found("no such route")
}

async fn get_schemas() -> Json<serde_json::Value> {
    Json(serde_json::to_value(schemas()).expect("schemas serialize"))
}

async fn list_runs(State(st): State<Arc<AppState>>) -> ApiResult<Vec<RunSummary>> {
    let mut out = Vec::new();
    for id in st.store.list_runs()? {
        // Runs that fail to load are skipped rather than failing the list.
        if let Ok(g) = st.graph(&id) {
            out.push(RunSummary::of(&g, st.store.created_at(&id)));
        }
    }
    Ok(Json(out))
}

async fn get_run(State(st): State<Arc<AppState>>, Path(run): Path<String>) -> ApiResult<RunSummary> {
    let g = st.graph(&run)?;
    Ok(Json(RunSummary::of(&g, st.store.created_at(&run))))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphQuery {
    offset: Option<usize>,
    limit: Option<usize>,
    /// Comma-separated model ids.
    models: Option<String>,
    step_min: Option<u64>,
    step_max: Option<u64>,
}

fn query_error(e: QueryRejection) -> ApiError {
    ApiError::invalid(vec![("query".into(), e.body_text())])
}

async fn get_graph(
    State(st): State<Arc<AppState>>,
    Path(run): Path<String>,
    query: Result<Query<GraphQuery>, QueryRejection>,
) -> ApiResult<GraphPage> {
    let Query(q) = query.map_err(query_error)?;
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::invalid(vec![("limit".into(), format!("must lie in 1..={MAX_PAGE}"))]));
    }
    let g = st.graph(&run)?;
    let models: Option<Vec<&str>> = q.models.as_deref().map(|m| m.split(',').filter(|s| !s.is_empty()).collect());
    if let Some(unknown) = models.iter().flatten().find(|m| g.flow().node(m).is_none()) {
        return Err(ApiError::invalid(vec![("models".into(), format!("unknown model `{unknown}`"))]));
    }
    let matching: Vec<usize> = (0..g.len())
        .filter(|&i| {
            let n = g.node_at(i);
            models.as_ref().is_none_or(|ms| ms.contains(&n.model_id.as_str()))
                && q.step_min.is_none_or(|s| n.step >= s)
                && q.step_max.is_none_or(|s| n.step <= s)
        })
        .collect();
    let offset = q.offset.unwrap_or(0);
    let page: Vec<usize> = matching.iter().copied().skip(offset).take(limit).collect();
    Ok(Json(GraphPage {
        run_id: run,
        total: matching.len(),
        offset,
        limit,
        nodes: page.iter().map(|&i| NodeView::of(&g, i)).collect(),
        edges: page.iter().flat_map(|&i| g.incoming_edges(i).cloned()).collect(),
    }))
}

async fn get_provenance(
    State(st): State<Arc<AppState>>,
    Path((run, id)): Path<(String, String)>,
) -> ApiResult<ProvenanceView> {
    let g = st.graph(&run)?;
    let id = InstanceId::new(id);
    let SubGraph { nodes, edges } = g.provenance(&id)?;
    let nodes = nodes.iter().map(|n| NodeView::of(&g, g.index_of(&n.id).expect("provenance nodes exist"))).collect();
    Ok(Json(ProvenanceView { run_id: run, instance_id: id, nodes, edges }))
}

/// Stable key of an extraction request.
pub fn request_hash(run_id: &str, req: &TimelineRequest) -> String {
    let mut h = Sha256::new();
    h.update(run_id.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(&(&req.criterion, &req.diversity)).expect("requests serialize"));
    hex::encode(h.finalize())[..16].to_owned()
}

fn parse_request(body: &[u8]) -> Result<TimelineRequest, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let msg = e.to_string();
        let field = msg.split('`').nth(1).filter(|_| msg.contains("field")).unwrap_or("body").to_owned();
        ApiError::invalid(vec![(field, msg)])
    })
}

async fn post_extraction(
    State(st): State<Arc<AppState>>,
    Path(run): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req = parse_request(&body)?;
    if req.run_id.as_ref().is_some_and(|r| *r != run) {
        return Err(ApiError::invalid(vec![("run_id".into(), "does not match the run in the path".into())]));
    }
    let graph = st.graph(&run)?;
    let mut problems = req.diversity.problems();
    problems.extend(req.criterion.problems(&graph).into_iter().map(|(f, m)| (format!("criterion.{f}"), m)));
    if !problems.is_empty() {
        return Err(ApiError::invalid(
            problems
                .into_iter()
                .map(|(f, m)| if f.starts_with("criterion.") { (f, m) } else { (format!("diversity.{f}"), m) })
                .collect(),
        ));
    }

    let hash = request_hash(&run, &req);
    let job = {
        let mut jobs = st.extractions.lock().expect("extraction lock");
        jobs.entry(hash.clone())
            .or_insert_with(|| {
                let (criterion, diversity) = (req.criterion.clone(), req.diversity.clone());
                async move {
                    let task = tokio::task::spawn_blocking(move || extract_top_k(&graph, &criterion, &diversity));
                    match task.await {
                        Ok(r) => r.map(Arc::new).map_err(ApiError::from),
                        Err(e) => Err(ApiError::internal(e)),
                    }
                }
                .boxed()
                .shared()
            })
            .clone()
    };
    let timelines = match tokio::time::timeout(st.config.extract_budget, job).await {
        Err(_) => {
            let pending = ExtractionPending { run_id: run, request_hash: hash, status: "pending".into() };
            return Ok((StatusCode::ACCEPTED, Json(pending)).into_response());
        }
        Ok(Err(e)) => {
            st.extractions.lock().expect("extraction lock").remove(&hash);
            return Err(e);
        }
        Ok(Ok(t)) => t,
    };
    {
        let mut stored = st.timelines.lock().expect("timeline lock");
        for t in timelines.iter() {
            stored
                .entry((run.clone(), t.id.clone()))
                .or_insert_with(|| Arc::new(StoredTimeline { timeline: t.clone(), criterion: req.criterion.clone() }));
        }
    }
    let result = ExtractionResult {
        run_id: run,
        request_hash: hash,
        timelines: timelines.iter().map(TimelineSummary::from).collect(),
    };
    Ok(Json(result).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetailQuery {
    max_points: Option<usize>,
}

async fn get_timeline(
    State(st): State<Arc<AppState>>,
    Path((run, tid)): Path<(String, String)>,
    query: Result<Query<DetailQuery>, QueryRejection>,
) -> ApiResult<TimelineDetail> {
    let Query(q) = query.map_err(query_error)?;
    let max_points = q.max_points.unwrap_or(DEFAULT_MAX_POINTS);
    if max_points == 0 {
        return Err(ApiError::invalid(vec![("max_points".into(), "must be at least 1".into())]));
    }
    let g = st.graph(&run)?;
    let stored = st.timeline(&run, &tid)?;
    let export = TimelineExport::build(&g, &stored.timeline, &stored.criterion)?;
    Ok(Json(TimelineDetail {
        run_id: run,
        timeline_id: tid,
        node_ids: export.node_ids,
        score: export.score,
        coverage: export.coverage,
        criterion: export.criterion,
        series: export.series.iter().map(|s| downsample(s, max_points)).collect(),
    }))
}

async fn post_export(
    State(st): State<Arc<AppState>>,
    Path((run, tid)): Path<(String, String)>,
) -> ApiResult<ExportResult> {
    let g = st.graph(&run)?;
    let stored = st.timeline(&run, &tid)?;
    let export = TimelineExport::build(&g, &stored.timeline, &stored.criterion)?;
    let path = st.config.export_dir.join(&run).join(format!("{tid}.json"));
    timeweave::timeline::write_export(&export, &path)?;
    Ok(Json(ExportResult { run_id: run, timeline_id: tid, path: path.display().to_string() }))
}
