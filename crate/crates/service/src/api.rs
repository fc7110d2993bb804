//! HTTP routes.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::Engine;
use lanegraph_core::extraction::LaneProvenance;
use lanegraph_core::metrics::{evaluate_scene, DEFAULT_THRESHOLDS_CM};
use lanegraph_core::raster_io::{encode_raster, RasterFormat};
use lanegraph_core::{ExtractionParams, LaneGraph, Polyline, StopReason};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex as AsyncMutex;

use crate::session::{EditEntry, Session, SessionError, Workspace};
use crate::store::{SceneCatalog, SessionLog};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("unknown {what} `{id}`"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "code": self.status.as_u16() });
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::AlreadyExtracted | SessionError::NoEvidence { .. } => StatusCode::CONFLICT,
            SessionError::BinOutOfRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::NoSuchLane { .. } => StatusCode::NOT_FOUND,
            SessionError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Slot {
    session: Session,
    workspace: Arc<Workspace>,
}

pub struct AppState {
    catalog: SceneCatalog,
    params: ExtractionParams,
    log: SessionLog,
    sessions: Mutex<HashMap<String, Arc<AsyncMutex<Slot>>>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(catalog: SceneCatalog, params: ExtractionParams, log: SessionLog) -> Self {
        AppState {
            catalog,
            params,
            log,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    pub fn catalog(&self) -> &SceneCatalog {
        &self.catalog
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<AsyncMutex<Slot>>> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    fn record(&self, session: &str, action: &str, payload: Value) {
        if let Err(e) = self.log.append(session, action, &payload) {
            tracing::warn!(session, action, error = %e, "session log write failed");
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}", get(get_scene))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/extract", post(extract))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/trace", post(trace))
        .route("/sessions/{id}/lanes/{index}", delete(delete_lane))
        .route("/sessions/{id}/score", get(score))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such route") })
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_scenes(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "scenes": st.catalog.ids().collect::<Vec<_>>() }))
}

#[derive(Deserialize)]
struct RevealQuery {
    #[serde(default)]
    reveal: bool,
}

#[derive(Serialize)]
struct ScenePayload {
    id: String,
    width: usize,
    height: usize,
    resolution: f64,
    k_grid: usize,
    raster_format: &'static str,
    /// Base64 of the 16-bit PGM encoding.
    raster: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth: Option<LaneGraph>,
}

async fn get_scene(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<RevealQuery>,
) -> ApiResult<Json<ScenePayload>> {
    let st2 = st.clone();
    let id2 = id.clone();
    let scene = tokio::task::spawn_blocking(move || st2.catalog.load(&id2))
        .await
        .map_err(ApiError::internal)?
        .ok_or_else(|| ApiError::not_found("scene", &id))?
        .map_err(ApiError::internal)?;
    let g = scene.raster.geometry();
    Ok(Json(ScenePayload {
        id,
        width: g.width,
        height: g.height,
        resolution: g.resolution,
        k_grid: st.params.k_grid,
        raster_format: "pgm",
        raster: base64::engine::general_purpose::STANDARD.encode(encode_raster(&scene.raster, RasterFormat::Pgm)),
        ground_truth: if q.reveal { scene.ground_truth } else { None },
    }))
}

#[derive(Serialize)]
struct ProvenanceView {
    bin: [usize; 2],
    steps: usize,
    stop: StopReason,
}

impl From<&LaneProvenance> for ProvenanceView {
    fn from(p: &LaneProvenance) -> Self {
        ProvenanceView {
            bin: [p.bin.row, p.bin.col],
            steps: p.steps,
            stop: p.stop,
        }
    }
}

#[derive(Serialize)]
struct SessionView<'a> {
    id: &'a str,
    scene_id: &'a str,
    lanes: &'a [Polyline],
    provenance: Vec<ProvenanceView>,
    clicks: usize,
    failed_clicks: usize,
    extracted: bool,
    log: &'a [EditEntry],
}

fn view(s: &Session) -> Value {
    serde_json::to_value(SessionView {
        id: &s.id,
        scene_id: &s.scene_id,
        lanes: s.graph().lanes(),
        provenance: s.provenance().iter().map(ProvenanceView::from).collect(),
        clicks: s.clicks(),
        failed_clicks: s.failed_clicks(),
        extracted: s.extracted(),
        log: s.log(),
    })
    .expect("session views serialize")
}

#[derive(Deserialize)]
struct CreateSession {
    scene_id: String,
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(req) = body?;
    let st2 = st.clone();
    let scene_id = req.scene_id.clone();
    let workspace = tokio::task::spawn_blocking(move || {
        let scene = st2.catalog.load(&scene_id)?;
        Some(scene.map_err(ApiError::internal).and_then(|s| {
            Workspace::new(s.raster, st2.params.clone()).map_err(ApiError::from)
        }))
    })
    .await
    .map_err(ApiError::internal)?
    .ok_or_else(|| ApiError::not_found("scene", &req.scene_id))??;
    let id = format!("s{}", st.next_session.fetch_add(1, Ordering::Relaxed));
    let session = Session::new(&id, &req.scene_id);
    let body = view(&session);
    st.sessions.lock().expect("session table lock").insert(
        id.clone(),
        Arc::new(AsyncMutex::new(Slot {
            session,
            workspace: Arc::new(workspace),
        })),
    );
    st.record(&id, "create", json!({ "scene_id": req.scene_id }));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = st.slot(&id)?;
    let guard = slot.lock().await;
    Ok(Json(view(&guard.session)))
}

/// Runs a mutation off the async runtime while holding the session lock,
/// so mutations of one session are serialized.
async fn mutate<T, F>(st: &AppState, id: &str, f: F) -> ApiResult<(T, Value)>
where
    T: Send + 'static,
    F: FnOnce(&mut Session, &Workspace) -> Result<T, SessionError> + Send + 'static,
{
    let slot = st.slot(id)?;
    let mut guard = slot.lock_owned().await;
    tokio::task::spawn_blocking(move || {
        let ws = guard.workspace.clone();
        let out = f(&mut guard.session, &ws);
        out.map(|t| (t, view(&guard.session)))
    })
    .await
    .map_err(ApiError::internal)?
    .map_err(ApiError::from)
}

async fn extract(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (_, v) = mutate(&st, &id, |s, ws| s.extract(ws)).await?;
    st.record(&id, "auto-extract", json!({ "lanes": v["lanes"].as_array().map_or(0, Vec::len) }));
    Ok(Json(v))
}

async fn reset(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let (_, v) = mutate(&st, &id, |s, _| {
        s.reset();
        Ok(())
    })
    .await?;
    st.record(&id, "reset", json!({}));
    Ok(Json(v))
}

#[derive(Deserialize)]
struct TraceRequest {
    bin: [usize; 2],
}

async fn trace(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<TraceRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let Json(req) = body?;
    let bin = req.bin;
    let result = mutate(&st, &id, move |s, ws| s.trace(ws, bin)).await;
    match &result {
        Ok((index, v)) => st.record(&id, "add-trace", json!({ "bin": bin, "ok": true, "index": index, "clicks": v["clicks"] })),
        Err(e) if e.status == StatusCode::CONFLICT => {
            // A click that drew nothing still costs the annotator a click.
            st.record(&id, "add-trace", json!({ "bin": bin, "ok": false, "failed_click": true }))
        }
        Err(_) => {}
    }
    result.map(|(_, v)| Json(v))
}

async fn delete_lane(
    State(st): State<Arc<AppState>>,
    Path((id, index)): Path<(String, usize)>,
) -> ApiResult<Json<Value>> {
    let (_, v) = mutate(&st, &id, move |s, _| s.delete(index)).await?;
    st.record(&id, "delete-lane", json!({ "index": index, "clicks": v["clicks"] }));
    Ok(Json(v))
}

async fn score(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = st.slot(&id)?;
    let (graph, clicks, scene_id) = {
        let guard = slot.lock().await;
        (guard.session.graph().clone(), guard.session.clicks(), guard.session.scene_id.clone())
    };
    let st2 = st.clone();
    let scene = tokio::task::spawn_blocking(move || st2.catalog.load(&scene_id))
        .await
        .map_err(ApiError::internal)?
        .ok_or_else(|| ApiError::internal("session scene disappeared"))?
        .map_err(ApiError::internal)?;
    let gt = scene
        .ground_truth
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "scene has no ground truth"))?;
    let resolution = scene.raster.resolution();
    let eval = tokio::task::spawn_blocking(move || evaluate_scene(&graph, &gt, &DEFAULT_THRESHOLDS_CM, resolution, 1.0))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    Ok(Json(json!({
        "topology_deviation": eval.topology_deviation,
        "precision_recall": eval.pr,
        "precision_undefined": eval.precision_undefined,
        "recall_undefined": eval.recall_undefined,
        "clicks": clicks,
    })))
}
