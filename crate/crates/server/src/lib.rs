//! HTTP gateway over [`gapscan::pipeline::Session`].
//!
//! Every session owns its dataset version chain, Pareto state, surrogate
//! models and proposals. Mutations on one session run one at a time on a
//! blocking worker; view requests read the last published snapshot and never
//! wait on a running mutation. Responses carry the dataset version they were
//! computed from, and writes accept an `expected_version` to reject stale
//! clients.

pub mod config;
pub mod error;
pub mod state;

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use gapscan::data::{gen_uniform, load_csv, save_dataset, Manifest};
use gapscan::oracles::oracle_by_name;
use gapscan::pipeline::{
    NeighborRequest, SearchRequest, Session, SessionConfig, TargetFilter, VariableDelta, ViewRequest,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::ServerConfig;
pub use error::ApiError;
pub use state::AppState;

/// The endpoint description shipped with the gateway.
pub const OPENAPI: &str = include_str!("../../../docs/openapi.json");

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/openapi.json", get(openapi))
        .route("/datasets", get(list_datasets))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_summary).delete(delete_session))
        .route("/sessions/{id}/search", post(search))
        .route("/sessions/{id}/round", post(round))
        .route("/sessions/{id}/proposals", get(list_proposals))
        .route("/sessions/{id}/proposals/{pid}", patch(edit_proposal))
        .route("/sessions/{id}/verify", post(verify))
        .route("/sessions/{id}/view", get(view))
        .route("/sessions/{id}/progress", get(progress))
        .route("/sessions/{id}/save", post(save))
        .route("/jobs/{id}", get(job))
        .with_state(state)
}

/// Binds the configured address and serves until the process stops.
pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.address()).await?;
    tracing::info!(address = %listener.local_addr()?, data_dir = %config.data_dir.display(), "gateway listening");
    axum::serve(listener, router(Arc::new(AppState::new(config)))).await
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn to_json<T: Serialize>(v: &T) -> ApiResult<Value> {
    serde_json::to_value(v).map_err(|e| gapscan::Error::from(e).into())
}

fn parse<T: DeserializeOwned>(v: Value) -> ApiResult<T> {
    serde_json::from_value(v).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn openapi() -> Response {
    ([(header::CONTENT_TYPE, "application/json")], OPENAPI).into_response()
}

/// A dataset name must be a single plain path component.
fn dataset_path(dir: &Path, name: &str, ext: &str) -> ApiResult<PathBuf> {
    let mut parts = Path::new(name).components();
    match (parts.next(), parts.next()) {
        (Some(Component::Normal(_)), None) => Ok(dir.join(format!("{name}.{ext}"))),
        _ => Err(ApiError::bad_request(format!("invalid dataset name `{name}`"))),
    }
}

async fn list_datasets(State(state): State<Shared>) -> ApiResult<Json<Value>> {
    let mut names = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&state.config.data_dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "csv") && path.with_extension("json").exists() {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    names.push(stem.to_string());
                }
            }
        }
    }
    names.sort();
    Ok(Json(json!({ "datasets": names })))
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum DatasetRef {
    /// `<name>.csv` with its `<name>.json` manifest in the data directory.
    File { name: String },
    /// Uniform random inputs measured by the session oracle.
    Uniform {
        dim: usize,
        rows: usize,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Deserialize)]
struct CreateSession {
    dataset: DatasetRef,
    oracle: String,
    #[serde(flatten)]
    config: SessionConfig,
}

async fn create_session(
    State(state): State<Shared>,
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSession = parse(body(payload)?)?;
    let data_dir = state.config.data_dir.clone();
    let session = tokio::task::spawn_blocking(move || -> ApiResult<Session> {
        let (dataset, oracle) = match &req.dataset {
            DatasetRef::File { name } => {
                let csv = dataset_path(&data_dir, name, "csv")?;
                let manifest = dataset_path(&data_dir, name, "json")?;
                if !csv.exists() || !manifest.exists() {
                    return Err(ApiError::bad_request(format!("no dataset named `{name}` in the data directory")));
                }
                let ds = load_csv(&csv, &Manifest::load(&manifest)?)?;
                let oracle = oracle_by_name(&req.oracle, ds.input_dim())?;
                (ds, oracle)
            }
            DatasetRef::Uniform { dim, rows, seed } => {
                let oracle = oracle_by_name(&req.oracle, *dim)?;
                (gen_uniform(oracle.as_ref(), *rows, *seed)?, oracle)
            }
        };
        Ok(Session::new(dataset, Arc::from(oracle), req.config)?)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let summary = summarize(&session);
    let id = state.insert_session(session);
    tracing::info!(session = id, "session created");
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "session": summary }))))
}

fn summarize(s: &Session) -> Value {
    json!({
        "dataset_version": s.version(),
        "rows": s.dataset().len(),
        "variables": s.dataset().variables(),
        "config": s.config(),
        "phase": s.phase(),
        "proposals": s.proposals().count(),
    })
}

async fn list_sessions(State(state): State<Shared>) -> Json<Value> {
    Json(json!({ "sessions": state.session_ids() }))
}

async fn session_summary(State(state): State<Shared>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<Value>> {
    Ok(Json(summarize(&state.session(id)?.read())))
}

async fn delete_session(State(state): State<Shared>, UrlPath(id): UrlPath<u64>) -> ApiResult<StatusCode> {
    state.remove_session(id)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize, Default)]
struct SearchMode {
    #[serde(default, rename = "async")]
    run_async: bool,
}

async fn search(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    mode: Result<Query<SearchMode>, QueryRejection>,
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Response> {
    let Query(mode) = mode.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let req: SearchRequest = parse(body(payload)?)?;
    let handle = state.session(id)?;
    if mode.run_async {
        let job = state.start_job(id);
        let jobs = Arc::clone(&state);
        tokio::spawn(async move {
            let out = handle.write(move |s| s.search(&req)).await.and_then(|o| to_json(&o));
            jobs.finish_job(job, out);
        });
        let accepted = json!({ "job_id": job, "status_url": format!("/jobs/{job}") });
        return Ok((StatusCode::ACCEPTED, Json(accepted)).into_response());
    }
    let out = handle.write(move |s| s.search(&req)).await?;
    Ok(Json(out).into_response())
}

async fn job(State(state): State<Shared>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<state::Job>> {
    Ok(Json(state.job(id)?))
}

#[derive(Deserialize)]
struct RoundBody {
    #[serde(default)]
    search: SearchRequest,
    verify_budget: usize,
}

async fn round(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req: RoundBody = parse(body(payload)?)?;
    let handle = state.session(id)?;
    let report = handle.write(move |s| s.run_round(&req.search, req.verify_budget)).await?;
    Ok(Json(to_json(&report)?))
}

async fn list_proposals(State(state): State<Shared>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<Value>> {
    let snap = state.session(id)?.read();
    let proposals: Vec<_> = snap.proposals().collect();
    Ok(Json(json!({ "dataset_version": snap.version(), "proposals": proposals })))
}

#[derive(Deserialize)]
struct EditBody {
    #[serde(default)]
    deltas: Vec<VariableDelta>,
    expected_version: Option<u64>,
}

async fn edit_proposal(
    State(state): State<Shared>,
    UrlPath((id, pid)): UrlPath<(u64, u64)>,
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req: EditBody = parse(body(payload)?)?;
    let handle = state.session(id)?;
    let out = handle.write(move |s| s.edit(pid, &req.deltas, req.expected_version)).await?;
    Ok(Json(to_json(&out)?))
}

#[derive(Deserialize)]
struct VerifyBody {
    pids: Vec<u64>,
    expected_version: Option<u64>,
}

async fn verify(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req: VerifyBody = parse(body(payload)?)?;
    let handle = state.session(id)?;
    let out = handle.write(move |s| s.verify(&req.pids, req.expected_version)).await?;
    Ok(Json(to_json(&out)?))
}

/// Query form of [`ViewRequest`]; `subset` is `target:lo:hi` items joined by commas.
#[derive(Deserialize, Default)]
#[serde(default)]
struct ViewQuery {
    subset: Option<String>,
    use_global_pca: Option<bool>,
    neighbor: Option<u64>,
    k: Option<usize>,
    bars_target: Option<String>,
    grid: Option<usize>,
    bins: Option<usize>,
}

impl ViewQuery {
    fn into_request(self) -> ApiResult<ViewRequest> {
        let defaults = ViewRequest::default();
        let subset = match self.subset.as_deref().filter(|s| !s.is_empty()) {
            None => Vec::new(),
            Some(text) => text.split(',').map(parse_filter).collect::<ApiResult<_>>()?,
        };
        if self.k.is_some() && self.neighbor.is_none() {
            return Err(ApiError::bad_request("`k` needs a `neighbor` proposal id"));
        }
        Ok(ViewRequest {
            subset,
            use_global_pca: self.use_global_pca.unwrap_or(defaults.use_global_pca),
            neighbor: self.neighbor.map(|pid| NeighborRequest {
                pid,
                k: self.k.unwrap_or(9),
            }),
            bars_target: self.bars_target,
            grid: self.grid.unwrap_or(defaults.grid),
            bins: self.bins.unwrap_or(defaults.bins),
        })
    }
}

fn parse_filter(item: &str) -> ApiResult<TargetFilter> {
    let bad = || ApiError::bad_request(format!("subset item `{item}` is not `target:lo:hi`"));
    let mut parts = item.split(':');
    let (Some(target), Some(lo), Some(hi), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    Ok(TargetFilter {
        target: target.to_string(),
        lo: lo.parse().map_err(|_| bad())?,
        hi: hi.parse().map_err(|_| bad())?,
    })
}

async fn view(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    query: Result<Query<ViewQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(query) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let req = query.into_request()?;
    let snap = state.session(id)?.read();
    let bundle = tokio::task::spawn_blocking(move || snap.view(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(to_json(&bundle)?))
}

async fn progress(State(state): State<Shared>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<Value>> {
    Ok(Json(to_json(&state.session(id)?.read().progress())?))
}

#[derive(Deserialize)]
struct SaveBody {
    name: String,
}

async fn save(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    payload: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req: SaveBody = parse(body(payload)?)?;
    let dir = state.config.data_dir.clone();
    dataset_path(&dir, &req.name, "csv")?;
    let snap = state.session(id)?.read();
    let ds = snap.dataset();
    let name = req.name.clone();
    tokio::task::spawn_blocking(move || {
        std::fs::create_dir_all(&dir)?;
        save_dataset(&ds, &dir, &name)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(json!({
        "name": req.name,
        "rows": snap.dataset().len(),
        "dataset_version": snap.version(),
    })))
}
