//! HTTP/JSON facade over the portfolio engine with file-backed persistence.
//!
//! Entities live under a data directory as JSON documents: `topologies/`, `portfolios/`, and
//! `runs/`. Runs execute in the background; their handles report progress in completed
//! (scenario, repetition) units and survive restarts (a run cut short by a restart is marked
//! failed).

mod error;
mod runs;
mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use capelin_core::metrics::METRIC_NAMES;
use capelin_core::portfolio::{recommend_plan, resolve, results_csv, run_portfolio, summary_csv, Portfolio, ResolveContext};
use capelin_core::topology::{enumerate_candidates, CandidateDimensions, ScalingConstants, Topology};

pub use error::{ApiError, ApiResult};
pub use runs::{RunHandle, RunReport, RunStatus};
pub use store::{Kind, Store};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Relative trace, placement, and interference paths in portfolios resolve against this.
    pub base_dir: PathBuf,
    /// Static UI bundle served under `/ui`.
    pub ui_dir: Option<PathBuf>,
    pub parallelism: usize,
}

pub struct AppState {
    config: ServiceConfig,
    store: Store,
    /// Handles of runs started by this process.
    live: Mutex<HashMap<String, RunHandle>>,
}

const INTERRUPTED: &str = "interrupted by a service restart";

impl AppState {
    /// Opens the data directory and marks runs left unfinished by a previous process as failed.
    pub fn open(config: ServiceConfig) -> ApiResult<Arc<Self>> {
        let store = Store::open(&config.data_dir)
            .map_err(|e| ApiError::Internal(format!("{}: {e}", config.data_dir.display())))?;
        for id in store.ids(Kind::Run)? {
            let mut handle: RunHandle = store.get(Kind::Run, &id)?;
            if handle.status.is_active() {
                log::warn!("run {id} was {:?} when the service stopped; marking it failed", handle.status);
                handle.status = RunStatus::Failed;
                handle.error = Some(INTERRUPTED.into());
                store.put(Kind::Run, &id, &handle)?;
            }
        }
        Ok(Arc::new(AppState { config, store, live: Mutex::new(HashMap::new()) }))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn handle(&self, run_id: &str) -> ApiResult<RunHandle> {
        if let Some(h) = self.live.lock().expect("run table").get(run_id) {
            return Ok(h.clone());
        }
        self.store.get(Kind::Run, run_id)
    }

    fn update(&self, run_id: &str, f: impl FnOnce(&mut RunHandle)) -> RunHandle {
        let mut live = self.live.lock().expect("run table");
        let handle = live.get_mut(run_id).expect("live run");
        f(handle);
        handle.clone()
    }

    fn persist(&self, handle: &RunHandle) {
        if let Err(e) = self.store.put(Kind::Run, &handle.run_id, handle) {
            log::error!("cannot persist run {}: {e}", handle.run_id);
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut app = Router::new()
        .route("/topologies", post(create_topology).get(list_topologies))
        .route("/topologies/{id}", get(get_topology))
        .route("/topologies/{id}/candidates", post(create_candidates))
        .route("/portfolios", post(create_portfolio).get(list_portfolios))
        .route("/portfolios/{id}", get(get_portfolio))
        .route("/portfolios/{id}/runs", post(launch_run).get(list_portfolio_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/results", get(get_results))
        .route("/runs/{id}/results.csv", get(get_results_csv))
        .route("/runs/{id}/summary.csv", get(get_summary_csv))
        .route("/metrics/names", get(metric_names));
    if let Some(ui) = &state.config.ui_dir {
        app = app
            .route("/", get(|| async { Redirect::temporary("/ui/") }))
            .nest_service("/ui", ServeDir::new(ui).append_index_html_on_directories(true));
    }
    app.with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(config: ServiceConfig, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let state = AppState::open(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::Validation(format!("invalid JSON body: {e}")))
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

#[derive(Serialize)]
struct Created {
    id: String,
}

#[derive(Serialize)]
struct Listed {
    id: String,
    name: Option<String>,
}

async fn create_topology(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let topology: Topology = parse(&body)?;
    topology.validate()?;
    let id = new_id();
    state.store.put(Kind::Topology, &id, &topology)?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn list_topologies(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<Listed>>> {
    let mut out = Vec::new();
    for id in state.store.ids(Kind::Topology)? {
        let t: Topology = state.store.get(Kind::Topology, &id)?;
        out.push(Listed { id, name: Some(t.name) });
    }
    Ok(Json(out))
}

async fn get_topology(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Topology>> {
    Ok(Json(state.store.get(Kind::Topology, &id)?))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct CandidateRequest {
    seed: u64,
    constants: Option<ScalingConstants>,
}

#[derive(Serialize)]
struct StoredCandidate {
    id: String,
    label: String,
    dimensions: CandidateDimensions,
    topology: Topology,
}

async fn create_candidates(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let base: Topology = state.store.get(Kind::Topology, &id)?;
    let req: CandidateRequest = if body.is_empty() { CandidateRequest::default() } else { parse(&body)? };
    let candidates = enumerate_candidates(&base, &req.constants.unwrap_or_default(), req.seed)?;
    let mut out = Vec::with_capacity(candidates.len());
    for (dimensions, topology) in candidates {
        let cid = new_id();
        state.store.put(Kind::Topology, &cid, &topology)?;
        out.push(StoredCandidate { id: cid, label: dimensions.label(), dimensions, topology });
    }
    Ok((StatusCode::CREATED, Json(out)))
}

async fn create_portfolio(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let portfolio: Portfolio = parse(&body)?;
    portfolio.validate()?;
    let id = new_id();
    state.store.put(Kind::Portfolio, &id, &portfolio)?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn list_portfolios(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<Listed>>> {
    let mut out = Vec::new();
    for id in state.store.ids(Kind::Portfolio)? {
        let p: Portfolio = state.store.get(Kind::Portfolio, &id)?;
        out.push(Listed { id, name: p.name });
    }
    Ok(Json(out))
}

async fn get_portfolio(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Portfolio>> {
    Ok(Json(state.store.get(Kind::Portfolio, &id)?))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct LaunchRequest {
    repetitions: Option<u32>,
    parallelism: Option<usize>,
}

async fn launch_run(
    State(state): State<Arc<AppState>>,
    Path(portfolio_id): Path<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let portfolio: Portfolio = state.store.get(Kind::Portfolio, &portfolio_id)?;
    let req: LaunchRequest = if body.is_empty() { LaunchRequest::default() } else { parse(&body)? };

    let resolver = Arc::clone(&state);
    let resolved = blocking(move || {
        let lookup = |id: &str| resolver.store.get::<Topology>(Kind::Topology, id).ok();
        let ctx = ResolveContext { base_dir: resolver.config.base_dir.clone(), topology_lookup: Some(&lookup) };
        let mut resolved = resolve(&portfolio, &ctx)?;
        if let Some(r) = req.repetitions {
            resolved = resolved.with_repetitions(r)?;
        }
        Ok(resolved)
    })
    .await?;

    let run_id = new_id();
    let total = resolved.scenarios.len() * resolved.repetitions() as usize;
    let handle = RunHandle::new(run_id.clone(), portfolio_id.clone(), total);
    {
        let mut live = state.live.lock().expect("run table");
        if let Some(active) = live.values().find(|h| h.portfolio_id == portfolio_id && h.status.is_active()) {
            return Err(ApiError::Conflict(format!("portfolio {portfolio_id} already has active run {}", active.run_id)));
        }
        live.insert(run_id.clone(), handle.clone());
    }
    state.persist(&handle);

    let parallelism = req.parallelism.unwrap_or(state.config.parallelism).max(1);
    let worker = Arc::clone(&state);
    tokio::task::spawn_blocking(move || {
        let running = worker.update(&run_id, |h| h.status = RunStatus::Running);
        worker.persist(&running);
        let progress = |done: usize, _total: usize| {
            worker.update(&run_id, |h| h.advance(done));
        };
        let outcome = run_portfolio(&resolved, parallelism, Some(&progress))
            .map_err(ApiError::from)
            .and_then(|results| {
                let recommendation = recommend_plan(&results, &resolved)?;
                let dir = worker.store.entity_dir(Kind::Run, &run_id);
                let io = |e: std::io::Error| ApiError::Internal(format!("{}: {e}", dir.display()));
                std::fs::create_dir_all(&dir).map_err(io)?;
                std::fs::write(dir.join("results.csv"), results_csv(&results)).map_err(io)?;
                std::fs::write(dir.join("summary.csv"), summary_csv(&results)).map_err(io)?;
                let report = RunReport {
                    run_id: run_id.clone(),
                    portfolio_id: portfolio_id.clone(),
                    results,
                    recommendation,
                };
                let body = serde_json::to_vec(&report).map_err(|e| ApiError::Internal(e.to_string()))?;
                std::fs::write(dir.join("report.json"), body).map_err(io)
            });
        let finished = worker.update(&run_id, |h| match outcome {
            Ok(()) => {
                h.advance(h.total);
                h.status = RunStatus::Done;
            }
            Err(e) => {
                h.status = RunStatus::Failed;
                h.error = Some(e.to_string());
            }
        });
        worker.persist(&finished);
    });

    Ok((StatusCode::ACCEPTED, Json(handle)))
}

async fn list_portfolio_runs(
    State(state): State<Arc<AppState>>,
    Path(portfolio_id): Path<String>,
) -> ApiResult<Json<Vec<RunHandle>>> {
    if !state.store.exists(Kind::Portfolio, &portfolio_id) {
        return Err(ApiError::NotFound(format!("no portfolios with id `{portfolio_id}`")));
    }
    let mut out = Vec::new();
    for id in state.store.ids(Kind::Run)? {
        let h = state.handle(&id)?;
        if h.portfolio_id == portfolio_id {
            out.push(h);
        }
    }
    out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.run_id.cmp(&b.run_id)));
    Ok(Json(out))
}

async fn get_run(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<RunHandle>> {
    Ok(Json(state.handle(&id)?))
}

fn finished_file(state: &AppState, id: &str, name: &str) -> ApiResult<Vec<u8>> {
    let handle = state.handle(id)?;
    match handle.status {
        RunStatus::Done => {}
        RunStatus::Failed => {
            return Err(ApiError::Conflict(format!("run {id} failed: {}", handle.error.unwrap_or_default())))
        }
        _ => return Err(ApiError::Conflict(format!("run {id} has not finished"))),
    }
    let path = state.store.entity_dir(Kind::Run, id).join(name);
    std::fs::read(&path).map_err(|e| ApiError::Internal(format!("{}: {e}", path.display())))
}

async fn get_results(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let body = finished_file(&state, &id, "report.json")?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

async fn get_results_csv(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let body = finished_file(&state, &id, "results.csv")?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], body).into_response())
}

async fn get_summary_csv(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let body = finished_file(&state, &id, "summary.csv")?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], body).into_response())
}

async fn metric_names() -> Json<[&'static str; 14]> {
    Json(METRIC_NAMES)
}
