//! The environment as a service: an HTTP/JSON API for runs, replay and
//! reports, and a newline-delimited JSON listener for episode traffic.

pub mod policy_pool;
pub mod runs;
pub mod setup;
pub mod wire_server;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use webenv_core::api::{ApiError, Health, ReplayRequest, ReportResponse, RunAccepted, RunRequest};
use webenv_core::backend::graph::MockSiteGraph;
use webenv_core::orchestrator::{replay, report_from_dir, ReplayError};
use webenv_core::trajectory::TrajectoryFile;
use webenv_core::wire::WIRE_VERSION;

use crate::policy_pool::PolicyPool;
use crate::runs::RunRegistry;
use crate::setup::{policy_source, prepare};
use crate::wire_server::{serve_wire, DriverSetup, WireShared, DEFAULT_IDLE_TIMEOUT};

pub const DEFAULT_POLICY_WAIT: Duration = Duration::from_secs(60);

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("driver defaults: {0}")]
    Setup(#[from] setup::SetupError),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub http_bind: SocketAddr,
    /// Defaults to the HTTP port plus one (or an ephemeral port when the HTTP
    /// port is ephemeral).
    pub wire_bind: Option<SocketAddr>,
    /// Suite, backend and limits used by driver sessions. Its policy field
    /// is ignored.
    pub driver: Option<RunRequest>,
    pub idle_timeout: Duration,
    /// How long a `wire` run waits for a policy connection per episode.
    pub policy_wait: Duration,
}

impl ServiceConfig {
    pub fn new(http_bind: SocketAddr) -> Self {
        ServiceConfig {
            http_bind,
            wire_bind: None,
            driver: None,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            policy_wait: DEFAULT_POLICY_WAIT,
        }
    }
}

struct AppState {
    runs: Arc<RunRegistry>,
    pool: Arc<PolicyPool>,
    wire_addr: SocketAddr,
}

type Shared = Arc<AppState>;

/// A running service. Dropping it leaves the listeners running; call
/// [`RunningService::shutdown`] to stop them.
pub struct RunningService {
    pub http_addr: SocketAddr,
    pub wire_addr: SocketAddr,
    stop: watch::Sender<bool>,
    http: JoinHandle<()>,
    wire: JoinHandle<()>,
}

impl RunningService {
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.http.await;
        let _ = self.wire.await;
    }

    /// Serve until the process is interrupted.
    pub async fn join(self) {
        let _ = self.http.await;
        let _ = self.wire.await;
    }
}

async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })
}

pub async fn start(cfg: ServiceConfig) -> Result<RunningService, ServiceError> {
    let pool = Arc::new(PolicyPool::new(cfg.policy_wait));
    let driver = match &cfg.driver {
        Some(req) => {
            let p = prepare(req, pool.clone())?;
            Some(DriverSetup {
                manifest: p.suite.manifest,
                env: p.env,
            })
        }
        None => None,
    };

    let http_listener = bind(cfg.http_bind).await?;
    let http_addr = http_listener.local_addr().expect("bound socket has an address");
    let wire_bind = cfg.wire_bind.unwrap_or_else(|| {
        let port = if http_addr.port() == 0 { 0 } else { http_addr.port().wrapping_add(1) };
        SocketAddr::new(http_addr.ip(), port)
    });
    let wire_listener = bind(wire_bind).await?;
    let wire_addr = wire_listener.local_addr().expect("bound socket has an address");

    let (stop, stop_rx) = watch::channel(false);
    let shared = Arc::new(WireShared::new(driver, pool.clone(), cfg.idle_timeout));
    let wire = tokio::spawn(serve_wire(wire_listener, shared, stop_rx.clone()));

    let state = Arc::new(AppState {
        runs: Arc::new(RunRegistry::default()),
        pool,
        wire_addr,
    });
    let app = router(state);
    let mut http_stop = stop_rx;
    let http = tokio::spawn(async move {
        let r = axum::serve(http_listener, app)
            .with_graceful_shutdown(async move {
                let _ = http_stop.changed().await;
            })
            .await;
        if let Err(e) = r {
            tracing::error!(error = %e, "http server failed");
        }
    });
    tracing::info!(%http_addr, %wire_addr, "service listening");
    Ok(RunningService {
        http_addr,
        wire_addr,
        stop,
        http,
        wire,
    })
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/runs", post(create_run))
        .route("/v1/runs/{id}", get(run_status))
        .route("/v1/runs/{id}/wait", get(run_wait))
        .route("/v1/replay", post(replay_trajectory))
        .route("/v1/report", get(report))
        .with_state(state)
}

fn fail(status: StatusCode, error: impl ToString) -> Response {
    (status, Json(ApiError { error: error.to_string() })).into_response()
}

async fn health(State(s): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        wire_version: WIRE_VERSION.into(),
        wire_addr: s.wire_addr.to_string(),
    })
}

async fn create_run(State(s): State<Shared>, Json(req): Json<RunRequest>) -> Response {
    let policy = match policy_source(&req.policy, &s.pool) {
        Ok(p) => p,
        Err(e) => return fail(StatusCode::BAD_REQUEST, e),
    };
    // Suite files and graphs are read off the async workers.
    let prepared = tokio::task::spawn_blocking(move || prepare(&req, policy)).await;
    match prepared {
        Ok(Ok(p)) => {
            let run_id = s.runs.start(p.suite.manifest, p.env);
            (StatusCode::ACCEPTED, Json(RunAccepted { run_id })).into_response()
        }
        Ok(Err(e)) => fail(StatusCode::BAD_REQUEST, e),
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn run_status(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    match s.runs.status(&id) {
        Some(st) => Json(st).into_response(),
        None => fail(StatusCode::NOT_FOUND, format!("no run `{id}`")),
    }
}

async fn run_wait(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    match s.runs.wait(&id).await {
        Some(st) => Json(st).into_response(),
        None => fail(StatusCode::NOT_FOUND, format!("no run `{id}`")),
    }
}

async fn replay_trajectory(Json(req): Json<ReplayRequest>) -> Response {
    let loaded = tokio::task::spawn_blocking(move || {
        let file = TrajectoryFile::load(Path::new(&req.traj)).map_err(|e| format!("{}: {e}", req.traj))?;
        let graph = MockSiteGraph::load(Path::new(&req.graph)).map_err(|e| format!("{}: {e}", req.graph))?;
        Ok::<_, String>((file, graph, req.seed))
    })
    .await;
    let (file, graph, seed) = match loaded {
        Ok(Ok(v)) => v,
        Ok(Err(e)) => return fail(StatusCode::BAD_REQUEST, e),
        Err(e) => return fail(StatusCode::INTERNAL_SERVER_ERROR, e),
    };
    match replay(&file, Arc::new(graph), seed).await {
        Ok(r) => Json(r).into_response(),
        Err(e @ ReplayError::Refused(_)) => fail(StatusCode::CONFLICT, e),
        Err(e) => fail(StatusCode::UNPROCESSABLE_ENTITY, e),
    }
}

#[derive(Deserialize)]
struct ReportQuery {
    dir: String,
}

async fn report(Query(q): Query<ReportQuery>) -> Response {
    let r = tokio::task::spawn_blocking(move || report_from_dir(Path::new(&q.dir))).await;
    match r {
        Ok(Ok(report)) => Json(ReportResponse {
            rendered: report.render(),
            report,
        })
        .into_response(),
        Ok(Err(e)) => fail(StatusCode::BAD_REQUEST, e),
        Err(e) => fail(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}
