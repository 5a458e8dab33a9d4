//! HTTP/JSON front end for the slice orchestrator.
//!
//! Every mutation is shipped as a job to a single actor thread that owns the
//! [`Orchestrator`]. After each batch of jobs the actor publishes an immutable
//! snapshot, which all reads use, and answers the callers. Once its inbox is
//! empty it drains the pending admission queue and publishes again.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use axum::extract::{Path as UrlPath, Request, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use slicefab_core::api::{
    self, CreateFederationRequest, ErrorBody, Fig6Request, Fig6Response, GrantResponse, ParseError,
    SubmitResponse, REQUEST_ID_HEADER, TENANT_HEADER,
};
use slicefab_core::bench::{self, BenchConfig};
use slicefab_core::model::Inventory;
use slicefab_core::orchestrator::{DelegationGrant, Orchestrator, OrchestratorConfig, SliceDelta};
use slicefab_core::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

/// Environment variable overriding the listen address.
pub const LISTEN_ENV: &str = "SLICEFAB_LISTEN";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    listen: Option<String>,
    inventory: Option<PathBuf>,
    #[serde(default)]
    orchestrator: OrchestratorConfig,
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub inventory: Inventory,
    pub orchestrator: OrchestratorConfig,
}

impl Default for ServerConfig {
    /// Serves the nine-line bench infrastructure.
    fn default() -> Self {
        Self {
            listen: DEFAULT_LISTEN.parse().expect("valid literal"),
            inventory: bench::fig6_inventory(&BenchConfig::default()),
            orchestrator: OrchestratorConfig::default(),
        }
    }
}

impl ServerConfig {
    /// Parses a TOML config. A relative inventory path is resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> anyhow::Result<Self> {
        let file: FileConfig = toml::from_str(text).context("invalid config")?;
        let mut cfg = ServerConfig {
            orchestrator: file.orchestrator,
            ..ServerConfig::default()
        };
        if let Some(listen) = file.listen {
            cfg.listen = listen
                .parse()
                .with_context(|| format!("invalid listen address `{listen}`"))?;
        }
        if let Some(path) = file.inventory {
            let path = base.join(path);
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading inventory {}", path.display()))?;
            cfg.inventory = api::parse_inventory(&text)
                .with_context(|| format!("inventory {}", path.display()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Applies [`LISTEN_ENV`] if set.
    pub fn with_env(mut self) -> anyhow::Result<Self> {
        if let Ok(listen) = std::env::var(LISTEN_ENV) {
            self.listen = listen
                .parse()
                .with_context(|| format!("invalid {LISTEN_ENV} `{listen}`"))?;
        }
        Ok(self)
    }
}

type Reply = Box<dyn FnOnce() + Send>;
type Job = Box<dyn FnOnce(&mut Orchestrator) -> Reply + Send>;

#[derive(Clone)]
pub struct AppState {
    jobs: mpsc::Sender<Job>,
    snapshot: watch::Receiver<Arc<Orchestrator>>,
}

impl AppState {
    /// Starts the actor owning `orch`.
    pub fn spawn(orch: Orchestrator) -> (Self, JoinHandle<()>) {
        let (jobs, rx) = mpsc::channel(1024);
        let (snap_tx, snapshot) = watch::channel(Arc::new(orch.clone()));
        let actor = tokio::task::spawn_blocking(move || run_actor(orch, rx, snap_tx));
        (Self { jobs, snapshot }, actor)
    }

    /// Runs `f` on the actor. The reply is released only after the
    /// resulting state has been published, so a read that follows sees it.
    /// Admission of submitted slices happens afterwards.
    async fn mutate<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Orchestrator) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |orch| {
            let out = f(orch);
            Box::new(move || {
                let _ = tx.send(out);
            })
        });
        self.jobs
            .send(job)
            .await
            .map_err(|_| ApiError::unavailable())?;
        rx.await.map_err(|_| ApiError::unavailable())
    }

    fn read(&self) -> Arc<Orchestrator> {
        self.snapshot.borrow().clone()
    }
}

fn settle(orch: &mut Orchestrator) {
    if !orch.pending().is_empty() {
        for outcome in orch.process_pending() {
            tracing::info!(?outcome, "admission");
        }
    }
}

/// Runs on a blocking thread: realtime mode sleeps inside the orchestrator.
///
/// Pending admissions are settled before every job, so the order of
/// orchestrator calls does not depend on when the inbox happens to be empty.
fn run_actor(
    mut orch: Orchestrator,
    mut rx: mpsc::Receiver<Job>,
    snapshot: watch::Sender<Arc<Orchestrator>>,
) {
    while let Some(first) = rx.blocking_recv() {
        let mut replies = Vec::new();
        let mut next = Some(first);
        while let Some(job) = next {
            settle(&mut orch);
            replies.push(job(&mut orch));
            next = rx.try_recv().ok();
        }
        snapshot.send_replace(Arc::new(orch.clone()));
        for reply in replies {
            reply();
        }
        if rx.is_empty() && !orch.pending().is_empty() {
            settle(&mut orch);
            snapshot.send_replace(Arc::new(orch.clone()));
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                kind: kind.into(),
                path: None,
            },
        }
    }

    fn unauthenticated(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", msg)
    }

    fn unavailable() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "unavailable",
            "orchestrator is shutting down",
        )
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let (status, kind) = match &err {
            Error::Validation(v) => {
                return Self {
                    status: StatusCode::BAD_REQUEST,
                    body: ErrorBody {
                        error: v.message.clone(),
                        kind: "validation".into(),
                        path: Some(v.path.pointer()),
                    },
                }
            }
            Error::SelfFederation(_) => (StatusCode::BAD_REQUEST, "validation"),
            Error::NotFound { .. } | Error::UnknownScenario(_) => {
                (StatusCode::NOT_FOUND, "not_found")
            }
            Error::Unauthorized { .. } | Error::Ownership { .. } => {
                (StatusCode::FORBIDDEN, "forbidden")
            }
            Error::EquipmentExhausted(_)
            | Error::InfeasibleDelta { .. }
            | Error::IllegalTransition { .. }
            | Error::InvalidState { .. }
            | Error::Underflow(_)
            | Error::Capacity(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Json(_) | Error::Csv(_) | Error::Io(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        Self::new(status, kind, err.to_string())
    }
}

impl From<ParseError> for ApiError {
    fn from(err: ParseError) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: err.message,
                kind: "validation".into(),
                path: Some(err.pointer),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Resolves the calling tenant. Absent or unknown ids are unauthenticated.
fn tenant(state: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    let id = headers
        .get(TENANT_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty())
        .ok_or_else(|| ApiError::unauthenticated(format!("missing {TENANT_HEADER} header")))?;
    if state.read().inventory().tenant(id).is_none() {
        return Err(ApiError::unauthenticated(format!("unknown tenant `{id}`")));
    }
    Ok(id.to_string())
}

async fn submit_slice(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: String,
) -> ApiResult<Response> {
    let caller = tenant(&state, &headers)?;
    let bp = api::parse_blueprint(&body)?;
    if bp.tenant != caller {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!(
                "tenant `{caller}` may not submit on behalf of `{}`",
                bp.tenant
            ),
        ));
    }
    let slice_id = state
        .mutate(move |orch| {
            let arrival = orch.tick();
            orch.submit(bp, arrival)
        })
        .await??;
    tracing::info!(%slice_id, tenant = %caller, "slice submitted");
    Ok((StatusCode::ACCEPTED, Json(SubmitResponse { slice_id })).into_response())
}

async fn list_slices(State(state): State<AppState>) -> Response {
    let orch = state.read();
    Json(orch.slices().collect::<Vec<_>>()).into_response()
}

async fn get_slice(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let orch = state.read();
    let slice = orch.slice(&id).ok_or_else(|| Error::NotFound {
        kind: "slice",
        id: id.clone(),
    })?;
    Ok(Json(slice).into_response())
}

async fn reconfigure_slice(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
    body: String,
) -> ApiResult<Response> {
    let caller = tenant(&state, &headers)?;
    let delta: SliceDelta = api::parse_json(&body)?;
    let slice = state
        .mutate(move |orch| orch.reconfigure(&caller, &id, delta).cloned())
        .await??;
    Ok(Json(slice).into_response())
}

async fn terminate_slice(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let caller = tenant(&state, &headers)?;
    let slice = state
        .mutate(move |orch| orch.terminate(&caller, &id).cloned())
        .await??;
    Ok(Json(slice).into_response())
}

async fn create_federation(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: String,
) -> ApiResult<Response> {
    let caller = tenant(&state, &headers)?;
    let req: CreateFederationRequest = api::parse_json(&body)?;
    let link = state
        .mutate(move |orch| {
            orch.create_federation(
                &caller,
                &req.exporter,
                &req.importer,
                req.rules,
                req.encrypted,
            )
        })
        .await??;
    Ok((StatusCode::CREATED, Json(link)).into_response())
}

async fn get_federation(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let orch = state.read();
    let link = orch
        .federations()
        .link(&id)
        .ok_or_else(|| Error::NotFound {
            kind: "federation",
            id: id.clone(),
        })?;
    Ok(Json(link).into_response())
}

async fn consent_federation(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Response> {
    let caller = tenant(&state, &headers)?;
    let link = state
        .mutate(move |orch| orch.consent(&caller, &id))
        .await??;
    Ok(Json(link).into_response())
}

async fn create_delegation(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: String,
) -> ApiResult<Response> {
    let caller = tenant(&state, &headers)?;
    let grant: DelegationGrant = api::parse_json(&body)?;
    if grant.grantor != caller {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "forbidden",
            format!(
                "tenant `{caller}` may not grant on behalf of `{}`",
                grant.grantor
            ),
        ));
    }
    let grant_id = state.mutate(move |orch| orch.delegate(grant)).await??;
    Ok((StatusCode::CREATED, Json(GrantResponse { grant_id })).into_response())
}

async fn bench_fig6(body: String) -> ApiResult<Response> {
    let req: Fig6Request = if body.trim().is_empty() {
        Fig6Request::default()
    } else {
        api::parse_json(&body)?
    };
    let config = req.to_config();
    let run = tokio::task::spawn_blocking(move || bench::run_fig6(&config))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })??;
    Ok(Json(Fig6Response {
        samples: run.samples,
        aborted: run.aborted,
        event_log: run.event_log,
    })
    .into_response())
}

async fn run_scenario(UrlPath(name): UrlPath<String>) -> ApiResult<Response> {
    let report = tokio::task::spawn_blocking(move || bench::run_scenario(&name))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })??;
    Ok(Json(report).into_response())
}

async fn events(State(state): State<AppState>) -> Response {
    (
        [("content-type", "application/x-ndjson")],
        state.read().event_log_ndjson(),
    )
        .into_response()
}

async fn snapshot(State(state): State<AppState>) -> Response {
    (
        [("content-type", "application/json")],
        state.read().export_snapshot(),
    )
        .into_response()
}

async fn request_id(mut req: Request, next: Next) -> Response {
    let id = match req.headers().get(REQUEST_ID_HEADER) {
        Some(v) => v.clone(),
        None => {
            let v =
                HeaderValue::from_str(&uuid::Uuid::new_v4().to_string()).expect("uuid is ASCII");
            req.headers_mut().insert(REQUEST_ID_HEADER, v.clone());
            v
        }
    };
    tracing::debug!(method = %req.method(), path = %req.uri().path(), request_id = ?id, "request");
    let mut resp = next.run(req).await;
    resp.headers_mut().insert(REQUEST_ID_HEADER, id);
    resp
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/slices", post(submit_slice).get(list_slices))
        .route("/slices/{id}", get(get_slice).delete(terminate_slice))
        .route("/slices/{id}/reconfigure", post(reconfigure_slice))
        .route("/federations", post(create_federation))
        .route("/federations/{id}", get(get_federation))
        .route("/federations/{id}/consent", post(consent_federation))
        .route("/delegations", post(create_delegation))
        .route("/bench/fig6", post(bench_fig6))
        .route("/scenarios/{name}", post(run_scenario))
        .route("/events", get(events))
        .route("/snapshot", get(snapshot))
        .route("/health", get(|| async { "ok" }))
        .layer(middleware::from_fn(request_id))
        .with_state(state)
}

/// A running service. Dropping it leaves the server running; call
/// [`ServiceHandle::shutdown`] to stop it.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) -> anyhow::Result<()> {
        let _ = self.stop.send(());
        self.task.await??;
        Ok(())
    }

    /// Waits until the server exits on its own.
    pub async fn join(self) -> anyhow::Result<()> {
        let _keep = self.stop;
        self.task.await??;
        Ok(())
    }
}

/// Binds `config.listen` and starts serving.
pub async fn serve(config: ServerConfig) -> anyhow::Result<ServiceHandle> {
    let listener = TcpListener::bind(config.listen)
        .await
        .with_context(|| format!("binding {}", config.listen))?;
    serve_on(listener, config).await
}

pub async fn serve_on(
    listener: TcpListener,
    config: ServerConfig,
) -> anyhow::Result<ServiceHandle> {
    let orch = Orchestrator::new(config.inventory, config.orchestrator)?;
    let (state, _actor) = AppState::spawn(orch);
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let app = router(state);
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    tracing::info!(%addr, "listening");
    Ok(ServiceHandle { addr, stop, task })
}
