//! HTTP surface: registry, dispatch, event streams and workflows, plus the
//! `/run` + `/card` pair every agent exposes.

use std::convert::Infallible;
use std::future::{Future, IntoFuture};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use rcdiag_core::domain::AgentCard;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::oneshot;

use crate::agents::{Agent, AgentError};
use crate::cpa::{DispatchError, RunResponse};
use crate::protocol::InvokeRequest;
use crate::registry::RegistryError;
use crate::service::{Confirmation, FollowUpError, GraphEdits, Service};

/// How long in-flight requests get after a shutdown request.
pub const SHUTDOWN_DEADLINE: Duration = Duration::from_secs(10);

fn error_body(status: StatusCode, kind: &str, message: impl ToString) -> Response {
    (status, Json(json!({"kind": kind, "message": message.to_string()}))).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/register", post(register))
        .route("/agents", get(list_agents))
        .route("/ready", get(ready))
        .route("/invoke", post(invoke))
        .route("/events", get(events))
        .route("/workflows", post(submit_workflow))
        .route("/workflows/{id}", get(get_workflow))
        .route("/graphs/{id}/edits", post(edit_graph))
        .route("/recommendations/{id}/confirm", post(confirm_recommendation))
        .route("/agents/{name}/run", post(local_run))
        .route("/agents/{name}/card", get(local_card))
        .with_state(service)
}

async fn register(State(s): State<Arc<Service>>, Json(card): Json<AgentCard>) -> Response {
    match s.registry().register(card) {
        Ok(id) => Json(json!({"agent_id": id})).into_response(),
        Err(e @ RegistryError::InvalidCard(_)) => error_body(StatusCode::BAD_REQUEST, "InvalidCard", e),
        Err(e @ RegistryError::Conflict { .. }) => error_body(StatusCode::CONFLICT, "Conflict", e),
    }
}

async fn list_agents(State(s): State<Arc<Service>>) -> Json<Vec<AgentCard>> {
    Json(s.registry().list())
}

async fn ready(State(s): State<Arc<Service>>) -> Json<Value> {
    Json(json!({"ready": true, "agents": s.registry().len()}))
}

fn dispatch_status(e: &DispatchError) -> StatusCode {
    match e {
        DispatchError::NoAgentForCapability(_) => StatusCode::NOT_FOUND,
        DispatchError::DuplicateTask(_) => StatusCode::CONFLICT,
        DispatchError::BadPayload(_) => StatusCode::BAD_REQUEST,
        DispatchError::AgentTimeout { .. } => StatusCode::GATEWAY_TIMEOUT,
        DispatchError::Agent { .. } | DispatchError::Transport { .. } => StatusCode::BAD_GATEWAY,
    }
}

async fn invoke(State(s): State<Arc<Service>>, Json(req): Json<InvokeRequest>) -> Response {
    let task_id = req.task_id.clone();
    let svc = s.clone();
    let joined = tokio::task::spawn_blocking(move || svc.engine().cpa().dispatch(&req)).await;
    match joined {
        Ok(Ok(r)) => Json(json!({
            "task_id": r.task_id,
            "status": "ok",
            "agent": r.agent,
            "duration_ms": r.duration_ms,
            "result": r.result,
        }))
        .into_response(),
        Ok(Err(e)) => (
            dispatch_status(&e),
            Json(json!({
                "task_id": task_id,
                "status": "error",
                "result": null,
                "error": {"kind": e.kind(), "message": e.to_string()},
            })),
        )
            .into_response(),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "Panic", e),
    }
}

#[derive(Deserialize)]
struct EventsQuery {
    task_id: String,
    /// Wait for a task that has not started yet instead of failing.
    #[serde(default)]
    wait: bool,
}

async fn events(State(s): State<Arc<Service>>, Query(q): Query<EventsQuery>) -> Response {
    // a submitted workflow may not have published yet but always will
    let wait = q.wait || s.workflow(&q.task_id).is_some();
    if !wait && !s.events().contains(&q.task_id) {
        return error_body(StatusCode::NOT_FOUND, "UnknownTask", format!("unknown task {:?}", q.task_id));
    }
    let stream = s.events().stream(q.task_id, wait).map(|item| {
        let ev = match item {
            Ok(e) => Event::default()
                .event(format!("{:?}", e.kind).to_lowercase())
                .id(e.seq.to_string())
                .data(json!({"seq": e.seq, "kind": e.kind, "body": e.body}).to_string()),
            Err(e) => Event::default().event("error").data(json!({"message": e.to_string()}).to_string()),
        };
        Ok::<_, Infallible>(ev)
    });
    Sse::new(stream).keep_alive(KeepAlive::default()).into_response()
}

#[derive(Deserialize)]
struct WorkflowRequest {
    query: String,
    #[serde(default)]
    data_ref: Option<String>,
}

async fn submit_workflow(State(s): State<Arc<Service>>, Json(w): Json<WorkflowRequest>) -> Json<Value> {
    let id = s.submit(&w.query, w.data_ref.as_deref());
    let svc = s.clone();
    let wid = id.clone();
    // the record carries the outcome, so the join handle is not needed
    tokio::task::spawn_blocking(move || {
        let _ = svc.execute(&wid, &w.query, w.data_ref.as_deref());
    });
    Json(json!({"workflow_id": id}))
}

async fn get_workflow(State(s): State<Arc<Service>>, Path(id): Path<String>) -> Response {
    match s.workflow(&id) {
        Some(rec) => Json(rec).into_response(),
        None => error_body(StatusCode::NOT_FOUND, "UnknownWorkflow", format!("unknown workflow {id:?}")),
    }
}

fn follow_up_error(e: FollowUpError) -> Response {
    let (status, kind) = match &e {
        FollowUpError::UnknownWorkflow(_) => (StatusCode::NOT_FOUND, "UnknownWorkflow"),
        FollowUpError::NotFinished(_) => (StatusCode::CONFLICT, "NotFinished"),
        FollowUpError::NoGraph(_) => (StatusCode::CONFLICT, "NoGraph"),
        FollowUpError::UnknownEdge(..) => (StatusCode::BAD_REQUEST, "UnknownEdge"),
        FollowUpError::Stale(_) => (StatusCode::CONFLICT, "Stale"),
        FollowUpError::Engine(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Engine"),
    };
    error_body(status, kind, e)
}

async fn edit_graph(State(s): State<Arc<Service>>, Path(id): Path<String>, Json(edits): Json<GraphEdits>) -> Response {
    match tokio::task::spawn_blocking(move || s.edit_graph(&id, &edits)).await {
        Ok(Ok(out)) => Json(out).into_response(),
        Ok(Err(e)) => follow_up_error(e),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "Panic", e),
    }
}

async fn confirm_recommendation(
    State(s): State<Arc<Service>>,
    Path(id): Path<String>,
    Json(c): Json<Confirmation>,
) -> Response {
    match tokio::task::spawn_blocking(move || s.confirm(&id, &c)).await {
        Ok(Ok(steps)) => Json(json!({"steps": steps})).into_response(),
        Ok(Err(e)) => follow_up_error(e),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "Panic", e),
    }
}

fn local_agent(s: &Service, name: &str) -> Option<Arc<dyn Agent>> {
    crate::agents::agent_by_name(s.env(), name)
}

async fn local_run(State(s): State<Arc<Service>>, Path(name): Path<String>, Json(req): Json<InvokeRequest>) -> Response {
    match local_agent(&s, &name) {
        Some(agent) => run_agent(agent, req).await,
        None => error_body(StatusCode::NOT_FOUND, "UnknownAgent", format!("no agent {name:?}")),
    }
}

async fn local_card(State(s): State<Arc<Service>>, Path(name): Path<String>) -> Response {
    let endpoint = s.registry().get(&name).map(|c| c.endpoint).unwrap_or_default();
    match local_agent(&s, &name) {
        Some(agent) => Json(agent.card(&endpoint)).into_response(),
        None => error_body(StatusCode::NOT_FOUND, "UnknownAgent", format!("no agent {name:?}")),
    }
}

fn agent_status(e: &AgentError) -> StatusCode {
    match e {
        AgentError::BadRequest(_) => StatusCode::BAD_REQUEST,
        AgentError::Io(_) => StatusCode::UNPROCESSABLE_ENTITY,
        AgentError::GraphUnavailable(_) => StatusCode::NOT_FOUND,
        AgentError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        AgentError::Failed(_) => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

async fn run_agent(agent: Arc<dyn Agent>, req: InvokeRequest) -> Response {
    let joined = tokio::task::spawn_blocking(move || {
        let progress = Mutex::new(Vec::new());
        let out = agent.run(&req, &|p| progress.lock().expect("progress poisoned").push(p));
        (out, progress.into_inner().expect("progress poisoned"))
    })
    .await;
    match joined {
        Ok((Ok(result), progress)) => Json(RunResponse { result, progress }).into_response(),
        Ok((Err(e), _)) => (agent_status(&e), Json(e.to_wire())).into_response(),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "Failed", e),
    }
}

struct AgentState {
    agent: Arc<dyn Agent>,
    endpoint: String,
}

/// Standalone surface for one agent, advertised at `endpoint`.
pub fn agent_router(agent: Arc<dyn Agent>, endpoint: String) -> Router {
    let state = Arc::new(AgentState { agent, endpoint });
    Router::new()
        .route(
            "/run",
            post(|State(st): State<Arc<AgentState>>, Json(req): Json<InvokeRequest>| async move {
                run_agent(st.agent.clone(), req).await
            }),
        )
        .route("/card", get(|State(st): State<Arc<AgentState>>| async move { Json(st.agent.card(&st.endpoint)) }))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then gives open requests
/// [`SHUTDOWN_DEADLINE`] to finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let mut server = tokio::spawn(
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let _ = stop_rx.await;
            })
            .into_future(),
    );
    tokio::select! {
        r = &mut server => return r.unwrap_or_else(|e| Err(std::io::Error::other(e))),
        _ = shutdown => {}
    }
    let _ = stop_tx.send(());
    match tokio::time::timeout(SHUTDOWN_DEADLINE, &mut server).await {
        Ok(r) => r.unwrap_or_else(|e| Err(std::io::Error::other(e))),
        Err(_) => {
            server.abort();
            Ok(())
        }
    }
}

/// A server on its own runtime thread, for synchronous callers.
/// Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    /// Binds `addr` (port 0 picks a free one) and serves the router
    /// `make` builds from the bound base URL.
    pub fn start(addr: &str, make: impl FnOnce(String) -> Router) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let app = make(format!("http://{addr}"));
        let (stop, stop_rx) = oneshot::channel::<()>();
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().worker_threads(4).build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let Ok(listener) = tokio::net::TcpListener::from_std(std_listener) else { return };
                let _ = serve(listener, app, async move {
                    let _ = stop_rx.await;
                })
                .await;
            });
            rt.shutdown_timeout(Duration::from_millis(200));
        });
        Ok(Self { addr, stop: Some(stop), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Parses a `text/event-stream` body into its `data:` payloads.
pub fn sse_data(body: &str) -> Vec<Value> {
    body.lines()
        .filter_map(|l| l.strip_prefix("data:"))
        .filter_map(|d| serde_json::from_str(d.trim()).ok())
        .collect()
}

/// Blocking SSE read of a finished or running task, up to its terminal event.
pub fn fetch_events(base_url: &str, task_id: &str) -> Result<Vec<Value>, ureq::Error> {
    let url = format!("{base_url}/events");
    let body = ureq::get(&url).query("task_id", task_id).call()?.body_mut().read_to_string()?;
    Ok(sse_data(&body))
}

