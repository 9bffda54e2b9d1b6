use std::collections::BTreeMap;
use std::future::Future;
use std::net::{SocketAddr, TcpListener as StdListener};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;

use crate::oracle::{OracleError, QueryLedger, SimilarityOracle, TargetId};

use super::protocol::*;

#[derive(Clone, Debug, Default)]
pub struct ServerConfig {
    /// Scored requests admitted per target; `None` is unlimited.
    pub per_target_budget: Option<u64>,
    /// Artificial delay added to every scored answer.
    pub latency: Option<Duration>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server runtime failed: {0}")]
    Runtime(#[from] std::io::Error),
    #[error("oracle has no enrolled targets")]
    NoTargets,
}

struct ServerState {
    oracle: Arc<dyn SimilarityOracle>,
    ledgers: BTreeMap<TargetId, QueryLedger>,
    latency: Option<Duration>,
}

impl ServerState {
    fn status(&self) -> Vec<TargetStatus> {
        self.ledgers
            .iter()
            .map(|(id, l)| TargetStatus {
                target_id: id.to_string(),
                queries_used: l.used(),
                budget: l.budget(),
                budget_remaining: l.remaining(),
            })
            .collect()
    }
}

fn error_response(code: ErrorCode, status: StatusCode, message: String) -> Response {
    (
        status,
        Json(ErrorEnvelope {
            error_code: code,
            message,
        }),
    )
        .into_response()
}

fn oracle_error_response(e: OracleError) -> Response {
    let (code, status) = match &e {
        OracleError::BudgetExhausted { .. } => (ErrorCode::BudgetExhausted, StatusCode::TOO_MANY_REQUESTS),
        OracleError::UnknownTarget(_) => (ErrorCode::UnknownTarget, StatusCode::NOT_FOUND),
        OracleError::VersionMismatch { .. } => (ErrorCode::VersionMismatch, StatusCode::CONFLICT),
        OracleError::Connection(_) | OracleError::Protocol(_) => (ErrorCode::Malformed, StatusCode::BAD_GATEWAY),
        _ => (ErrorCode::Malformed, StatusCode::BAD_REQUEST),
    };
    error_response(code, status, e.to_string())
}

async fn similarity(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    let value: serde_json::Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return oracle_error_response(OracleError::Malformed(format!("invalid JSON: {e}"))),
    };
    match value.get("version").and_then(|v| v.as_u64()) {
        None => return oracle_error_response(OracleError::Malformed("missing protocol version".into())),
        Some(v) if v != PROTOCOL_VERSION as u64 => {
            return error_response(
                ErrorCode::VersionMismatch,
                StatusCode::CONFLICT,
                format!("server speaks protocol version {PROTOCOL_VERSION}, request has {v}"),
            )
        }
        Some(_) => {}
    }
    let req: SimilarityRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return oracle_error_response(OracleError::Malformed(e.to_string())),
    };
    let Ok(target) = TargetId::new(req.target_id.clone()) else {
        return oracle_error_response(OracleError::Malformed("empty target_id".into()));
    };
    let Some(ledger) = state.ledgers.get(&target) else {
        return oracle_error_response(OracleError::UnknownTarget(req.target_id));
    };
    let image = match req.decode_image() {
        Ok(i) => i,
        Err(e) => return oracle_error_response(e),
    };
    if let Err(e) = state.oracle.validate(&image, &target) {
        return oracle_error_response(e);
    }
    if let Err(e) = ledger.try_acquire() {
        return oracle_error_response(e);
    }
    let inner = state.clone();
    let t = target.clone();
    let scored = tokio::task::spawn_blocking(move || inner.oracle.query(&image, &t))
        .await
        .unwrap_or_else(|e| Err(OracleError::Protocol(format!("scoring task failed: {e}"))));
    let similarity = match scored {
        Ok(s) => s,
        Err(e) => {
            ledger.refund();
            return oracle_error_response(e);
        }
    };
    if let Some(d) = state.latency {
        tokio::time::sleep(d).await;
    }
    Json(SimilarityResponse {
        version: PROTOCOL_VERSION,
        similarity,
        queries_used: ledger.used(),
        budget_remaining: ledger.remaining(),
    })
    .into_response()
}

async fn targets(State(state): State<Arc<ServerState>>) -> Json<TargetsResponse> {
    Json(TargetsResponse {
        version: PROTOCOL_VERSION,
        targets: state.status(),
    })
}

async fn health() -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        version: PROTOCOL_VERSION,
    })
}

fn router(oracle: Arc<dyn SimilarityOracle>, config: &ServerConfig) -> Result<(Router, Arc<ServerState>), ServeError> {
    let ids = oracle.targets();
    if ids.is_empty() {
        return Err(ServeError::NoTargets);
    }
    let state = Arc::new(ServerState {
        oracle,
        ledgers: ids
            .into_iter()
            .map(|id| (id, QueryLedger::new(config.per_target_budget)))
            .collect(),
        latency: config.latency,
    });
    let app = Router::new()
        .route(SIMILARITY_PATH, post(similarity))
        .route(TARGETS_PATH, get(targets))
        .route(HEALTH_PATH, get(health))
        .with_state(state.clone());
    Ok((app, state))
}

fn bind(addr: &str) -> Result<StdListener, ServeError> {
    let wrap = |source| ServeError::Bind {
        addr: addr.to_string(),
        source,
    };
    let listener = StdListener::bind(addr).map_err(wrap)?;
    listener.set_nonblocking(true).map_err(wrap)?;
    Ok(listener)
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()
}

/// A server running on its own thread and runtime.
pub struct ServerHandle {
    addr: SocketAddr,
    state: Arc<ServerState>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Current ledger state per target.
    pub fn targets(&self) -> Vec<TargetStatus> {
        self.state.status()
    }

    /// Stops accepting connections and drops every open one, including
    /// requests in flight.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
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
        self.stop_now();
    }
}

/// Start serving `oracle` on `addr` (use port 0 for an ephemeral port).
pub fn serve(oracle: Arc<dyn SimilarityOracle>, addr: &str, config: ServerConfig) -> Result<ServerHandle, ServeError> {
    let (app, state) = router(oracle, &config)?;
    let listener = bind(addr)?;
    let local = listener.local_addr()?;
    let rt = runtime()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("netbox-server".into())
        .spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener from a live std socket");
                tokio::select! {
                    r = axum::serve(listener, app) => if let Err(e) = r { log::error!("server stopped: {e}") },
                    _ = rx => {}
                }
            });
            // Dropping the runtime cancels connection tasks still running.
            rt.shutdown_background();
        })?;
    Ok(ServerHandle {
        addr: local,
        state,
        stop: Some(tx),
        thread: Some(thread),
    })
}

/// Serve on the current thread until `shutdown` resolves. `on_bound` is
/// called with the bound address before the first request is accepted.
pub fn serve_until<F>(
    oracle: Arc<dyn SimilarityOracle>,
    addr: &str,
    config: ServerConfig,
    on_bound: impl FnOnce(SocketAddr),
    shutdown: F,
) -> Result<(), ServeError>
where
    F: Future<Output = ()> + Send + 'static,
{
    let (app, _) = router(oracle, &config)?;
    let listener = bind(addr)?;
    on_bound(listener.local_addr()?);
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        axum::serve(listener, app).with_graceful_shutdown(shutdown).await
    })?;
    Ok(())
}
