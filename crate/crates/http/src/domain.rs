//! Domain registry over HTTP. User id and instance URL are single,
//! percent-encoded path segments:
//!
//! ```text
//! PUT  /hyperty/user/{user_id}/{instance_url}          {capabilities, provider, ttl?}
//! POST /hyperty/user/{user_id}/{instance_url}/refresh
//! GET  /hyperty/user/{user_id}?cap=video&cap=chat[&all=true]
//! GET  /hyperty/user/{user_id}/{instance_url}
//! GET  /hyperty/user/{user_id}/{instance_url}/status
//! GET  /hyperty/user/{user_id}/{instance_url}/watch?timeout=30
//! ```
//!
//! `ttl` and `timeout` are in seconds.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, RawQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use imads_core::domain_registry::{DomainRegistry, InstanceStatus, InstanceStore, Registration, RegistryError};
use serde::{Deserialize, Serialize};

use crate::server::RunningServer;

/// Long-polls give up after this many seconds unless the caller asks for less.
pub const MAX_WATCH_SECS: u64 = 300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterBody {
    pub capabilities: Vec<String>,
    pub provider: String,
    /// Seconds; the registry default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusBody {
    pub url: String,
    pub status: InstanceStatus,
}

fn status_of(e: &RegistryError) -> u16 {
    match e {
        RegistryError::TtlOutOfRange { .. } | RegistryError::MalformedUserId(_) | RegistryError::InvalidUrl => 400,
        RegistryError::NotFound => 404,
        RegistryError::UrlTaken => 409,
    }
}

fn fail(e: RegistryError) -> Response {
    crate::error(status_of(&e), e)
}

pub fn router<S: InstanceStore + Send + Sync + 'static>(registry: Arc<DomainRegistry<S>>) -> Router {
    Router::new()
        .route("/hyperty/user/{user_id}", get(query::<S>))
        .route("/hyperty/user/{user_id}/{instance_url}", get(instance::<S>).put(register::<S>))
        .route("/hyperty/user/{user_id}/{instance_url}/refresh", post(refresh::<S>))
        .route("/hyperty/user/{user_id}/{instance_url}/status", get(status::<S>))
        .route("/hyperty/user/{user_id}/{instance_url}/watch", get(watch::<S>))
        .with_state(registry)
}

/// Periodic expiry sweep at the registry's configured period.
pub async fn sweeper<S: InstanceStore + Send + Sync + 'static>(registry: Arc<DomainRegistry<S>>) {
    let period = Duration::from_millis(registry.config().sweep_period_ms.max(1));
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        ticker.tick().await;
        registry.expire_sweep(registry.now_ms());
    }
}

/// Serves `registry` on `addr` with its expiry sweep running.
pub fn serve<S: InstanceStore + Send + Sync + 'static>(registry: Arc<DomainRegistry<S>>, addr: SocketAddr) -> std::io::Result<RunningServer> {
    RunningServer::start(router(registry.clone()), addr, Some(Box::pin(sweeper(registry))))
}

type Shared<S> = State<Arc<DomainRegistry<S>>>;

async fn register<S: InstanceStore>(State(reg): Shared<S>, Path((user, url)): Path<(String, String)>, Json(body): Json<RegisterBody>) -> Response {
    let ttl_ms = body.ttl.map(|s| s.saturating_mul(1000));
    match reg.register_instance(&user, Registration::new(url, body.capabilities, body.provider), ttl_ms) {
        Ok(lease) => Json(lease).into_response(),
        Err(e) => fail(e),
    }
}

async fn refresh<S: InstanceStore>(State(reg): Shared<S>, Path((user, url)): Path<(String, String)>) -> Response {
    match reg.refresh_instance(&user, &url) {
        Ok(lease) => Json(lease).into_response(),
        Err(e) => fail(e),
    }
}

fn query_params(raw: Option<String>) -> (BTreeSet<String>, bool) {
    let mut caps = BTreeSet::new();
    let mut all = false;
    for (k, v) in form_urlencoded::parse(raw.unwrap_or_default().as_bytes()) {
        match &*k {
            "cap" => caps.extend(v.split(',').map(|c| c.trim().to_ascii_lowercase()).filter(|c| !c.is_empty())),
            "all" => all = v == "true" || v == "1",
            _ => {}
        }
    }
    (caps, all)
}

async fn query<S: InstanceStore>(State(reg): Shared<S>, Path(user): Path<String>, RawQuery(raw): RawQuery) -> Response {
    if let Err(e) = imads_core::user_id::validate(&user) {
        return crate::error(400, e);
    }
    let (caps, all) = query_params(raw);
    Json(reg.query_user(&user, &caps, all)).into_response()
}

async fn instance<S: InstanceStore>(State(reg): Shared<S>, Path((user, url)): Path<(String, String)>) -> Response {
    match reg.instance(&user, &url) {
        Some(i) => Json(i).into_response(),
        None => fail(RegistryError::NotFound),
    }
}

async fn status<S: InstanceStore>(State(reg): Shared<S>, Path((user, url)): Path<(String, String)>) -> Response {
    let status = reg.instance_status(&user, &url);
    Json(StatusBody { url, status }).into_response()
}

/// 200 with the notification, 204 on timeout, 410 when the instance is
/// deleted or rotated away while waiting.
async fn watch<S: InstanceStore>(State(reg): Shared<S>, Path((user, url)): Path<(String, String)>, RawQuery(raw): RawQuery) -> Response {
    let secs = form_urlencoded::parse(raw.unwrap_or_default().as_bytes())
        .find(|(k, _)| k == "timeout")
        .and_then(|(_, v)| v.parse::<u64>().ok())
        .unwrap_or(MAX_WATCH_SECS)
        .min(MAX_WATCH_SECS);
    let rx = match reg.watch_instance(&user, &url) {
        Ok(w) => w.into_receiver(),
        Err(e) => return fail(e),
    };
    match tokio::time::timeout(Duration::from_secs(secs), rx).await {
        Ok(Ok(notification)) => Json(notification).into_response(),
        Ok(Err(_)) => crate::error(410, "instance removed while waiting"),
        Err(_) => StatusCode::NO_CONTENT.into_response(),
    }
}
