//! Global registry over HTTP.
//!
//! ```text
//! GET /guid/{guid}   -> 200 application/jwt
//! PUT /guid/{guid}   <- application/jwt body, -> 200 {guid, version, holders}
//! ```
//!
//! Errors map to 400/401/403/404/409 for the request itself and 502/503 for
//! DHT trouble.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use imads_core::global_registry::{DhtHandle, GlobalRegistry, GlobalRegistryError};

use crate::server::RunningServer;

pub const JWT_CONTENT_TYPE: &str = "application/jwt";

pub fn router<H: DhtHandle + 'static>(registry: Arc<GlobalRegistry<H>>) -> Router {
    Router::new().route("/guid/{guid}", get(get_guid::<H>).put(put_guid::<H>)).with_state(registry)
}

pub fn serve<H: DhtHandle + 'static>(registry: Arc<GlobalRegistry<H>>, addr: SocketAddr) -> std::io::Result<RunningServer> {
    RunningServer::start(router(registry), addr, None)
}

fn fail(e: GlobalRegistryError) -> Response {
    crate::error(e.status(), e)
}

// DHT calls block until the lookup completes, so they leave the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, GlobalRegistryError> + Send + 'static) -> Result<T, GlobalRegistryError> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| Err(GlobalRegistryError::Unavailable(e.to_string())))
}

async fn get_guid<H: DhtHandle + 'static>(State(reg): State<Arc<GlobalRegistry<H>>>, Path(guid): Path<String>) -> Response {
    match blocking(move || reg.get_guid(&guid)).await {
        Ok(signed) => ([(header::CONTENT_TYPE, JWT_CONTENT_TYPE)], signed.as_str().to_string()).into_response(),
        Err(e) => fail(e),
    }
}

async fn put_guid<H: DhtHandle + 'static>(State(reg): State<Arc<GlobalRegistry<H>>>, Path(guid): Path<String>, body: String) -> Response {
    match blocking(move || reg.put_guid(Some(&guid), body.trim())).await {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => fail(e),
    }
}
