//! HTTP front ends for the domain registry, global registry and discovery
//! services, and blocking clients that plug into [`imads_core::client::Client`].
//!
//! Servers run on a private tokio runtime thread so synchronous callers
//! (the CLI, tests) can start and stop them freely.

pub mod client;
pub mod discovery;
pub mod domain;
pub mod global;
mod server;

pub use client::{HttpDiscovery, HttpDomainRegistries, HttpGlobalRegistry};
pub use server::RunningServer;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Error body returned by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub(crate) fn error(status: u16, message: impl ToString) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(ErrorBody { error: message.to_string() })).into_response()
}
