//! Discovery over HTTP.
//!
//! ```text
//! GET    /discovery/rest/discover/lookup?searchquery=Alice+Berlin[&hyperties=true]
//! POST   /discovery/rest/accounts                    {account} -> 201 {account, token}
//! POST   /discovery/rest/profiles                    ProfileDraft -> 201 {profileID}
//! GET    /discovery/rest/profiles/{id}
//! DELETE /discovery/rest/profiles/{id}
//! PUT    /discovery/rest/profiles/{id}/visibility    {visibility, favorites?}
//! ```
//!
//! Profile management needs `Authorization: Bearer <token>`. Lookups accept
//! one too and are otherwise anonymous. A lookup that ran answers HTTP 200;
//! `responseCode` in the body is 201 with results and 404 without.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use imads_core::discovery::{AccountId, DiscoveryError, DiscoveryService, ProfileDraft, QueryContext, Requester, Visibility};
use serde::{Deserialize, Serialize};

use crate::server::RunningServer;

pub const LOOKUP_PATH: &str = "/discovery/rest/discover/lookup";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountRequest {
    pub account: AccountId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountCreated {
    pub account: AccountId,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileCreated {
    #[serde(rename = "profileID")]
    pub profile_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityRequest {
    pub visibility: Visibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub favorites: Option<BTreeSet<AccountId>>,
}

fn status_of(e: &DiscoveryError) -> u16 {
    match e {
        DiscoveryError::EmptyQuery | DiscoveryError::InvalidGuid(_) | DiscoveryError::InvalidHashtag(_) | DiscoveryError::EmptyProfile => 400,
        DiscoveryError::UnknownAccount => 401,
        DiscoveryError::Forbidden => 403,
        DiscoveryError::NotFound => 404,
        DiscoveryError::AccountExists => 409,
    }
}

fn fail(e: DiscoveryError) -> Response {
    crate::error(status_of(&e), e)
}

pub fn router(service: Arc<DiscoveryService>) -> Router {
    Router::new()
        .route(LOOKUP_PATH, get(lookup))
        .route("/discovery/rest/accounts", post(create_account))
        .route("/discovery/rest/profiles", post(publish))
        .route("/discovery/rest/profiles/{id}", get(profile).delete(unpublish))
        .route("/discovery/rest/profiles/{id}/visibility", put(visibility))
        .with_state(service)
}

pub fn serve(service: Arc<DiscoveryService>, addr: SocketAddr) -> std::io::Result<RunningServer> {
    RunningServer::start(router(service), addr, None)
}

type Shared = State<Arc<DiscoveryService>>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers.get(header::AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ").map(str::trim)
}

/// The account behind the request's token; a bad token is an error even
/// where anonymous access is allowed.
fn account(svc: &DiscoveryService, headers: &HeaderMap) -> Result<Option<AccountId>, Response> {
    match bearer(headers) {
        None => Ok(None),
        Some(token) => svc.authenticate(token).map(Some).ok_or_else(|| crate::error(401, "invalid token")),
    }
}

fn required_account(svc: &DiscoveryService, headers: &HeaderMap) -> Result<AccountId, Response> {
    account(svc, headers)?.ok_or_else(|| crate::error(401, "bearer token required"))
}

async fn lookup(State(svc): Shared, headers: HeaderMap, RawQuery(raw): RawQuery) -> Response {
    let requester = match account(&svc, &headers) {
        Ok(Some(a)) => Requester::Account(a),
        Ok(None) => Requester::Anonymous,
        Err(r) => return r,
    };
    let mut query = None;
    let mut resolve_live = false;
    for (k, v) in form_urlencoded::parse(raw.unwrap_or_default().as_bytes()) {
        match &*k {
            "searchquery" => query = Some(v.into_owned()),
            "hyperties" => resolve_live = v == "true" || v == "1",
            _ => {}
        }
    }
    let Some(raw_query) = query else {
        return crate::error(400, "missing searchquery parameter");
    };
    match svc.search(&QueryContext { requester, raw_query, resolve_live }) {
        Ok(response) => Json(response).into_response(),
        Err(e) => fail(e),
    }
}

async fn create_account(State(svc): Shared, Json(req): Json<AccountRequest>) -> Response {
    if req.account.trim().is_empty() {
        return crate::error(400, "empty account name");
    }
    match svc.register_account(req.account.clone()) {
        Ok(token) => (StatusCode::CREATED, Json(AccountCreated { account: req.account, token })).into_response(),
        Err(e) => fail(e),
    }
}

async fn publish(State(svc): Shared, headers: HeaderMap, Json(draft): Json<ProfileDraft>) -> Response {
    let owner = match required_account(&svc, &headers) {
        Ok(a) => a,
        Err(r) => return r,
    };
    match svc.publish_profile(&owner, draft) {
        Ok(profile_id) => (StatusCode::CREATED, Json(ProfileCreated { profile_id })).into_response(),
        Err(e) => fail(e),
    }
}

/// Full profile, for its owner only.
async fn profile(State(svc): Shared, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let owner = match required_account(&svc, &headers) {
        Ok(a) => a,
        Err(r) => return r,
    };
    match svc.profile(&id) {
        Some(p) if p.owner_account == owner => Json(p).into_response(),
        Some(_) => fail(DiscoveryError::Forbidden),
        None => fail(DiscoveryError::NotFound),
    }
}

async fn unpublish(State(svc): Shared, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let owner = match required_account(&svc, &headers) {
        Ok(a) => a,
        Err(r) => return r,
    };
    match svc.unpublish_profile(&owner, &id) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => fail(e),
    }
}

async fn visibility(State(svc): Shared, headers: HeaderMap, Path(id): Path<String>, Json(req): Json<VisibilityRequest>) -> Response {
    let owner = match required_account(&svc, &headers) {
        Ok(a) => a,
        Err(r) => return r,
    };
    match svc.set_visibility(&owner, &id, req.visibility, req.favorites) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => fail(e),
    }
}
