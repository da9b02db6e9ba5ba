//! Blocking HTTP clients for the three services.
//!
//! Must not be used from inside an async runtime.

use std::collections::BTreeSet;
use std::time::Duration;

use imads_core::client::{ClientError, DiscoveryApi, DomainRegistryApi, GlobalRegistryApi};
use imads_core::dataset::SignedDataset;
use imads_core::discovery::{AccountId, DiscoveryResponse, ProfileDraft, Visibility};
use imads_core::domain_registry::{HypertyInstance, InstanceStatus, Lease, Notification};
use imads_core::global_registry::PutAck;
use imads_core::guid::Guid;
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::{StatusCode, Url};
use serde::de::DeserializeOwned;

use crate::discovery::{AccountCreated, AccountRequest, ProfileCreated, VisibilityRequest, LOOKUP_PATH};
use crate::domain::{RegisterBody, StatusBody};
use crate::global::JWT_CONTENT_TYPE;
use crate::ErrorBody;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

fn http() -> Client {
    Client::builder().timeout(REQUEST_TIMEOUT).connect_timeout(CONNECT_TIMEOUT).build().expect("http client")
}

/// `base` + `path` + `opaque` + `suffix`. Each `opaque` item becomes one
/// percent-encoded segment even when it contains `/`.
fn endpoint_with(base: &str, path: &str, opaque: &[&str], suffix: &[&str]) -> Result<Url, ClientError> {
    let mut url = Url::parse(base).map_err(|e| ClientError::InvalidInput(format!("{base}: {e}")))?;
    url.path_segments_mut()
        .map_err(|_| ClientError::InvalidInput(format!("{base}: not a base URL")))?
        .pop_if_empty()
        .extend(path.split('/').filter(|p| !p.is_empty()))
        .extend(opaque)
        .extend(suffix);
    Ok(url)
}

fn endpoint(base: &str, path: &str) -> Result<Url, ClientError> {
    endpoint_with(base, path, &[], &[])
}

fn send(req: RequestBuilder, what: &str) -> Result<Response, ClientError> {
    let resp = req.send().map_err(|e| ClientError::Unreachable(format!("{what}: {e}")))?;
    if resp.status().is_success() {
        return Ok(resp);
    }
    let status = resp.status().as_u16();
    let text = resp.text().unwrap_or_default();
    let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
    Err(ClientError::Rejected { status, message })
}

fn json<T: DeserializeOwned>(resp: Response, what: &str) -> Result<T, ClientError> {
    resp.json().map_err(|e| ClientError::Unreachable(format!("{what}: bad response: {e}")))
}

pub struct HttpDiscovery {
    base: String,
    token: Option<String>,
    http: Client,
}

impl HttpDiscovery {
    pub fn new(base: impl Into<String>) -> Self {
        HttpDiscovery { base: base.into(), token: None, http: http() }
    }

    /// Sends `token` as a bearer token on every request.
    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    fn auth(&self, req: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    /// Search, optionally asking the service to attach live hyperties.
    pub fn lookup(&self, query: &str, hyperties: bool) -> Result<DiscoveryResponse, ClientError> {
        let mut url = endpoint(&self.base, LOOKUP_PATH)?;
        url.query_pairs_mut().append_pair("searchquery", query);
        if hyperties {
            url.query_pairs_mut().append_pair("hyperties", "true");
        }
        json(send(self.auth(self.http.get(url)), "discovery")?, "discovery")
    }

    /// Creates an account and returns its token.
    pub fn create_account(&self, account: &str) -> Result<String, ClientError> {
        let url = endpoint(&self.base, "discovery/rest/accounts")?;
        let created: AccountCreated = json(send(self.http.post(url).json(&AccountRequest { account: account.into() }), "discovery")?, "discovery")?;
        Ok(created.token)
    }

    pub fn publish_profile(&self, draft: &ProfileDraft) -> Result<String, ClientError> {
        let url = endpoint(&self.base, "discovery/rest/profiles")?;
        let created: ProfileCreated = json(send(self.auth(self.http.post(url).json(draft)), "discovery")?, "discovery")?;
        Ok(created.profile_id)
    }

    pub fn unpublish_profile(&self, id: &str) -> Result<(), ClientError> {
        let url = endpoint_with(&self.base, "discovery/rest/profiles", &[id], &[])?;
        send(self.auth(self.http.delete(url)), "discovery").map(drop)
    }

    pub fn set_visibility(&self, id: &str, visibility: Visibility, favorites: Option<BTreeSet<AccountId>>) -> Result<(), ClientError> {
        let url = endpoint_with(&self.base, "discovery/rest/profiles", &[id], &["visibility"])?;
        send(self.auth(self.http.put(url).json(&VisibilityRequest { visibility, favorites })), "discovery").map(drop)
    }
}

impl DiscoveryApi for HttpDiscovery {
    fn search(&self, query: &str) -> Result<DiscoveryResponse, ClientError> {
        self.lookup(query, false).map_err(|e| match e {
            ClientError::Rejected { status: 400, message } => ClientError::InvalidInput(message),
            other => other,
        })
    }
}

pub struct HttpGlobalRegistry {
    base: String,
    http: Client,
}

impl HttpGlobalRegistry {
    pub fn new(base: impl Into<String>) -> Self {
        HttpGlobalRegistry { base: base.into(), http: http() }
    }

    /// Publishes and returns the registry's acknowledgement.
    pub fn put(&self, signed: &SignedDataset) -> Result<PutAck, ClientError> {
        let guid = signed.peek().map_err(|e| ClientError::InvalidInput(e.to_string()))?.guid;
        let url = endpoint_with(&self.base, "guid", &[guid.as_str()], &[])?;
        let req = self.http.put(url).header(reqwest::header::CONTENT_TYPE, JWT_CONTENT_TYPE).body(signed.as_str().to_string());
        json(send(req, "global registry")?, "global registry")
    }
}

impl GlobalRegistryApi for HttpGlobalRegistry {
    fn put_guid(&self, signed: &SignedDataset) -> Result<(), ClientError> {
        self.put(signed).map(drop)
    }

    fn get_guid(&self, guid: &Guid) -> Result<SignedDataset, ClientError> {
        let url = endpoint_with(&self.base, "guid", &[guid.as_str()], &[])?;
        let resp = match send(self.http.get(url).header(reqwest::header::ACCEPT, JWT_CONTENT_TYPE), "global registry") {
            Err(ClientError::Rejected { status: 404, .. }) => return Err(ClientError::NotFound),
            Err(ClientError::Rejected { status: 502, message }) => return Err(ClientError::Integrity(message)),
            other => other?,
        };
        let text = resp.text().map_err(|e| ClientError::Unreachable(format!("global registry: {e}")))?;
        SignedDataset::parse(text.trim()).map_err(|e| ClientError::Integrity(e.to_string()))
    }
}

/// One domain registry, for runtimes registering their endpoints.
pub struct HttpDomainRegistry {
    base: String,
    http: Client,
}

impl HttpDomainRegistry {
    pub fn new(base: impl Into<String>) -> Self {
        HttpDomainRegistry { base: base.into(), http: http() }
    }

    fn url(&self, user_id: &str, instance_url: Option<&str>, suffix: &[&str]) -> Result<Url, ClientError> {
        let mut opaque = vec![user_id];
        opaque.extend(instance_url);
        endpoint_with(&self.base, "hyperty/user", &opaque, suffix)
    }

    /// Registers an endpoint; `ttl_secs` of `None` takes the registry default.
    pub fn register(&self, user_id: &str, instance_url: &str, capabilities: &[&str], provider: &str, ttl_secs: Option<u64>) -> Result<Lease, ClientError> {
        let body = RegisterBody { capabilities: capabilities.iter().map(|c| c.to_string()).collect(), provider: provider.into(), ttl: ttl_secs };
        json(send(self.http.put(self.url(user_id, Some(instance_url), &[])?).json(&body), &self.base)?, &self.base)
    }

    pub fn refresh(&self, user_id: &str, instance_url: &str) -> Result<Lease, ClientError> {
        json(send(self.http.post(self.url(user_id, Some(instance_url), &["refresh"])?), &self.base)?, &self.base)
    }

    /// Instances of `user_id` having every capability in `capabilities`;
    /// disconnected ones only when `include_disconnected`.
    pub fn query(&self, user_id: &str, capabilities: &BTreeSet<String>, include_disconnected: bool) -> Result<Vec<HypertyInstance>, ClientError> {
        let mut url = self.url(user_id, None, &[])?;
        for cap in capabilities {
            url.query_pairs_mut().append_pair("cap", cap);
        }
        if include_disconnected {
            url.query_pairs_mut().append_pair("all", "true");
        }
        json(send(self.http.get(url), &self.base)?, &self.base)
    }

    pub fn status(&self, user_id: &str, instance_url: &str) -> Result<InstanceStatus, ClientError> {
        let body: StatusBody = json(send(self.http.get(self.url(user_id, Some(instance_url), &["status"])?), &self.base)?, &self.base)?;
        Ok(body.status)
    }

    /// Blocks until the instance comes back online (`Some`) or `timeout`
    /// passes (`None`).
    pub fn watch(&self, user_id: &str, instance_url: &str, timeout: Duration) -> Result<Option<Notification>, ClientError> {
        let mut url = self.url(user_id, Some(instance_url), &["watch"])?;
        url.query_pairs_mut().append_pair("timeout", &timeout.as_secs().max(1).to_string());
        let resp = send(self.http.get(url).timeout(timeout + Duration::from_secs(10)), &self.base)?;
        if resp.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        json(resp, &self.base).map(Some)
    }
}

/// Reaches whichever domain registry a dataset entry names.
pub struct HttpDomainRegistries {
    http: Client,
}

impl HttpDomainRegistries {
    pub fn new() -> Self {
        HttpDomainRegistries { http: http() }
    }
}

impl Default for HttpDomainRegistries {
    fn default() -> Self {
        Self::new()
    }
}

impl DomainRegistryApi for HttpDomainRegistries {
    fn query_user(&self, registry_url: &str, user_id: &str, capabilities: &BTreeSet<String>) -> Result<Vec<HypertyInstance>, ClientError> {
        HttpDomainRegistry { base: registry_url.to_string(), http: self.http.clone() }.query(user_id, capabilities, false)
    }
}
