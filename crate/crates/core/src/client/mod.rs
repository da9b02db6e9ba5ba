//! The resolution pipeline: search text to GUID, GUID to signed dataset,
//! dataset entries to live endpoints in each domain registry.
//!
//! Services are reached through small traits so the same pipeline runs
//! against in-process services in tests and HTTP services from the CLI.

mod identity_file;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use identity_file::{IdentityFile, IdentityFileError};

use crate::dataset::{sign_dataset, verify_dataset, GlobalDataset, SignedDataset, UserIdEntry};
use crate::discovery::{DiscoveryError, DiscoveryResponse, DiscoveryService, QueryContext};
use crate::domain_registry::{DomainRegistry, HypertyInstance, InstanceStore};
use crate::global_registry::{DhtHandle, GlobalRegistry, GlobalRegistryError};
use crate::guid::{generate_identity, Guid, GuidIdentity, GuidParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("search returned no results")]
    NoResults,
    #[error("search result {pick} does not exist ({available} results)")]
    NoSuchResult { pick: usize, available: usize },
    #[error("search result has no GUID")]
    NoGuid,
    #[error("GUID not found")]
    NotFound,
    #[error("dataset failed verification: {0}")]
    Integrity(String),
    /// A service refused the request; status and message as it sent them.
    #[error("rejected ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("service unreachable: {0}")]
    Unreachable(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub trait DiscoveryApi: Send + Sync {
    fn search(&self, query: &str) -> Result<DiscoveryResponse, ClientError>;
}

pub trait GlobalRegistryApi: Send + Sync {
    fn put_guid(&self, signed: &SignedDataset) -> Result<(), ClientError>;
    fn get_guid(&self, guid: &Guid) -> Result<SignedDataset, ClientError>;
}

/// Reaches the domain registry at a URL listed in a dataset.
pub trait DomainRegistryApi: Send + Sync {
    fn query_user(&self, registry_url: &str, user_id: &str, capabilities: &BTreeSet<String>) -> Result<Vec<HypertyInstance>, ClientError>;
}

impl DiscoveryApi for DiscoveryService {
    fn search(&self, query: &str) -> Result<DiscoveryResponse, ClientError> {
        DiscoveryService::search(self, &QueryContext::anonymous(query)).map_err(|e| match e {
            DiscoveryError::EmptyQuery => ClientError::InvalidInput(e.to_string()),
            other => ClientError::Rejected { status: 400, message: other.to_string() },
        })
    }
}

impl From<GlobalRegistryError> for ClientError {
    fn from(e: GlobalRegistryError) -> Self {
        match e {
            GlobalRegistryError::NotFound => ClientError::NotFound,
            GlobalRegistryError::Unavailable(m) => ClientError::Unreachable(m),
            other => ClientError::Rejected { status: other.status(), message: other.to_string() },
        }
    }
}

impl<H: DhtHandle> GlobalRegistryApi for GlobalRegistry<H> {
    fn put_guid(&self, signed: &SignedDataset) -> Result<(), ClientError> {
        GlobalRegistry::put_guid(self, None, signed.as_str()).map(|_| ()).map_err(Into::into)
    }

    fn get_guid(&self, guid: &Guid) -> Result<SignedDataset, ClientError> {
        GlobalRegistry::get_guid(self, guid.as_str()).map_err(Into::into)
    }
}

/// In-process registries by URL. Unlisted URLs are unreachable.
#[derive(Default, Clone)]
pub struct LocalDomainRegistries<S: InstanceStore = crate::domain_registry::MemoryStore> {
    registries: BTreeMap<String, Arc<DomainRegistry<S>>>,
}

impl<S: InstanceStore> LocalDomainRegistries<S> {
    pub fn new() -> Self {
        LocalDomainRegistries { registries: BTreeMap::new() }
    }

    pub fn insert(&mut self, url: impl Into<String>, registry: Arc<DomainRegistry<S>>) {
        self.registries.insert(url.into(), registry);
    }

    pub fn remove(&mut self, url: &str) -> Option<Arc<DomainRegistry<S>>> {
        self.registries.remove(url)
    }
}

impl<S: InstanceStore + Sync> DomainRegistryApi for LocalDomainRegistries<S> {
    fn query_user(&self, registry_url: &str, user_id: &str, capabilities: &BTreeSet<String>) -> Result<Vec<HypertyInstance>, ClientError> {
        let registry = self.registries.get(registry_url).ok_or_else(|| ClientError::Unreachable(registry_url.to_string()))?;
        Ok(registry.query_user(user_id, capabilities, false))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactEntry {
    #[serde(rename = "domainRegistry")]
    pub domain_registry_url: String,
    #[serde(rename = "userID")]
    pub user_id: String,
    pub instances: Vec<HypertyInstance>,
    /// Set when this entry's registry could not be queried.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything needed to contact one person right now.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactSheet {
    #[serde(rename = "GUID")]
    pub guid: Guid,
    pub entries: Vec<ContactEntry>,
    /// Milliseconds since the Unix epoch.
    #[serde(rename = "resolvedAt")]
    pub resolved_at: u64,
}

impl ContactSheet {
    pub fn instances(&self) -> impl Iterator<Item = &HypertyInstance> {
        self.entries.iter().flat_map(|e| &e.instances)
    }
}

pub struct Client {
    pub discovery: Arc<dyn DiscoveryApi>,
    pub global: Arc<dyn GlobalRegistryApi>,
    pub domains: Arc<dyn DomainRegistryApi>,
    pub params: GuidParams,
}

/// How a free-text query picks its GUID.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ResolveOptions {
    /// Index into the search results.
    pub pick: usize,
}

impl Client {
    /// Turns a search query into a GUID, taking result `pick`.
    pub fn search_guid(&self, query: &str, pick: usize) -> Result<Guid, ClientError> {
        let response = self.discovery.search(query)?;
        if response.results.is_empty() {
            return Err(ClientError::NoResults);
        }
        let result = response.results.get(pick).ok_or(ClientError::NoSuchResult { pick, available: response.results.len() })?;
        result.guid().ok_or(ClientError::NoGuid)
    }

    /// Fetches and verifies the dataset for `guid`.
    pub fn dataset(&self, guid: &Guid) -> Result<GlobalDataset, ClientError> {
        let signed = self.global.get_guid(guid)?;
        let dataset = verify_dataset(&signed, &self.params).map_err(|e| ClientError::Integrity(e.to_string()))?;
        if dataset.guid != *guid {
            return Err(ClientError::Integrity(format!("asked for {guid}, got a dataset for {}", dataset.guid)));
        }
        Ok(dataset)
    }

    /// Resolves a GUID, or free text via search, to live endpoints. Each
    /// domain registry is queried on its own thread; a failing registry
    /// only marks its own entry.
    pub fn resolve(&self, input: &str, capabilities: &BTreeSet<String>, options: ResolveOptions, now_ms: u64) -> Result<ContactSheet, ClientError> {
        let input = input.trim();
        if input.is_empty() {
            return Err(ClientError::InvalidInput("empty query".into()));
        }
        let guid = match Guid::parse(input) {
            Ok(guid) => guid,
            Err(_) => self.search_guid(input, options.pick)?,
        };
        let dataset = self.dataset(&guid)?;
        let domains = &self.domains;
        let entries = std::thread::scope(|scope| {
            let handles: Vec<_> = dataset
                .user_ids
                .iter()
                .map(|entry| scope.spawn(move || (entry, domains.query_user(&entry.domain_registry_url, &entry.user_id, capabilities))))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    let (entry, result) = h.join().expect("registry query thread panicked");
                    let (instances, error) = match result {
                        Ok(instances) => (instances, None),
                        Err(e) => (Vec::new(), Some(e.to_string())),
                    };
                    ContactEntry { domain_registry_url: entry.domain_registry_url.clone(), user_id: entry.user_id.clone(), instances, error }
                })
                .collect()
        });
        Ok(ContactSheet { guid, entries, resolved_at: now_ms })
    }

    /// Generates an identity and publishes version 1 of its dataset.
    pub fn create_and_publish_identity<R: RngCore + CryptoRng>(
        &self,
        user_ids: Vec<UserIdEntry>,
        rng: &mut R,
        issued_at: u64,
    ) -> Result<(GuidIdentity, SignedDataset), ClientError> {
        if user_ids.is_empty() {
            return Err(ClientError::InvalidInput("at least one user id entry is required".into()));
        }
        let identity = generate_identity(rng, &self.params).map_err(|e| ClientError::InvalidInput(e.to_string()))?;
        let signed = self.publish(&identity, user_ids, 1, issued_at)?;
        Ok((identity, signed))
    }

    /// Signs and publishes `version` of the dataset for `identity`.
    pub fn publish(&self, identity: &GuidIdentity, user_ids: Vec<UserIdEntry>, version: u64, issued_at: u64) -> Result<SignedDataset, ClientError> {
        let dataset = GlobalDataset::new(identity, user_ids, version, issued_at).map_err(|e| ClientError::InvalidInput(e.to_string()))?;
        let signed = sign_dataset(&dataset, identity.signing_key(), &self.params).map_err(|e| ClientError::InvalidInput(e.to_string()))?;
        self.global.put_guid(&signed)?;
        Ok(signed)
    }
}
