//! Validating read/write front end to the DHT.
//!
//! Every write is verified (signature, then GUID binding) and checked for a
//! strictly newer version before it is handed to the DHT; every read is
//! re-verified by the DHT lookup itself.

mod sim_dht;
mod tcp_dht;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sim_dht::SimDht;
pub use tcp_dht::{TcpDht, TcpDhtConfig};

use crate::dataset::{verify_dataset, DatasetError, SignedDataset};
use crate::dht::Key;
use crate::guid::{Guid, GuidParams};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DhtError {
    /// Values were found but none verified.
    #[error("all stored replicas failed verification")]
    Integrity,
    #[error("dht rejected the record: {0}")]
    Rejected(String),
    #[error("dht unavailable: {0}")]
    Unavailable(String),
}

/// Access to a DHT from outside its nodes.
pub trait DhtHandle: Send + Sync {
    /// Stores on the k closest nodes; returns the ids (hex) that accepted.
    fn store(&self, key: Key, signed: &SignedDataset) -> Result<Vec<String>, DhtError>;
    fn get(&self, key: Key) -> Result<Option<SignedDataset>, DhtError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GlobalRegistryError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("signature invalid: {0}")]
    Unauthorized(String),
    #[error("GUID binding violation: {0}")]
    Forbidden(String),
    #[error("GUID not found")]
    NotFound,
    #[error("version {incoming} is not newer than stored version {stored}")]
    Conflict { stored: u64, incoming: u64 },
    #[error("stored data failed verification")]
    Integrity,
    #[error("registry unavailable: {0}")]
    Unavailable(String),
}

impl GlobalRegistryError {
    /// HTTP status for this error.
    pub fn status(&self) -> u16 {
        match self {
            GlobalRegistryError::BadRequest(_) => 400,
            GlobalRegistryError::Unauthorized(_) => 401,
            GlobalRegistryError::Forbidden(_) => 403,
            GlobalRegistryError::NotFound => 404,
            GlobalRegistryError::Conflict { .. } => 409,
            GlobalRegistryError::Integrity => 502,
            GlobalRegistryError::Unavailable(_) => 503,
        }
    }
}

impl From<DatasetError> for GlobalRegistryError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::SignatureInvalid | DatasetError::UnsupportedAlgorithm(_) | DatasetError::KeyMismatch => GlobalRegistryError::Unauthorized(e.to_string()),
            DatasetError::GuidBindingViolation { .. } => GlobalRegistryError::Forbidden(e.to_string()),
            other => GlobalRegistryError::BadRequest(other.to_string()),
        }
    }
}

impl From<DhtError> for GlobalRegistryError {
    fn from(e: DhtError) -> Self {
        match e {
            DhtError::Integrity => GlobalRegistryError::Integrity,
            DhtError::Rejected(m) => GlobalRegistryError::BadRequest(m),
            DhtError::Unavailable(m) => GlobalRegistryError::Unavailable(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PutAck {
    pub guid: Guid,
    pub version: u64,
    /// Node ids (hex) holding the record.
    pub holders: Vec<String>,
}

pub struct GlobalRegistry<H> {
    dht: H,
    params: GuidParams,
    // serializes the version check with the store that follows it
    writes: Mutex<()>,
}

impl<H: DhtHandle> GlobalRegistry<H> {
    pub fn new(dht: H, params: GuidParams) -> Self {
        GlobalRegistry { dht, params, writes: Mutex::new(()) }
    }

    pub fn dht(&self) -> &H {
        &self.dht
    }

    pub fn params(&self) -> &GuidParams {
        &self.params
    }

    /// Accepts `jwt` if it verifies and is newer than what is stored.
    /// `path_guid`, when given, must name the dataset's own GUID.
    pub fn put_guid(&self, path_guid: Option<&str>, jwt: &str) -> Result<PutAck, GlobalRegistryError> {
        let signed = SignedDataset::parse(jwt.trim())?;
        let dataset = verify_dataset(&signed, &self.params)?;
        if let Some(path) = path_guid {
            let path = Guid::parse(path).map_err(|e| GlobalRegistryError::BadRequest(e.to_string()))?;
            if path != dataset.guid {
                return Err(GlobalRegistryError::BadRequest("path GUID differs from dataset GUID".into()));
            }
        }
        let key = Key::from_guid(&dataset.guid);
        let _guard = self.writes.lock().unwrap_or_else(|p| p.into_inner());
        match self.dht.get(key) {
            Ok(Some(existing)) => {
                let stored = verify_dataset(&existing, &self.params).map_err(|_| GlobalRegistryError::Integrity)?;
                if dataset.version <= stored.version {
                    return Err(GlobalRegistryError::Conflict { stored: stored.version, incoming: dataset.version });
                }
            }
            // replicas exist but none verify; a valid newer dataset repairs them
            Ok(None) | Err(DhtError::Integrity) => {}
            Err(e) => return Err(e.into()),
        }
        let holders = self.dht.store(key, &signed)?;
        if holders.is_empty() {
            return Err(GlobalRegistryError::Unavailable("no node accepted the record".into()));
        }
        Ok(PutAck { guid: dataset.guid, version: dataset.version, holders })
    }

    pub fn get_guid(&self, guid: &str) -> Result<SignedDataset, GlobalRegistryError> {
        let guid = Guid::parse(guid).map_err(|e| GlobalRegistryError::BadRequest(e.to_string()))?;
        self.dht.get(Key::from_guid(&guid))?.ok_or(GlobalRegistryError::NotFound)
    }
}
