use std::cmp::Ordering;
use std::collections::BTreeMap;

use thiserror::Error;

use super::id::Key;
use crate::dataset::{precedence, verify_dataset, DatasetError, GlobalDataset, SignedDataset};
use crate::guid::GuidParams;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("record key does not match the dataset's GUID")]
    KeyMismatch,
}

/// A dataset held by one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhtRecord {
    pub key: Key,
    /// The JWT exactly as held in storage. Readers re-verify it.
    pub jwt: String,
    pub version: u64,
    pub stored_at: u64,
    pub expires_at: u64,
    /// Received through replication rather than from the publishing node.
    pub replica: bool,
    dataset: GlobalDataset,
    signed: SignedDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutOutcome {
    Stored,
    /// Same record already held; expiry was refreshed.
    Refreshed,
    /// A record with higher precedence is already held.
    Stale,
}

impl PutOutcome {
    pub fn accepted(self) -> bool {
        !matches!(self, PutOutcome::Stale)
    }
}

/// Validates and checks that `signed` belongs under `key`.
pub fn validate(key: &Key, signed: &SignedDataset, params: &GuidParams) -> Result<GlobalDataset, StoreError> {
    let dataset = verify_dataset(signed, params)?;
    if dataset.guid.digest() != key.0 {
        return Err(StoreError::KeyMismatch);
    }
    Ok(dataset)
}

#[derive(Debug, Clone, Default)]
pub struct RecordStore {
    records: BTreeMap<Key, DhtRecord>,
}

impl RecordStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Verifies and stores `jwt` under `key` unless a record that takes
    /// precedence is already held.
    pub fn put(&mut self, key: Key, jwt: &str, now: u64, ttl: u64, replica: bool, params: &GuidParams) -> Result<PutOutcome, StoreError> {
        let signed = SignedDataset::parse(jwt)?;
        let dataset = validate(&key, &signed, params)?;
        if let Some(existing) = self.records.get_mut(&key).filter(|r| r.expires_at > now) {
            match precedence((&dataset, &signed), (&existing.dataset, &existing.signed)) {
                Ordering::Less => return Ok(PutOutcome::Stale),
                Ordering::Equal => {
                    if !replica {
                        existing.expires_at = existing.expires_at.max(now + ttl);
                        existing.replica = false;
                    }
                    return Ok(PutOutcome::Refreshed);
                }
                Ordering::Greater => {}
            }
        }
        let record = DhtRecord {
            key,
            jwt: signed.as_str().to_string(),
            version: dataset.version,
            stored_at: now,
            expires_at: now + ttl,
            replica,
            dataset,
            signed,
        };
        self.records.insert(key, record);
        Ok(PutOutcome::Stored)
    }

    /// Live record under `key`, if any.
    pub fn get(&self, key: &Key, now: u64) -> Option<&DhtRecord> {
        self.records.get(key).filter(|r| r.expires_at > now)
    }

    /// Drops expired records and returns how many were removed.
    pub fn expire(&mut self, now: u64) -> usize {
        let before = self.records.len();
        self.records.retain(|_, r| r.expires_at > now);
        before - self.records.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &DhtRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// Overwrites the stored bytes of a record in place, bypassing
    /// validation. Models storage corruption in tests and simulations.
    pub fn corrupt(&mut self, key: &Key, f: impl FnOnce(&mut String)) -> bool {
        match self.records.get_mut(key) {
            Some(record) => {
                f(&mut record.jwt);
                true
            }
            None => false,
        }
    }
}
