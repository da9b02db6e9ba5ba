use std::collections::{BTreeMap, BTreeSet};

use super::{HypertyInstance, InstanceStatus};

/// Stored form of an instance, including lease bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRecord {
    pub url: String,
    pub user_id: String,
    pub media: BTreeSet<String>,
    pub provider: String,
    pub ttl_ms: u64,
    pub last_refresh: u64,
    pub lease_expiry: u64,
    /// Already counted as disconnected by a sweep.
    pub swept: bool,
}

impl InstanceRecord {
    pub fn status(&self, now: u64) -> InstanceStatus {
        if now < self.lease_expiry {
            InstanceStatus::Live
        } else {
            InstanceStatus::Disconnected
        }
    }

    pub fn view(&self, now: u64) -> HypertyInstance {
        HypertyInstance {
            url: self.url.clone(),
            user_id: self.user_id.clone(),
            media: self.media.clone(),
            provider: self.provider.clone(),
            status: self.status(now),
            lease_expiry: self.lease_expiry,
        }
    }
}

/// Backing storage for a registry. Implementations need no locking of
/// their own; the registry serializes access.
pub trait InstanceStore: Send {
    fn get(&self, url: &str) -> Option<InstanceRecord>;
    /// Inserts or replaces by url.
    fn put(&mut self, record: InstanceRecord);
    fn remove(&mut self, url: &str) -> Option<InstanceRecord>;
    /// Records of one user, ordered by url.
    fn by_user(&self, user_id: &str) -> Vec<InstanceRecord>;
    /// Every record, ordered by url.
    fn all(&self) -> Vec<InstanceRecord>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    by_url: BTreeMap<String, InstanceRecord>,
    by_user: BTreeMap<String, BTreeSet<String>>,
}

impl InstanceStore for MemoryStore {
    fn get(&self, url: &str) -> Option<InstanceRecord> {
        self.by_url.get(url).cloned()
    }

    fn put(&mut self, record: InstanceRecord) {
        self.remove(&record.url);
        self.by_user.entry(record.user_id.clone()).or_default().insert(record.url.clone());
        self.by_url.insert(record.url.clone(), record);
    }

    fn remove(&mut self, url: &str) -> Option<InstanceRecord> {
        let record = self.by_url.remove(url)?;
        if let Some(urls) = self.by_user.get_mut(&record.user_id) {
            urls.remove(url);
            if urls.is_empty() {
                self.by_user.remove(&record.user_id);
            }
        }
        Some(record)
    }

    fn by_user(&self, user_id: &str) -> Vec<InstanceRecord> {
        self.by_user.get(user_id).into_iter().flatten().map(|url| self.by_url[url].clone()).collect()
    }

    fn all(&self) -> Vec<InstanceRecord> {
        self.by_url.values().cloned().collect()
    }
}
