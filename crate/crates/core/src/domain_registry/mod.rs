//! Per-provider soft-state directory of hyperty instances.
//!
//! Runtimes register each instance with a lease; unless refreshed the lease
//! runs out and the instance turns `disconnected`. Disconnected instances are
//! kept for a retention window so callers can still tell "offline" from
//! "never heard of it", then deleted by [`DomainRegistry::expire_sweep`].

mod clock;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

pub use clock::{Clock, MockClock, SystemClock};
pub use store::{InstanceRecord, InstanceStore, MemoryStore};

use crate::user_id;

pub const HYPERTY_SCHEME: &str = "hyperty://";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistryConfig {
    pub min_ttl_ms: u64,
    pub max_ttl_ms: u64,
    pub default_ttl_ms: u64,
    /// How long a disconnected instance is remembered before deletion.
    pub retention_ms: u64,
    /// Interval at which servers should call [`DomainRegistry::expire_sweep`].
    pub sweep_period_ms: u64,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            min_ttl_ms: 10_000,
            max_ttl_ms: 3_600_000,
            default_ttl_ms: 120_000,
            retention_ms: 24 * 3_600_000,
            sweep_period_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Live,
    Disconnected,
    Unknown,
}

/// Public view of a registered endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypertyInstance {
    pub url: String,
    #[serde(rename = "userID")]
    pub user_id: String,
    /// Lowercase capability tags such as `video`, `voice`, `chat`.
    pub media: BTreeSet<String>,
    pub provider: String,
    pub status: InstanceStatus,
    /// Milliseconds since the Unix epoch (or mock-clock origin).
    #[serde(rename = "leaseExpiry")]
    pub lease_expiry: u64,
}

/// What a runtime supplies when registering an instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub url: String,
    pub capabilities: BTreeSet<String>,
    pub provider: String,
}

impl Registration {
    pub fn new<I, S>(url: impl Into<String>, capabilities: I, provider: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Registration { url: url.into(), capabilities: normalize_caps(capabilities), provider: provider.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    #[serde(rename = "leaseExpiry")]
    pub lease_expiry: u64,
    #[serde(rename = "ttlMs")]
    pub ttl_ms: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Live instances whose lease ran out.
    pub disconnected: usize,
    /// Disconnected instances dropped after the retention window.
    pub removed: usize,
}

/// Sent once to each watcher when its instance comes back online.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub instance: HypertyInstance,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("ttl {ttl_ms} ms outside [{min_ms}, {max_ms}]")]
    TtlOutOfRange { ttl_ms: u64, min_ms: u64, max_ms: u64 },
    #[error(transparent)]
    MalformedUserId(#[from] user_id::MalformedUserId),
    #[error("instance url must start with {HYPERTY_SCHEME} and have no whitespace")]
    InvalidUrl,
    #[error("unknown instance")]
    NotFound,
    #[error("instance url is registered to another user")]
    UrlTaken,
}

/// Pending come-back-online subscription.
#[derive(Debug)]
pub struct Watch {
    rx: oneshot::Receiver<Notification>,
}

impl Watch {
    /// Non-blocking poll. `Err` means the instance was deleted and no
    /// notification will ever arrive.
    pub fn try_recv(&mut self) -> Result<Option<Notification>, WatchClosed> {
        match self.rx.try_recv() {
            Ok(n) => Ok(Some(n)),
            Err(oneshot::error::TryRecvError::Empty) => Ok(None),
            Err(oneshot::error::TryRecvError::Closed) => Err(WatchClosed),
        }
    }

    /// Blocks the current thread; must not be called from async code.
    pub fn wait(self) -> Result<Notification, WatchClosed> {
        self.rx.blocking_recv().map_err(|_| WatchClosed)
    }

    pub fn into_receiver(self) -> oneshot::Receiver<Notification> {
        self.rx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("instance removed before it came back online")]
pub struct WatchClosed;

pub(crate) fn normalize_caps<I, S>(caps: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    caps.into_iter().map(|c| c.as_ref().trim().to_ascii_lowercase()).filter(|c| !c.is_empty()).collect()
}

fn check_url(url: &str) -> Result<(), RegistryError> {
    let rest = url.strip_prefix(HYPERTY_SCHEME).ok_or(RegistryError::InvalidUrl)?;
    if rest.is_empty() || url.chars().any(char::is_whitespace) {
        return Err(RegistryError::InvalidUrl);
    }
    Ok(())
}

struct Inner<S> {
    store: S,
    watchers: BTreeMap<String, Vec<oneshot::Sender<Notification>>>,
    rng: ChaCha20Rng,
}

/// One provider's registry. Every operation takes a single lock, so
/// operations on one instance behave as if run one after another;
/// notifications are sent after the lock is released.
pub struct DomainRegistry<S = MemoryStore> {
    config: RegistryConfig,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner<S>>,
}

impl DomainRegistry<MemoryStore> {
    pub fn in_memory(config: RegistryConfig, clock: Arc<dyn Clock>) -> Self {
        Self::new(config, clock, MemoryStore::default())
    }
}

impl<S: InstanceStore> DomainRegistry<S> {
    pub fn new(config: RegistryConfig, clock: Arc<dyn Clock>, store: S) -> Self {
        Self::with_rng(config, clock, store, ChaCha20Rng::from_entropy())
    }

    /// Uses `rng` for fresh instance URLs, for reproducible rotation.
    pub fn with_rng(config: RegistryConfig, clock: Arc<dyn Clock>, store: S, rng: ChaCha20Rng) -> Self {
        DomainRegistry { config, clock, inner: Mutex::new(Inner { store, watchers: BTreeMap::new(), rng }) }
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    fn lock(&self) -> MutexGuard<'_, Inner<S>> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn check_ttl(&self, ttl_ms: u64) -> Result<(), RegistryError> {
        let (min_ms, max_ms) = (self.config.min_ttl_ms, self.config.max_ttl_ms);
        if ttl_ms < min_ms || ttl_ms > max_ms {
            return Err(RegistryError::TtlOutOfRange { ttl_ms, min_ms, max_ms });
        }
        Ok(())
    }

    /// Registers or replaces an instance. `ttl_ms` defaults to the configured
    /// default lease.
    pub fn register_instance(&self, user_id: &str, registration: Registration, ttl_ms: Option<u64>) -> Result<Lease, RegistryError> {
        user_id::validate(user_id)?;
        check_url(&registration.url)?;
        let ttl_ms = ttl_ms.unwrap_or(self.config.default_ttl_ms);
        self.check_ttl(ttl_ms)?;
        let now = self.clock.now_ms();
        let (lease, wake) = {
            let mut inner = self.lock();
            let previous = inner.store.get(&registration.url);
            if previous.as_ref().is_some_and(|p| p.user_id != user_id) {
                return Err(RegistryError::UrlTaken);
            }
            let came_back = previous.is_some_and(|p| p.lease_expiry <= now);
            let record = InstanceRecord {
                url: registration.url,
                user_id: user_id.to_string(),
                media: normalize_caps(&registration.capabilities),
                provider: registration.provider,
                ttl_ms,
                last_refresh: now,
                lease_expiry: now + ttl_ms,
                swept: false,
            };
            let wake = if came_back { Self::take_watchers(&mut inner, &record, now) } else { Vec::new() };
            let lease = Lease { lease_expiry: record.lease_expiry, ttl_ms };
            inner.store.put(record);
            (lease, wake)
        };
        Self::notify(wake);
        Ok(lease)
    }

    /// Extends the lease by the instance's ttl from now.
    pub fn refresh_instance(&self, user_id: &str, url: &str) -> Result<Lease, RegistryError> {
        let now = self.clock.now_ms();
        let (lease, wake) = {
            let mut inner = self.lock();
            let mut record = inner.store.get(url).filter(|r| r.user_id == user_id).ok_or(RegistryError::NotFound)?;
            let came_back = record.lease_expiry <= now;
            record.last_refresh = now;
            record.lease_expiry = now + record.ttl_ms;
            record.swept = false;
            let wake = if came_back { Self::take_watchers(&mut inner, &record, now) } else { Vec::new() };
            let lease = Lease { lease_expiry: record.lease_expiry, ttl_ms: record.ttl_ms };
            inner.store.put(record);
            (lease, wake)
        };
        Self::notify(wake);
        Ok(lease)
    }

    fn take_watchers(inner: &mut Inner<S>, record: &InstanceRecord, now: u64) -> Vec<(oneshot::Sender<Notification>, Notification)> {
        let watchers = inner.watchers.remove(&record.url).unwrap_or_default();
        let notification = Notification { instance: record.view(now), at_ms: now };
        watchers.into_iter().map(|tx| (tx, notification.clone())).collect()
    }

    fn notify(wake: Vec<(oneshot::Sender<Notification>, Notification)>) {
        for (tx, notification) in wake {
            // a dropped Watch simply misses it
            let _ = tx.send(notification);
        }
    }

    /// Instances of `user_id` offering every capability in `filter`, by url.
    pub fn query_user(&self, user_id: &str, filter: &BTreeSet<String>, include_disconnected: bool) -> Vec<HypertyInstance> {
        let filter = normalize_caps(filter);
        let now = self.clock.now_ms();
        let inner = self.lock();
        inner
            .store
            .by_user(user_id)
            .into_iter()
            .map(|r| r.view(now))
            .filter(|i| include_disconnected || i.status == InstanceStatus::Live)
            .filter(|i| filter.is_subset(&i.media))
            .collect()
    }

    pub fn instance_status(&self, user_id: &str, url: &str) -> InstanceStatus {
        let now = self.clock.now_ms();
        match self.lock().store.get(url) {
            Some(record) if record.user_id == user_id => record.status(now),
            _ => InstanceStatus::Unknown,
        }
    }

    pub fn instance(&self, user_id: &str, url: &str) -> Option<HypertyInstance> {
        let now = self.clock.now_ms();
        self.lock().store.get(url).filter(|r| r.user_id == user_id).map(|r| r.view(now))
    }

    /// Marks expired leases disconnected and deletes instances disconnected
    /// for longer than the retention window. Pending watches on deleted
    /// instances are closed.
    pub fn expire_sweep(&self, now: u64) -> SweepReport {
        let mut report = SweepReport::default();
        let mut inner = self.lock();
        for mut record in inner.store.all() {
            if record.lease_expiry > now {
                continue;
            }
            if now.saturating_sub(record.lease_expiry) >= self.config.retention_ms {
                inner.store.remove(&record.url);
                inner.watchers.remove(&record.url);
                report.removed += 1;
            } else if !record.swept {
                record.swept = true;
                inner.store.put(record);
                report.disconnected += 1;
            }
        }
        report
    }

    /// Subscribes to the next disconnected-to-live transition of `url`.
    pub fn watch_instance(&self, user_id: &str, url: &str) -> Result<Watch, RegistryError> {
        let mut inner = self.lock();
        inner.store.get(url).filter(|r| r.user_id == user_id).ok_or(RegistryError::NotFound)?;
        let (tx, rx) = oneshot::channel();
        let senders = inner.watchers.entry(url.to_string()).or_default();
        senders.retain(|s| !s.is_closed());
        senders.push(tx);
        Ok(Watch { rx })
    }

    /// Moves an instance to a freshly generated URL, keeping its user,
    /// capabilities and lease. The old URL is forgotten immediately.
    pub fn rotate_instance(&self, user_id: &str, url: &str) -> Result<HypertyInstance, RegistryError> {
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        let mut record = inner.store.get(url).filter(|r| r.user_id == user_id).ok_or(RegistryError::NotFound)?;
        let fresh = loop {
            let candidate = fresh_url(&record.provider, &mut inner.rng);
            if inner.store.get(&candidate).is_none() {
                break candidate;
            }
        };
        inner.store.remove(url);
        // watchers of the old address must not learn the new one
        inner.watchers.remove(url);
        record.url = fresh;
        let view = record.view(now);
        inner.store.put(record);
        Ok(view)
    }

    /// Every instance currently stored, by url.
    pub fn all_instances(&self) -> Vec<HypertyInstance> {
        let now = self.clock.now_ms();
        self.lock().store.all().into_iter().map(|r| r.view(now)).collect()
    }

    /// Open watches on `url`.
    pub fn watcher_count(&self, url: &str) -> usize {
        self.lock().watchers.get(url).map_or(0, |w| w.iter().filter(|s| !s.is_closed()).count())
    }
}

/// `hyperty://<provider>/<32 hex digits>`.
pub fn fresh_url(provider: &str, rng: &mut dyn RngCore) -> String {
    let mut token = [0u8; 16];
    rng.fill_bytes(&mut token);
    let host: String = provider.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c.to_ascii_lowercase() } else { '-' }).collect();
    let hex: String = token.iter().map(|b| format!("{b:02x}")).collect();
    format!("{HYPERTY_SCHEME}{host}/{hex}")
}
