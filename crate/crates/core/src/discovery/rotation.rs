use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain_registry::{DomainRegistry, HypertyInstance, InstanceStatus, InstanceStore};

/// When endpoint URLs are replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum RotationPolicy {
    /// New URLs every time the client runtime restarts.
    OnRestart,
    /// New URLs once `period_ms` has elapsed since the last rotation.
    Period { period_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RotationError {
    #[error("rotation period {period_ms} ms is shorter than the minimum lease {min_ttl_ms} ms")]
    PeriodTooShort { period_ms: u64, min_ttl_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rotated {
    pub old_url: String,
    pub instance: HypertyInstance,
}

/// Something that can move endpoints to fresh URLs.
pub trait RotationHook {
    /// Minimum lease the hooked registry accepts.
    fn min_ttl_ms(&self) -> u64;
    /// Rotates the live instances of `user_id`, or of every user when `None`.
    fn rotate(&self, user_id: Option<&str>) -> Vec<Rotated>;
}

impl<S: InstanceStore> RotationHook for DomainRegistry<S> {
    fn min_ttl_ms(&self) -> u64 {
        self.config().min_ttl_ms
    }

    fn rotate(&self, user_id: Option<&str>) -> Vec<Rotated> {
        let targets: Vec<HypertyInstance> = self
            .all_instances()
            .into_iter()
            .filter(|i| i.status == InstanceStatus::Live && user_id.is_none_or(|u| u == i.user_id))
            .collect();
        targets
            .into_iter()
            .filter_map(|old| {
                let instance = self.rotate_instance(&old.user_id, &old.url).ok()?;
                Some(Rotated { old_url: old.url, instance })
            })
            .collect()
    }
}

/// Applies a rotation policy to one hook.
#[derive(Debug, Clone)]
pub struct Rotator {
    policy: RotationPolicy,
    user_id: Option<String>,
    last_ms: Option<u64>,
}

impl Rotator {
    pub fn new(policy: RotationPolicy, user_id: Option<String>, hook: &dyn RotationHook) -> Result<Self, RotationError> {
        if let RotationPolicy::Period { period_ms } = policy {
            let min_ttl_ms = hook.min_ttl_ms();
            if period_ms < min_ttl_ms {
                return Err(RotationError::PeriodTooShort { period_ms, min_ttl_ms });
            }
        }
        Ok(Rotator { policy, user_id, last_ms: None })
    }

    pub fn policy(&self) -> RotationPolicy {
        self.policy
    }

    /// Call when the client runtime (re)starts.
    pub fn on_restart(&mut self, now_ms: u64, hook: &dyn RotationHook) -> Vec<Rotated> {
        match self.policy {
            RotationPolicy::OnRestart => self.rotate_now(now_ms, hook),
            RotationPolicy::Period { .. } => {
                self.last_ms.get_or_insert(now_ms);
                Vec::new()
            }
        }
    }

    /// Call periodically; rotates when the period has elapsed.
    pub fn tick(&mut self, now_ms: u64, hook: &dyn RotationHook) -> Vec<Rotated> {
        match self.policy {
            RotationPolicy::Period { period_ms } => {
                let last = *self.last_ms.get_or_insert(now_ms);
                if now_ms.saturating_sub(last) >= period_ms {
                    self.rotate_now(now_ms, hook)
                } else {
                    Vec::new()
                }
            }
            RotationPolicy::OnRestart => Vec::new(),
        }
    }

    fn rotate_now(&mut self, now_ms: u64, hook: &dyn RotationHook) -> Vec<Rotated> {
        self.last_ms = Some(now_ms);
        hook.rotate(self.user_id.as_deref())
    }
}

/// One-shot rotation after checking `policy` against the hook.
pub fn rotate_endpoint_urls(hook: &dyn RotationHook, policy: RotationPolicy, user_id: Option<&str>) -> Result<Vec<Rotated>, RotationError> {
    Rotator::new(policy, user_id.map(String::from), hook)?;
    Ok(hook.rotate(user_id))
}
