//! `user://<domain>/<localpart>` service identifiers.

use thiserror::Error;

const SCHEME: &str = "user://";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed user id {0:?}: expected user://<domain>/<localpart>")]
pub struct MalformedUserId(pub String);

/// Checks that `user_id` has the `user://<domain>/<localpart>` shape with a
/// non-empty domain and local part and no whitespace.
pub fn validate(user_id: &str) -> Result<(), MalformedUserId> {
    let err = || MalformedUserId(user_id.to_string());
    let rest = user_id.strip_prefix(SCHEME).ok_or_else(err)?;
    let (domain, local) = rest.split_once('/').ok_or_else(err)?;
    let bad_domain = domain.is_empty() || !domain.chars().all(|c| c.is_ascii_alphanumeric() || "-.:".contains(c));
    let bad_local = local.is_empty() || local.contains('/') || local.chars().any(char::is_whitespace);
    if bad_domain || bad_local {
        return Err(err());
    }
    Ok(())
}

/// Returns the domain part of a well-formed user id.
pub fn domain(user_id: &str) -> Option<&str> {
    validate(user_id).ok()?;
    user_id[SCHEME.len()..].split_once('/').map(|(d, _)| d)
}
