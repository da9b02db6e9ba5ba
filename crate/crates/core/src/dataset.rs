//! GUID datasets and their signed JWT form.
//!
//! The payload is canonical JSON so that signing is reproducible; the JWT is
//! ES256 (P-256, SHA-256) with a raw 64-byte `r || s` signature. Verifying a
//! dataset checks the signature under the key carried in the payload and then
//! re-derives the GUID from that key and salt. Swapping in another key can
//! therefore only ever produce a valid dataset for a different GUID.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use p256::ecdsa::signature::{Signer, Verifier};
use p256::ecdsa::{Signature, SigningKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::guid::{self, derive_guid, Guid, GuidError, GuidIdentity, GuidParams};
use crate::user_id;

pub const JWT_ALG: &str = "ES256";
pub const JWT_TYP: &str = "JWT";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("malformed JWT: {0}")]
    Malformed(String),
    #[error("unsupported JWT algorithm {0:?}")]
    UnsupportedAlgorithm(String),
    #[error("signature does not verify under the embedded public key")]
    SignatureInvalid,
    #[error("GUID {claimed} is not derived from the embedded key and salt (derives {derived})")]
    GuidBindingViolation { claimed: Guid, derived: Guid },
    #[error("private key does not match the dataset's public key")]
    KeyMismatch,
    #[error("duplicate user id entry {0:?}")]
    DuplicateEntry(String),
    #[error("invalid user id entry: {0}")]
    InvalidEntry(String),
    #[error(transparent)]
    Guid(#[from] GuidError),
}

/// One service identity listed in a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserIdEntry {
    #[serde(rename = "userID")]
    pub user_id: String,
    #[serde(rename = "domainRegistry")]
    pub domain_registry_url: String,
}

impl UserIdEntry {
    pub fn new(user_id: impl Into<String>, domain_registry_url: impl Into<String>) -> Self {
        UserIdEntry { user_id: user_id.into(), domain_registry_url: domain_registry_url.into() }
    }
}

/// The record published under a GUID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalDataset {
    pub guid: Guid,
    #[serde(rename = "publicKey", with = "b64")]
    pub public_key: Vec<u8>,
    #[serde(with = "b64")]
    pub salt: Vec<u8>,
    #[serde(rename = "userIDs")]
    pub user_ids: Vec<UserIdEntry>,
    pub version: u64,
    #[serde(rename = "issuedAt")]
    pub issued_at: u64,
    pub active: bool,
}

impl GlobalDataset {
    /// Builds an active dataset for `identity`.
    pub fn new(identity: &GuidIdentity, user_ids: Vec<UserIdEntry>, version: u64, issued_at: u64) -> Result<Self, DatasetError> {
        let dataset = GlobalDataset {
            guid: identity.guid().clone(),
            public_key: identity.public_key().to_vec(),
            salt: identity.salt().to_vec(),
            user_ids,
            version,
            issued_at,
            active: true,
        };
        dataset.check_entries()?;
        Ok(dataset)
    }

    fn check_entries(&self) -> Result<(), DatasetError> {
        let mut seen = BTreeSet::new();
        for entry in &self.user_ids {
            user_id::validate(&entry.user_id).map_err(|e| DatasetError::InvalidEntry(e.to_string()))?;
            if entry.domain_registry_url.trim().is_empty() {
                return Err(DatasetError::InvalidEntry(format!("{} has no domain registry", entry.user_id)));
            }
            if !seen.insert((&entry.domain_registry_url, &entry.user_id)) {
                return Err(DatasetError::DuplicateEntry(entry.user_id.clone()));
            }
        }
        Ok(())
    }

    /// Canonical JSON payload bytes.
    pub fn to_canonical_json(&self) -> String {
        canonical::to_string(self).expect("dataset serializes")
    }
}

mod b64 {
    use super::URL_SAFE_NO_PAD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&URL_SAFE_NO_PAD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        URL_SAFE_NO_PAD.decode(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    alg: String,
    typ: String,
}

/// A compact-serialized JWT whose payload is a [`GlobalDataset`].
///
/// Construction only checks the three-segment shape; use [`verify_dataset`]
/// before trusting anything inside.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SignedDataset {
    jwt: String,
}

impl SignedDataset {
    pub fn parse(jwt: &str) -> Result<Self, DatasetError> {
        let jwt = jwt.trim();
        let segments: Vec<&str> = jwt.split('.').collect();
        if segments.len() != 3 || segments.iter().any(|s| s.is_empty()) {
            return Err(DatasetError::Malformed("expected three non-empty dot-separated segments".into()));
        }
        Ok(SignedDataset { jwt: jwt.to_string() })
    }

    pub fn as_str(&self) -> &str {
        &self.jwt
    }

    fn segments(&self) -> (&str, &str, &str) {
        let mut it = self.jwt.splitn(3, '.');
        let header = it.next().unwrap_or_default();
        let payload = it.next().unwrap_or_default();
        let signature = it.next().unwrap_or_default();
        (header, payload, signature)
    }

    /// Decodes the payload without checking the signature. Used to read the
    /// claimed GUID and version off records before full verification.
    pub fn peek(&self) -> Result<GlobalDataset, DatasetError> {
        let (_, payload, _) = self.segments();
        let bytes = decode_segment(payload, "payload")?;
        serde_json::from_slice(&bytes).map_err(|e| DatasetError::Malformed(format!("payload: {e}")))
    }

    fn signature_bytes(&self) -> Vec<u8> {
        let (_, _, signature) = self.segments();
        URL_SAFE_NO_PAD.decode(signature).unwrap_or_default()
    }
}

impl fmt::Debug for SignedDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignedDataset({})", self.jwt)
    }
}

impl fmt::Display for SignedDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.jwt)
    }
}

impl TryFrom<String> for SignedDataset {
    type Error = DatasetError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        SignedDataset::parse(&s)
    }
}

impl From<SignedDataset> for String {
    fn from(s: SignedDataset) -> String {
        s.jwt
    }
}

fn decode_segment(segment: &str, what: &str) -> Result<Vec<u8>, DatasetError> {
    URL_SAFE_NO_PAD
        .decode(segment)
        .map_err(|e| DatasetError::Malformed(format!("{what} is not Base64URL: {e}")))
}

fn encoded_header() -> String {
    let header = Header { alg: JWT_ALG.into(), typ: JWT_TYP.into() };
    URL_SAFE_NO_PAD.encode(canonical::to_vec(&header).expect("header serializes"))
}

/// Signs `dataset` with `private_key`. The key must belong to the dataset and
/// the dataset's GUID must be derived from that key.
pub fn sign_dataset(dataset: &GlobalDataset, private_key: &SigningKey, params: &GuidParams) -> Result<SignedDataset, DatasetError> {
    if guid::encode_public_key(private_key.verifying_key()) != dataset.public_key {
        return Err(DatasetError::KeyMismatch);
    }
    let derived = derive_guid(&dataset.public_key, &dataset.salt, params)?;
    if derived != dataset.guid {
        return Err(DatasetError::GuidBindingViolation { claimed: dataset.guid.clone(), derived });
    }
    dataset.check_entries()?;
    let signing_input = format!("{}.{}", encoded_header(), URL_SAFE_NO_PAD.encode(dataset.to_canonical_json()));
    let signature: Signature = private_key.sign(signing_input.as_bytes());
    Ok(SignedDataset { jwt: format!("{signing_input}.{}", URL_SAFE_NO_PAD.encode(signature.to_bytes())) })
}

/// Checks an untrusted JWT and returns its dataset.
///
/// Order of checks: structure and header, signature under the embedded key,
/// then GUID re-derivation. An attacker who re-signs a victim's dataset with
/// their own key passes the signature check and fails the binding check.
pub fn verify_dataset(signed: &SignedDataset, params: &GuidParams) -> Result<GlobalDataset, DatasetError> {
    let (header_b64, payload_b64, signature_b64) = signed.segments();
    let header: Header = serde_json::from_slice(&decode_segment(header_b64, "header")?)
        .map_err(|e| DatasetError::Malformed(format!("header: {e}")))?;
    if header.alg != JWT_ALG {
        return Err(DatasetError::UnsupportedAlgorithm(header.alg));
    }
    if header.typ != JWT_TYP {
        return Err(DatasetError::Malformed(format!("unexpected typ {:?}", header.typ)));
    }
    let dataset: GlobalDataset = serde_json::from_slice(&decode_segment(payload_b64, "payload")?)
        .map_err(|e| DatasetError::Malformed(format!("payload: {e}")))?;
    let signature_bytes = decode_segment(signature_b64, "signature")?;
    let signature = Signature::from_slice(&signature_bytes).map_err(|_| DatasetError::SignatureInvalid)?;
    let verifying_key = guid::check_public_key(&dataset.public_key)?;
    let signing_input = &signed.jwt[..header_b64.len() + 1 + payload_b64.len()];
    verifying_key
        .verify(signing_input.as_bytes(), &signature)
        .map_err(|_| DatasetError::SignatureInvalid)?;
    let derived = derive_guid(&dataset.public_key, &dataset.salt, params)?;
    if derived != dataset.guid {
        return Err(DatasetError::GuidBindingViolation { claimed: dataset.guid, derived });
    }
    dataset.check_entries()?;
    Ok(dataset)
}

/// Total order used to pick between two valid datasets for the same GUID:
/// higher version, then later `issued_at`, then larger signature bytes.
pub fn precedence(a: (&GlobalDataset, &SignedDataset), b: (&GlobalDataset, &SignedDataset)) -> Ordering {
    a.0.version
        .cmp(&b.0.version)
        .then(a.0.issued_at.cmp(&b.0.issued_at))
        .then_with(|| a.1.signature_bytes().cmp(&b.1.signature_bytes()))
}
