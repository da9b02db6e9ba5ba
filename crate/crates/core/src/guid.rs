//! Self-asserted global user identifiers.
//!
//! A GUID is `Base64URL(PBKDF2-HMAC-SHA256(public_key, salt))` over a P-256
//! public key in uncompressed SEC1 form and a 16-byte salt, 32 bytes of
//! output, no padding. Anyone holding the dataset can re-derive it, which is
//! what binds a published dataset to its key.

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use p256::ecdsa::{SigningKey, VerifyingKey};
use p256::PublicKey;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

/// Length of an encoded GUID: 256 bits in unpadded Base64URL.
pub const GUID_LEN: usize = 43;
/// Digest width in bytes.
pub const DIGEST_LEN: usize = 32;
/// Fixed salt length in bytes.
pub const SALT_LEN: usize = 16;
/// Length of an uncompressed P-256 point (`0x04 || X || Y`).
pub const PUBLIC_KEY_LEN: usize = 65;
pub const DEFAULT_ITERATIONS: u32 = 10_000;

const KEY_GENERATION_ATTEMPTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuidError {
    #[error("malformed GUID {0:?}: expected {GUID_LEN} Base64URL characters")]
    Malformed(String),
    #[error("invalid public key: {0}")]
    InvalidKey(String),
    #[error("invalid salt: expected {SALT_LEN} bytes, got {0}")]
    InvalidSalt(usize),
    #[error("entropy source failed: {0}")]
    Entropy(String),
}

/// PBKDF2 parameters shared by everyone who derives or checks GUIDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidParams {
    pub iterations: u32,
}

impl Default for GuidParams {
    fn default() -> Self {
        GuidParams { iterations: DEFAULT_ITERATIONS }
    }
}

/// A 256-bit identifier in unpadded Base64URL form.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Guid(String);

impl Guid {
    pub fn parse(s: &str) -> Result<Self, GuidError> {
        if s.len() != GUID_LEN {
            return Err(GuidError::Malformed(s.to_string()));
        }
        match URL_SAFE_NO_PAD.decode(s) {
            Ok(bytes) if bytes.len() == DIGEST_LEN => Ok(Guid(s.to_string())),
            _ => Err(GuidError::Malformed(s.to_string())),
        }
    }

    pub fn from_digest(digest: &[u8; DIGEST_LEN]) -> Self {
        Guid(URL_SAFE_NO_PAD.encode(digest))
    }

    /// The 32-byte digest, which doubles as the DHT lookup key.
    pub fn digest(&self) -> [u8; DIGEST_LEN] {
        let bytes = URL_SAFE_NO_PAD.decode(&self.0).expect("validated on construction");
        bytes.try_into().expect("validated on construction")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Guid({})", self.0)
    }
}

impl FromStr for Guid {
    type Err = GuidError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Guid::parse(s)
    }
}

impl TryFrom<String> for Guid {
    type Error = GuidError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Guid::parse(&s)
    }
}

impl From<Guid> for String {
    fn from(g: Guid) -> String {
        g.0
    }
}

/// Raw PBKDF2-HMAC-SHA256 over arbitrary key material. [`derive_guid`] is the
/// checked entry point; this exists for test vectors and for callers that
/// already validated their input.
pub fn guid_digest(key_material: &[u8], salt: &[u8], iterations: u32) -> [u8; DIGEST_LEN] {
    let mut out = [0u8; DIGEST_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(key_material, salt, iterations, &mut out);
    out
}

/// Derives the GUID for an uncompressed P-256 public key and a salt.
pub fn derive_guid(public_key: &[u8], salt: &[u8], params: &GuidParams) -> Result<Guid, GuidError> {
    check_public_key(public_key)?;
    if salt.len() != SALT_LEN {
        return Err(GuidError::InvalidSalt(salt.len()));
    }
    Ok(Guid::from_digest(&guid_digest(public_key, salt, params.iterations)))
}

pub(crate) fn check_public_key(public_key: &[u8]) -> Result<VerifyingKey, GuidError> {
    if public_key.len() != PUBLIC_KEY_LEN || public_key[0] != 0x04 {
        return Err(GuidError::InvalidKey(format!(
            "expected {PUBLIC_KEY_LEN}-byte uncompressed point, got {} bytes",
            public_key.len()
        )));
    }
    let key = PublicKey::from_sec1_bytes(public_key).map_err(|e| GuidError::InvalidKey(e.to_string()))?;
    Ok(VerifyingKey::from(key))
}

/// Uncompressed SEC1 encoding of a verifying key.
pub fn encode_public_key(key: &VerifyingKey) -> Vec<u8> {
    key.to_encoded_point(false).as_bytes().to_vec()
}

/// A user's key pair, salt and the GUID derived from them.
#[derive(Clone)]
pub struct GuidIdentity {
    signing_key: SigningKey,
    public_key: Vec<u8>,
    salt: [u8; SALT_LEN],
    guid: Guid,
}

impl GuidIdentity {
    /// Rebuilds an identity from a stored private scalar and salt.
    pub fn from_parts(private_key: &[u8], salt: &[u8], params: &GuidParams) -> Result<Self, GuidError> {
        let signing_key = SigningKey::from_slice(private_key).map_err(|e| GuidError::InvalidKey(e.to_string()))?;
        let salt: [u8; SALT_LEN] = salt.try_into().map_err(|_| GuidError::InvalidSalt(salt.len()))?;
        let public_key = encode_public_key(signing_key.verifying_key());
        let guid = derive_guid(&public_key, &salt, params)?;
        Ok(GuidIdentity { signing_key, public_key, salt, guid })
    }

    pub fn guid(&self) -> &Guid {
        &self.guid
    }

    pub fn public_key(&self) -> &[u8] {
        &self.public_key
    }

    pub fn salt(&self) -> &[u8; SALT_LEN] {
        &self.salt
    }

    pub fn signing_key(&self) -> &SigningKey {
        &self.signing_key
    }

    pub fn private_key_bytes(&self) -> [u8; 32] {
        self.signing_key.to_bytes().into()
    }
}

impl fmt::Debug for GuidIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GuidIdentity").field("guid", &self.guid).finish_non_exhaustive()
    }
}

/// Generates a fresh identity from `rng`. Seeded generators give
/// reproducible identities.
pub fn generate_identity<R: RngCore + CryptoRng>(rng: &mut R, params: &GuidParams) -> Result<GuidIdentity, GuidError> {
    let mut scalar = [0u8; 32];
    let mut signing_key = None;
    for _ in 0..KEY_GENERATION_ATTEMPTS {
        rng.try_fill_bytes(&mut scalar).map_err(|e| GuidError::Entropy(e.to_string()))?;
        // zero or >= group order; astronomically rare outside adversarial rngs
        if let Ok(key) = SigningKey::from_slice(&scalar) {
            signing_key = Some(key);
            break;
        }
    }
    let signing_key =
        signing_key.ok_or_else(|| GuidError::Entropy("entropy source never produced a valid scalar".into()))?;
    let mut salt = [0u8; SALT_LEN];
    rng.try_fill_bytes(&mut salt).map_err(|e| GuidError::Entropy(e.to_string()))?;
    let public_key = encode_public_key(signing_key.verifying_key());
    let guid = derive_guid(&public_key, &salt, params)?;
    Ok(GuidIdentity { signing_key, public_key, salt, guid })
}

/// Number of uniformly random draws from a `digest_bits`-bit space needed for
/// a collision with probability `probability`, from the birthday
/// approximation `p = 1 - exp(-n^2 / (2 * 2^bits))`.
pub fn birthday_bound(probability: f64, digest_bits: u32) -> f64 {
    assert!((0.0..1.0).contains(&probability), "probability must lie in [0, 1)");
    let space_sqrt = (digest_bits as f64 / 2.0).exp2();
    (-2.0 * (-probability).ln_1p()).sqrt() * space_sqrt
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    pub(crate) const FAST: GuidParams = GuidParams { iterations: 1 };

    pub(crate) fn hex(s: &str) -> Vec<u8> {
        (0..s.len()).step_by(2).map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap()).collect()
    }

    // Frozen from Python's hashlib.pbkdf2_hmac before this module existed:
    // (key material hex, salt hex, iterations, unpadded Base64URL digest).
    pub(crate) const VECTORS: &[(&str, &str, u32, &str)] = &[
        ("0000000000000000000000000000000000000000000000000000000000000000", "00000000000000000000000000000000", 1, "yMLvk2JPU_dGrVZkRB-eBPHd5shPjwoGaJ2fTvYewb0"),
        ("0000000000000000000000000000000000000000000000000000000000000000", "00000000000000000000000000000000", 2, "K_4p7JAI74NRTw49r4hNkBW-dHL26xxd-unuYzbKPLs"),
        ("000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f202122232425262728292a2b2c2d2e2f303132333435363738393a3b3c3d3e3f40", "000102030405060708090a0b0c0d0e0f", 1, "dNqV-ulDK2hqVM1CrtTv9iv3qLRNtY2wEDdjiKJzqa4"),
        ("04abababababababababababababababababababababababababababababababababababababababababababababababababababababababababababababababab", "696d6164732d73616c742d3030303031", 1000, "OREq9hDnpCzqcExaMwF39RkrQbsVwDBtTykw001PbiY"),
        ("ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff", "01010101010101010101010101010101", 10000, "GbnOzCZ8-uiCBsemTVgJyTa7SYu4U_yQzebT_E5Kt6s"),
        ("000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f202122232425262728292a2b2c2d2e2f303132333435363738393a3b3c3d3e3f40", "000102030405060708090a0b0c0d0e0f", 10000, "6eH4F4bV4s6kj3Smkf4jdmrC_LgLeMhGDDDsa0GJVPg"),
    ];

    #[test]
    fn digest_matches_frozen_vectors() {
        for (pk, salt, iterations, expected) in VECTORS {
            let digest = guid_digest(&hex(pk), &hex(salt), *iterations);
            assert_eq!(Guid::from_digest(&digest).as_str(), *expected);
        }
    }

    #[test]
    fn guid_parse_rejects_bad_lengths_and_alphabet() {
        assert!(Guid::parse("WabRS8ZRswDNUIYtqF-j0nHQZmQVRLJimvqIGIYMz50").is_ok());
        // 42 characters
        assert!(Guid::parse("OuLbxRKrYcyvfU8cmSqdyxoBq7j3IAypd20iuPDsIg").is_err());
        assert!(Guid::parse("WabRS8ZRswDNUIYtqF+j0nHQZmQVRLJimvqIGIYMz50").is_err());
        assert!(Guid::parse("WabRS8ZRswDNUIYtqF-j0nHQZmQVRLJimvqIGIYMz5=").is_err());
        // non-zero trailing bits
        assert!(Guid::parse("WabRS8ZRswDNUIYtqF-j0nHQZmQVRLJimvqIGIYMz51").is_err());
        assert!(Guid::parse("").is_err());
    }

    #[test]
    fn same_seed_same_identity() {
        let a = generate_identity(&mut ChaCha20Rng::seed_from_u64(1), &FAST).unwrap();
        let b = generate_identity(&mut ChaCha20Rng::seed_from_u64(1), &FAST).unwrap();
        assert_eq!(a.guid(), b.guid());
        assert_eq!(a.private_key_bytes(), b.private_key_bytes());
        assert_eq!(a.guid().as_str().len(), GUID_LEN);
    }

    #[test]
    fn distinct_seeds_distinct_guids() {
        let guids: HashSet<_> = (0..1000u64)
            .map(|s| generate_identity(&mut ChaCha20Rng::seed_from_u64(s), &FAST).unwrap().guid().clone())
            .collect();
        assert_eq!(guids.len(), 1000);
    }

    #[test]
    fn derive_is_pure_and_matches_identity() {
        let id = generate_identity(&mut ChaCha20Rng::seed_from_u64(9), &GuidParams::default()).unwrap();
        let params = GuidParams::default();
        let first = derive_guid(id.public_key(), id.salt(), &params).unwrap();
        assert_eq!(&first, id.guid());
        assert_eq!(derive_guid(id.public_key(), id.salt(), &params).unwrap(), first);
        assert_eq!(first.digest().len(), DIGEST_LEN);
    }

    #[test]
    fn derive_rejects_bad_inputs() {
        let id = generate_identity(&mut ChaCha20Rng::seed_from_u64(2), &FAST).unwrap();
        assert!(matches!(derive_guid(id.public_key(), &[0u8; 15], &FAST), Err(GuidError::InvalidSalt(15))));
        assert!(matches!(derive_guid(&[0u8; 32], id.salt(), &FAST), Err(GuidError::InvalidKey(_))));
        let compressed = id.signing_key().verifying_key().to_encoded_point(true);
        assert!(matches!(derive_guid(compressed.as_bytes(), id.salt(), &FAST), Err(GuidError::InvalidKey(_))));
        let mut off_curve = id.public_key().to_vec();
        off_curve[64] ^= 1;
        assert!(matches!(derive_guid(&off_curve, id.salt(), &FAST), Err(GuidError::InvalidKey(_))));
    }

    #[test]
    fn from_parts_round_trips() {
        let id = generate_identity(&mut ChaCha20Rng::seed_from_u64(3), &FAST).unwrap();
        let back = GuidIdentity::from_parts(&id.private_key_bytes(), id.salt(), &FAST).unwrap();
        assert_eq!(back.guid(), id.guid());
    }

    struct Finite(usize);

    impl RngCore for Finite {
        fn next_u32(&mut self) -> u32 {
            unimplemented!()
        }
        fn next_u64(&mut self) -> u64 {
            unimplemented!()
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            self.try_fill_bytes(dest).unwrap()
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
            if dest.len() > self.0 {
                return Err(rand::Error::new("exhausted"));
            }
            self.0 -= dest.len();
            dest.fill(0x5a);
            Ok(())
        }
    }

    impl CryptoRng for Finite {}

    #[test]
    fn exhausted_entropy_is_an_error() {
        assert!(matches!(generate_identity(&mut Finite(40), &FAST), Err(GuidError::Entropy(_))));
        assert!(generate_identity(&mut Finite(48), &FAST).is_ok());
    }

    #[test]
    fn birthday_bound_for_one_percent() {
        let n = birthday_bound(0.01, 256);
        assert!((n / 4.8e37 - 1.0).abs() < 0.05, "{n}");
        // tiny space sanity check: 50% over 365 days is ~22.5 draws
        let days = birthday_bound(0.5, 0) * 365f64.sqrt();
        assert!((days - 22.49).abs() < 0.01, "{days}");
    }
}
