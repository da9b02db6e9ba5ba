//! Identity mapping and discovery.
//!
//! Users own a self-asserted [`Guid`] derived from an ECDSA public key and a
//! salt. The GUID resolves through a Kademlia-based global registry
//! ([`dht`], [`global_registry`]) to a signed dataset listing the user's
//! service identities; each identity resolves through its provider's
//! [`domain_registry`] to the endpoints that are live right now. The
//! [`discovery`] service maps free-text searches to GUIDs, and [`client`]
//! chains the three lookups into a [`client::ContactSheet`].
//!
//! Everything here is transport agnostic. Inter-node DHT traffic is a
//! sans-io state machine ([`dht::DhtNode`]) that [`net_sim`] drives in
//! virtual time; HTTP front ends live in a separate crate.

pub mod canonical;
pub mod client;
pub mod dataset;
pub mod dht;
pub mod discovery;
pub mod domain_registry;
pub mod global_registry;
pub mod guid;
pub mod net_sim;
pub mod user_id;

pub use dataset::{sign_dataset, verify_dataset, DatasetError, GlobalDataset, SignedDataset, UserIdEntry};
pub use guid::{derive_guid, generate_identity, Guid, GuidError, GuidIdentity, GuidParams};
