//! Kademlia DHT keyed by GUID digests.

pub mod id;
pub mod message;
pub mod node;
pub mod routing;
pub mod store;

pub use id::{xor_distance, Distance, Key, NodeId};
pub use message::{Body, Envelope};
pub use node::{DhtConfig, DhtNode, GetError, OpId, OpOutcome, OpResult, Output, Timer};
pub use routing::{BucketUpdate, Contact, RoutingTable};
pub use store::{DhtRecord, RecordStore, StoreError};
