//! Inter-node wire messages.
//!
//! Every frame is a 4-byte big-endian length followed by the canonical JSON
//! of an [`Envelope`]. The simulator and the socket transport both go
//! through [`encode`] and [`decode`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::id::{Key, NodeId};
use super::routing::Contact;
use crate::canonical;

/// Upper bound on a single frame; datasets are a few hundred bytes.
pub const MAX_FRAME: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Body {
    Ping,
    Store {
        key: Key,
        jwt: String,
        /// Set when a replica holder re-replicates rather than the owner publishing.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        replica: bool,
    },
    FindNode {
        key: Key,
    },
    FindValue {
        key: Key,
    },
    /// One-way notice that the sender is leaving gracefully.
    Leave,
    Pong,
    StoreAck {
        accepted: bool,
    },
    Nodes {
        contacts: Vec<Contact>,
    },
    Value {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jwt: Option<String>,
        contacts: Vec<Contact>,
    },
}

impl Body {
    pub fn is_response(&self) -> bool {
        matches!(self, Body::Pong | Body::StoreAck { .. } | Body::Nodes { .. } | Body::Value { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Body::Ping => "PING",
            Body::Store { .. } => "STORE",
            Body::FindNode { .. } => "FIND_NODE",
            Body::FindValue { .. } => "FIND_VALUE",
            Body::Leave => "LEAVE",
            Body::Pong => "PONG",
            Body::StoreAck { .. } => "STORE_ACK",
            Body::Nodes { .. } => "NODES",
            Body::Value { .. } => "VALUE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub sender_node_id: NodeId,
    pub sender_address: String,
    /// Chosen by the requester; echoed unchanged in the response.
    pub rpc_id: u64,
    #[serde(flatten)]
    pub body: Body,
}

impl Envelope {
    pub fn sender(&self) -> Contact {
        Contact::new(self.sender_node_id, self.sender_address.clone())
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("invalid frame body: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn encode(envelope: &Envelope) -> Vec<u8> {
    let body = canonical::to_vec(envelope).expect("envelope serializes");
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    frame
}

/// Decodes one frame from the front of `buf`, returning the envelope and the
/// number of bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(Envelope, usize), CodecError> {
    let len = frame_len(buf)?.ok_or(CodecError::Truncated)?;
    if buf.len() < 4 + len {
        return Err(CodecError::Truncated);
    }
    let envelope = serde_json::from_slice(&buf[4..4 + len])?;
    Ok((envelope, 4 + len))
}

/// Body length announced by a frame header, once four bytes are available.
pub fn frame_len(buf: &[u8]) -> Result<Option<usize>, CodecError> {
    if buf.len() < 4 {
        return Ok(None);
    }
    let len = u32::from_be_bytes(buf[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(CodecError::TooLarge(len));
    }
    Ok(Some(len))
}
