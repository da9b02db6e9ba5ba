use std::fmt;
use std::ops::BitXor;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::guid::Guid;

pub const ID_BYTES: usize = 32;
pub const ID_BITS: usize = ID_BYTES * 8;

/// A 256-bit identifier. Node ids and record keys share this space, so a GUID
/// digest is used as a key directly.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(pub [u8; ID_BYTES]);

/// Record keys live in the node id space.
pub type Key = NodeId;

impl NodeId {
    pub const ZERO: NodeId = NodeId([0; ID_BYTES]);

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; ID_BYTES];
        rng.fill_bytes(&mut bytes);
        NodeId(bytes)
    }

    pub fn from_guid(guid: &Guid) -> Self {
        NodeId(guid.digest())
    }

    pub fn distance(&self, other: &NodeId) -> Distance {
        *self ^ *other
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short prefix for logs and traces.
    pub fn short(&self) -> String {
        self.to_hex()[..8].to_string()
    }

    /// A random id whose distance from `self` falls in bucket `bucket`.
    pub fn random_in_bucket<R: RngCore + ?Sized>(&self, bucket: usize, rng: &mut R) -> NodeId {
        debug_assert!(bucket < ID_BITS);
        let mut d = NodeId::random(rng).0;
        // bucket i: distance has its highest set bit at position i (from the lsb)
        let top = ID_BITS - 1 - bucket;
        for bit in 0..top {
            d[bit / 8] &= !(0x80 >> (bit % 8));
        }
        d[top / 8] |= 0x80 >> (top % 8);
        *self ^ Distance(d)
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", self.short())
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid node id {0:?}: expected 64 hex characters")]
pub struct InvalidNodeId(pub String);

impl FromStr for NodeId {
    type Err = InvalidNodeId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != ID_BYTES * 2 || !s.is_ascii() {
            return Err(InvalidNodeId(s.to_string()));
        }
        let mut out = [0u8; ID_BYTES];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| InvalidNodeId(s.to_string()))?;
        }
        Ok(NodeId(out))
    }
}

impl TryFrom<String> for NodeId {
    type Error = InvalidNodeId;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> String {
        id.to_hex()
    }
}

/// XOR distance read as a 256-bit big-endian unsigned integer. The derived
/// `Ord` on the byte array is exactly numeric order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Distance(pub [u8; ID_BYTES]);

impl Distance {
    pub const ZERO: Distance = Distance([0; ID_BYTES]);

    pub fn leading_zeros(&self) -> u32 {
        let mut n = 0;
        for byte in self.0 {
            if byte == 0 {
                n += 8;
            } else {
                return n + byte.leading_zeros();
            }
        }
        n
    }

    /// Index of the k-bucket this distance falls into: 255 for the far half
    /// of the space, 0 for ids differing only in the last bit. `None` for
    /// distance zero.
    pub fn bucket_index(&self) -> Option<usize> {
        let lz = self.leading_zeros() as usize;
        (lz < ID_BITS).then(|| ID_BITS - 1 - lz)
    }
}

impl fmt::Debug for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Distance(")?;
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

impl BitXor for NodeId {
    type Output = Distance;
    fn bitxor(self, rhs: NodeId) -> Distance {
        let mut out = [0u8; ID_BYTES];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i] ^ rhs.0[i];
        }
        Distance(out)
    }
}

impl BitXor for Distance {
    type Output = Distance;
    fn bitxor(self, rhs: Distance) -> Distance {
        let mut out = [0u8; ID_BYTES];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.0[i] ^ rhs.0[i];
        }
        Distance(out)
    }
}

impl BitXor<Distance> for NodeId {
    type Output = NodeId;
    fn bitxor(self, rhs: Distance) -> NodeId {
        NodeId((self ^ NodeId(rhs.0)).0)
    }
}

/// XOR distance between two ids or keys.
pub fn xor_distance(a: &NodeId, b: &NodeId) -> Distance {
    a.distance(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id(bytes: [u8; 32]) -> NodeId {
        NodeId(bytes)
    }

    #[test]
    fn identity_and_unit_distance() {
        let mut one = [0u8; 32];
        one[31] = 1;
        assert_eq!(xor_distance(&NodeId::ZERO, &NodeId::ZERO), Distance::ZERO);
        assert_eq!(xor_distance(&NodeId::ZERO, &id(one)), Distance(one));
        assert_eq!(Distance(one).bucket_index(), Some(0));
        let mut top = [0u8; 32];
        top[0] = 0x80;
        assert_eq!(Distance(top).bucket_index(), Some(255));
        assert_eq!(Distance::ZERO.bucket_index(), None);
    }

    #[test]
    fn random_in_bucket_lands_in_bucket() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let me = NodeId::random(&mut rng);
        for bucket in [0, 1, 7, 8, 100, 254, 255] {
            let other = me.random_in_bucket(bucket, &mut rng);
            assert_eq!(me.distance(&other).bucket_index(), Some(bucket));
        }
    }

    #[test]
    fn hex_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = NodeId::random(&mut rng);
        assert_eq!(a.to_hex().parse::<NodeId>().unwrap(), a);
        assert!("zz".parse::<NodeId>().is_err());
    }

    #[test]
    fn xor_triangle_over_ten_thousand_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let (a, b, c) = (NodeId::random(&mut rng), NodeId::random(&mut rng), NodeId::random(&mut rng));
            let (ab, bc, ac) = (a.distance(&b), b.distance(&c), a.distance(&c));
            assert_eq!(ab ^ bc, ac);
            assert_eq!(ab, b.distance(&a));
            // d(a,c) <= d(a,b) + d(b,c): xor never exceeds the sum
            assert!(ac <= saturating_add(ab, bc));
        }
    }

    fn saturating_add(a: Distance, b: Distance) -> Distance {
        let mut out = [0u8; 32];
        let mut carry = 0u16;
        for i in (0..32).rev() {
            let s = a.0[i] as u16 + b.0[i] as u16 + carry;
            out[i] = s as u8;
            carry = s >> 8;
        }
        if carry > 0 {
            Distance([0xff; 32])
        } else {
            Distance(out)
        }
    }

    fn low(v: u128) -> Distance {
        let mut d = [0u8; 32];
        d[16..].copy_from_slice(&v.to_be_bytes());
        Distance(d)
    }

    proptest! {
        #[test]
        fn distance_order_is_numeric(a in any::<u128>(), b in any::<u128>()) {
            prop_assert_eq!(low(a).cmp(&low(b)), a.cmp(&b));
            prop_assert_eq!(low(a).leading_zeros(), a.leading_zeros() + 128);
            prop_assert_eq!(low(a) ^ low(b), low(a ^ b));
        }
    }
}
