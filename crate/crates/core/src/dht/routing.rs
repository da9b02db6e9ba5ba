//! k-bucket routing table.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::id::{Distance, NodeId, ID_BITS};

/// A peer as known to the routing layer. `address` is opaque to the node and
/// interpreted by whichever transport drives it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Contact {
    pub id: NodeId,
    pub address: String,
}

impl Contact {
    pub fn new(id: NodeId, address: impl Into<String>) -> Self {
        Contact { id, address: address.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub contact: Contact,
    pub last_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BucketUpdate {
    /// New contact appended at the most-recently-seen end.
    Inserted,
    /// Known contact moved to the most-recently-seen end.
    Refreshed,
    /// Bucket is full. The caller should ping `least_recent` and call
    /// [`RoutingTable::evict_and_insert`] only if that ping fails.
    Full { least_recent: Contact },
    /// The contact is the table owner.
    Ignored,
}

#[derive(Debug, Clone)]
pub struct RoutingTable {
    owner: NodeId,
    k: usize,
    /// `buckets[i]` holds contacts whose distance to the owner has its
    /// highest set bit at position `i`; least-recently-seen first.
    buckets: Vec<VecDeque<Entry>>,
}

impl RoutingTable {
    pub fn new(owner: NodeId, k: usize) -> Self {
        assert!(k > 0);
        RoutingTable { owner, k, buckets: vec![VecDeque::new(); ID_BITS] }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn bucket_of(&self, id: &NodeId) -> Option<usize> {
        self.owner.distance(id).bucket_index()
    }

    pub fn update(&mut self, contact: Contact, now: u64) -> BucketUpdate {
        let Some(index) = self.bucket_of(&contact.id) else {
            return BucketUpdate::Ignored;
        };
        let bucket = &mut self.buckets[index];
        if let Some(pos) = bucket.iter().position(|e| e.contact.id == contact.id) {
            bucket.remove(pos);
            bucket.push_back(Entry { contact, last_seen: now });
            return BucketUpdate::Refreshed;
        }
        if bucket.len() < self.k {
            bucket.push_back(Entry { contact, last_seen: now });
            return BucketUpdate::Inserted;
        }
        BucketUpdate::Full { least_recent: bucket.front().expect("full bucket").contact.clone() }
    }

    /// Replaces `stale` with `fresh` after a failed liveness check.
    pub fn evict_and_insert(&mut self, stale: &NodeId, fresh: Contact, now: u64) -> BucketUpdate {
        self.remove(stale);
        self.update(fresh, now)
    }

    pub fn remove(&mut self, id: &NodeId) -> bool {
        let Some(index) = self.bucket_of(id) else {
            return false;
        };
        let bucket = &mut self.buckets[index];
        match bucket.iter().position(|e| e.contact.id == *id) {
            Some(pos) => {
                bucket.remove(pos);
                true
            }
            None => false,
        }
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.bucket_of(id).is_some_and(|i| self.buckets[i].iter().any(|e| e.contact.id == *id))
    }

    pub fn bucket(&self, index: usize) -> &VecDeque<Entry> {
        &self.buckets[index]
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.iter().all(VecDeque::is_empty)
    }

    pub fn contacts(&self) -> impl Iterator<Item = &Contact> {
        self.buckets.iter().flat_map(|b| b.iter().map(|e| &e.contact))
    }

    /// Up to `n` known contacts ordered by ascending distance to `target`.
    pub fn closest(&self, target: &NodeId, n: usize) -> Vec<Contact> {
        let mut all: Vec<(Distance, &Contact)> = self.contacts().map(|c| (c.id.distance(target), c)).collect();
        all.sort_by_key(|a| a.0);
        all.into_iter().take(n).map(|(_, c)| c.clone()).collect()
    }

    /// Index of the nearest non-empty bucket, if any.
    pub fn nearest_bucket(&self) -> Option<usize> {
        self.buckets.iter().position(|b| !b.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn contact(id: NodeId) -> Contact {
        Contact::new(id, format!("sim:{}", id.short()))
    }

    #[test]
    fn insert_and_refresh() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let owner = NodeId::random(&mut rng);
        let mut table = RoutingTable::new(owner, 8);
        let a = contact(NodeId::random(&mut rng));
        assert_eq!(table.update(a.clone(), 1), BucketUpdate::Inserted);
        assert_eq!(table.len(), 1);
        let b = contact(owner.random_in_bucket(owner.distance(&a.id).bucket_index().unwrap(), &mut rng));
        table.update(b.clone(), 2);
        assert_eq!(table.update(a.clone(), 3), BucketUpdate::Refreshed);
        assert_eq!(table.len(), 2);
        let bucket = table.bucket(owner.distance(&a.id).bucket_index().unwrap());
        assert_eq!(bucket.back().unwrap().contact, a);
        assert_eq!(bucket.front().unwrap().contact, b);
        assert_eq!(table.update(contact(owner), 4), BucketUpdate::Ignored);
    }

    #[test]
    fn full_bucket_reports_least_recent_and_evicts_on_request() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let owner = NodeId::random(&mut rng);
        let k = 4;
        let mut table = RoutingTable::new(owner, k);
        let ids: Vec<_> = (0..=k).map(|_| contact(owner.random_in_bucket(200, &mut rng))).collect();
        for (t, c) in ids[..k].iter().enumerate() {
            assert_eq!(table.update(c.clone(), t as u64), BucketUpdate::Inserted);
        }
        assert_eq!(table.update(ids[k].clone(), 10), BucketUpdate::Full { least_recent: ids[0].clone() });
        assert!(!table.contains(&ids[k].id));
        table.evict_and_insert(&ids[0].id, ids[k].clone(), 11);
        assert!(!table.contains(&ids[0].id));
        assert!(table.contains(&ids[k].id));
        assert_eq!(table.bucket(200).len(), k);
    }

    #[test]
    fn bucket_invariant_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let owner = NodeId::random(&mut rng);
        let mut table = RoutingTable::new(owner, 8);
        for t in 0..2000 {
            table.update(contact(NodeId::random(&mut rng)), t);
        }
        for i in 0..ID_BITS {
            let bucket = table.bucket(i);
            assert!(bucket.len() <= 8);
            for e in bucket {
                assert_eq!(owner.distance(&e.contact.id).leading_zeros() as usize, 255 - i);
            }
            assert!(bucket.iter().zip(bucket.iter().skip(1)).all(|(a, b)| a.last_seen <= b.last_seen));
        }
    }

    #[test]
    fn closest_is_sorted_by_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let owner = NodeId::random(&mut rng);
        let mut table = RoutingTable::new(owner, 8);
        for t in 0..300 {
            table.update(contact(NodeId::random(&mut rng)), t);
        }
        let target = NodeId::random(&mut rng);
        let got = table.closest(&target, 8);
        assert_eq!(got.len(), 8);
        let mut all: Vec<_> = table.contacts().cloned().collect();
        all.sort_by_key(|c| c.id.distance(&target));
        assert_eq!(got, all[..8].to_vec());
    }
}
