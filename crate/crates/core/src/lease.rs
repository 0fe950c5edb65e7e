//! Exactly-once work distribution for annotation queues.
//!
//! A queue is a named, ordered list of pending items supplied by the caller
//! (e.g. the unlabeled images of one audit pass). Handing out an item takes
//! a lease on it for one annotator; while the lease is live nobody else
//! receives that item. Expired leases fall back into the queue.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_LEASE_SECONDS: i64 = 600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Lease {
    pub queue: String,
    pub item: String,
    pub annotator: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct LeaseTable {
    duration: Duration,
    // (queue, item) -> lease
    leases: BTreeMap<(String, String), Lease>,
}

impl Default for LeaseTable {
    fn default() -> Self {
        Self::new(Duration::seconds(DEFAULT_LEASE_SECONDS))
    }
}

impl LeaseTable {
    pub fn new(duration: Duration) -> Self {
        LeaseTable {
            duration,
            leases: BTreeMap::new(),
        }
    }

    pub fn duration(&self) -> Duration {
        self.duration
    }

    fn live(&self, queue: &str, item: &str, now: DateTime<Utc>) -> Option<&Lease> {
        self.leases
            .get(&(queue.to_string(), item.to_string()))
            .filter(|l| l.expires_at > now)
    }

    /// Next pending item for `annotator`. An item the annotator already
    /// holds is returned again (same expiry); otherwise the first item
    /// without a live lease is leased. `None` when nothing is available.
    pub fn next<'a, I>(&mut self, queue: &str, annotator: &str, pending: I, now: DateTime<Utc>) -> Option<Lease>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut free = None;
        for item in pending {
            match self.live(queue, item, now) {
                Some(l) if l.annotator == annotator => return Some(l.clone()),
                Some(_) => {}
                None => {
                    if free.is_none() {
                        free = Some(item);
                    }
                }
            }
        }
        let item = free?;
        let lease = Lease {
            queue: queue.to_string(),
            item: item.to_string(),
            annotator: annotator.to_string(),
            expires_at: now + self.duration,
        };
        self.leases
            .insert((queue.to_string(), item.to_string()), lease.clone());
        Some(lease)
    }

    /// Fails when another annotator holds a live lease on the item.
    /// Unleased items may be submitted directly.
    pub fn check(&self, queue: &str, item: &str, annotator: &str, now: DateTime<Utc>) -> Result<()> {
        match self.live(queue, item, now) {
            Some(l) if l.annotator != annotator => Err(Error::LeaseNotHeld(item.to_string())),
            _ => Ok(()),
        }
    }

    /// Drops the lease after the item was completed.
    pub fn complete(&mut self, queue: &str, item: &str) {
        self.leases.remove(&(queue.to_string(), item.to_string()));
    }

    pub fn purge_expired(&mut self, now: DateTime<Utc>) {
        self.leases.retain(|_, l| l.expires_at > now);
    }

    pub fn held_by(&self, annotator: &str, now: DateTime<Utc>) -> Vec<&Lease> {
        self.leases
            .values()
            .filter(|l| l.annotator == annotator && l.expires_at > now)
            .collect()
    }
}
