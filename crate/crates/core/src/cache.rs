//! LRU block cache with a prefetch entry point, hit/miss accounting, and a
//! parametric I/O cost model (seek per contiguous run, transfer per block)
//! standing in for disk timing.
//!
//! Demand accesses count hits and misses; prefetch insertions count neither,
//! and their I/O cost accumulates separately so the reported I/O time covers
//! demand misses only (prefetch happens in the idle gap between queries).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::datastore::{BlockId, Database};
use crate::error::{Error, Result};

/// LRU-ordered resident set with hit/miss counters.
#[derive(Debug, Clone)]
pub struct CacheState {
    capacity: usize,
    stamp: u64,
    resident: HashMap<BlockId, u64>,
    order: BTreeMap<u64, BlockId>,
    pub hits: u64,
    pub misses: u64,
}

/// Outcome of one query's demand access.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryAccess {
    pub hits: u64,
    pub misses: u64,
    pub io_cost: f64,
}

impl CacheState {
    pub fn new(capacity: usize) -> Self {
        CacheState {
            capacity,
            stamp: 0,
            resident: HashMap::new(),
            order: BTreeMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    /// Capacity in blocks derived from byte sizes.
    pub fn with_bytes(cache_bytes: u64, block_bytes: u64) -> Result<Self> {
        if block_bytes == 0 {
            return Err(Error::config("block size must be positive"));
        }
        let capacity = (cache_bytes / block_bytes) as usize;
        if capacity == 0 {
            return Err(Error::config(format!(
                "cache of {cache_bytes} bytes holds no {block_bytes}-byte blocks"
            )));
        }
        Ok(CacheState::new(capacity))
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.resident.contains_key(&b)
    }

    /// Resident blocks ordered least- to most-recently used.
    pub fn lru_order(&self) -> Vec<BlockId> {
        self.order.values().copied().collect()
    }

    fn touch(&mut self, b: BlockId) {
        self.stamp += 1;
        if let Some(old) = self.resident.insert(b, self.stamp) {
            self.order.remove(&old);
        }
        self.order.insert(self.stamp, b);
    }

    fn insert(&mut self, b: BlockId) {
        if self.capacity == 0 {
            return;
        }
        if !self.resident.contains_key(&b) && self.resident.len() >= self.capacity {
            // Evict the least recently used entry.
            if let Some((&oldest, &victim)) = self.order.iter().next() {
                self.order.remove(&oldest);
                self.resident.remove(&victim);
            }
        }
        self.touch(b);
    }

    /// Demand access of one query's block set. Blocks are processed in
    /// ascending (table, block) order: hits refresh recency, then all
    /// missing blocks load most-recently-used with LRU eviction. Returns the
    /// per-query tallies; the miss set's I/O cost is charged via `io`.
    pub fn access_blocks(
        &mut self,
        io: &IoCostModel,
        res: &BTreeSet<BlockId>,
        db: &Database,
    ) -> Result<QueryAccess> {
        for &b in res {
            if !db.contains(b) {
                return Err(Error::integrity(format!(
                    "query accesses block {b} outside the database"
                )));
            }
        }
        let mut missing = BTreeSet::new();
        for &b in res {
            if self.resident.contains_key(&b) {
                self.hits += 1;
                self.touch(b);
            } else {
                self.misses += 1;
                missing.insert(b);
            }
        }
        for &b in &missing {
            self.insert(b);
        }
        Ok(QueryAccess {
            hits: (res.len() - missing.len()) as u64,
            misses: missing.len() as u64,
            io_cost: io.cost(&missing),
        })
    }

    /// Inserts blocks in list order if absent (refreshing recency either
    /// way), evicting LRU entries as needed. Returns the blocks actually
    /// fetched (those not already resident); no hit/miss counting.
    pub fn prefetch_blocks(&mut self, blocks: &[BlockId]) -> Vec<BlockId> {
        let mut fetched = Vec::new();
        for &b in blocks {
            if !self.resident.contains_key(&b) {
                fetched.push(b);
            }
            self.insert(b);
        }
        fetched
    }

    pub fn hit_ratio(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

/// Abstract I/O cost: one seek per maximal run of consecutive blocks within
/// a table, one transfer per block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IoCostModel {
    pub seek_cost: f64,
    pub transfer_cost: f64,
}

impl Default for IoCostModel {
    fn default() -> Self {
        IoCostModel {
            seek_cost: 10.0,
            transfer_cost: 1.0,
        }
    }
}

impl IoCostModel {
    /// `cost = runs * seek + blocks * transfer` where runs are maximal
    /// sequences of consecutive (table, block) ids.
    pub fn cost(&self, blocks: &BTreeSet<BlockId>) -> f64 {
        let mut runs = 0u64;
        let mut prev: Option<BlockId> = None;
        for &b in blocks {
            let contiguous = match prev {
                Some(p) => p.table == b.table && p.block + 1 == b.block,
                None => false,
            };
            if !contiguous {
                runs += 1;
            }
            prev = Some(b);
        }
        runs as f64 * self.seek_cost + blocks.len() as f64 * self.transfer_cost
    }
}

/// Eq.-style coverage: the fraction of the no-prefetch system's misses a
/// prefetcher eliminated. Negative when prefetching evicted useful blocks.
/// Undefined (None) when the reference system had no misses.
pub fn coverage(misses_np: u64, misses: u64) -> Option<f64> {
    if misses_np == 0 {
        None
    } else {
        Some((misses_np as f64 - misses as f64) / misses_np as f64)
    }
}

/// Demand-miss I/O relative to the no-prefetch system; 1 means no
/// improvement. Undefined (None) when the reference cost is zero.
pub fn relative_io(t_pr: f64, t_np: f64) -> Option<f64> {
    if t_np > 0.0 {
        Some(t_pr / t_np)
    } else {
        None
    }
}

/// Per-system accounting of one replay.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub hits: u64,
    pub misses: u64,
    pub t_io: f64,
    pub prefetched_blocks: u64,
    pub prefetch_io: f64,
}

impl MetricsAccumulator {
    pub fn record_access(&mut self, access: &QueryAccess) {
        self.hits += access.hits;
        self.misses += access.misses;
        self.t_io += access.io_cost;
    }

    pub fn record_prefetch(&mut self, fetched: &[BlockId], io: &IoCostModel) {
        self.prefetched_blocks += fetched.len() as u64;
        self.prefetch_io += io.cost(&fetched.iter().copied().collect());
    }

    pub fn hit_ratio(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}
