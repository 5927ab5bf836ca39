//! Traditional prefetchers over the global linearized block address space,
//! all behind one interface: observe the demand stream, then emit an ordered
//! candidate list within a block budget.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use crate::datastore::{BlockId, LbaSpace, QueryRecord};
use crate::error::{Error, Result};

pub type Lba = u64;

/// Common surface of the traditional prefetchers: observe each query's
/// demanded blocks, then produce up to `budget` candidate blocks.
pub trait Prefetcher {
    fn name(&self) -> &'static str;
    /// Feeds one query's demand set (ascending block order).
    fn observe(&mut self, res: &BTreeSet<BlockId>, space: &LbaSpace);
    /// Ordered prefetch candidates, at most `budget` blocks, no duplicates.
    fn candidates(&mut self, budget: usize, space: &LbaSpace) -> Vec<BlockId>;
}

// ---------------------------------------------------------------------------
// Lookahead
// ---------------------------------------------------------------------------

/// One-block lookahead extended to a block budget: prefetches the addresses
/// immediately following the last demanded one, clipped at the database end.
#[derive(Debug, Default)]
pub struct Lookahead {
    last: Option<Lba>,
}

/// The `budget` addresses after `last_lba`, clipped to the address space.
pub fn lookahead_candidates(last_lba: Lba, budget: usize, total: u64) -> Vec<Lba> {
    (last_lba + 1..=last_lba.saturating_add(budget as u64))
        .take_while(|&a| a < total)
        .collect()
}

impl Lookahead {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Prefetcher for Lookahead {
    fn name(&self) -> &'static str {
        "lookahead"
    }

    fn observe(&mut self, res: &BTreeSet<BlockId>, space: &LbaSpace) {
        if let Some(&last) = res.iter().next_back() {
            self.last = Some(space.lba(last));
        }
    }

    fn candidates(&mut self, budget: usize, space: &LbaSpace) -> Vec<BlockId> {
        let Some(last) = self.last else {
            return Vec::new();
        };
        lookahead_candidates(last, budget, space.total())
            .into_iter()
            .filter_map(|a| space.block(a))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Naive delta-histogram prefetcher
// ---------------------------------------------------------------------------

/// Histogram of address deltas between consecutive demanded blocks.
#[derive(Debug, Default)]
pub struct DeltaHistogram {
    counts: BTreeMap<i64, u64>,
}

impl DeltaHistogram {
    pub fn record(&mut self, delta: i64) {
        *self.counts.entry(delta).or_insert(0) += 1;
    }

    pub fn count(&self, delta: i64) -> u64 {
        self.counts.get(&delta).copied().unwrap_or(0)
    }

    /// Most frequent delta; ties prefer the smallest magnitude, then the
    /// positive sign. Empty histogram yields None.
    pub fn dominant(&self) -> Option<i64> {
        self.counts
            .iter()
            .max_by(|(da, ca), (db, cb)| ca.cmp(cb).then(db.abs().cmp(&da.abs())).then(da.cmp(db)))
            .map(|(&d, _)| d)
    }
}

/// Emits `last + d*, last + 2 d*, ...` for the dominant delta d*, clipped to
/// the valid range. A zero dominant delta would only generate duplicates of
/// the last address, so it emits nothing.
pub fn naive_candidates(hist: &DeltaHistogram, last_lba: Lba, n: usize, total: u64) -> Vec<Lba> {
    let Some(d) = hist.dominant() else {
        return Vec::new();
    };
    if d == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    let mut cur = last_lba as i64;
    for _ in 0..n {
        cur += d;
        if cur < 0 || cur as u64 >= total {
            break;
        }
        out.push(cur as Lba);
    }
    out
}

#[derive(Debug, Default)]
pub struct NaivePrefetcher {
    hist: DeltaHistogram,
    last: Option<Lba>,
}

impl NaivePrefetcher {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Prefetcher for NaivePrefetcher {
    fn name(&self) -> &'static str {
        "naive"
    }

    fn observe(&mut self, res: &BTreeSet<BlockId>, space: &LbaSpace) {
        for &b in res {
            let lba = space.lba(b);
            if let Some(prev) = self.last {
                self.hist.record(lba as i64 - prev as i64);
            }
            self.last = Some(lba);
        }
    }

    fn candidates(&mut self, budget: usize, space: &LbaSpace) -> Vec<BlockId> {
        let Some(last) = self.last else {
            return Vec::new();
        };
        naive_candidates(&self.hist, last, budget, space.total())
            .into_iter()
            .filter_map(|a| space.block(a))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Random readahead
// ---------------------------------------------------------------------------

/// Sliding window of recent demanded addresses plus per-extent presence
/// counts. An extent fires once its distinct window-resident blocks reach
/// the trigger threshold, and re-arms only after presence drops below it.
#[derive(Debug)]
pub struct RandReadahead {
    extent_size: u64,
    window_len: usize,
    trigger: usize,
    window: VecDeque<Lba>,
    multiplicity: HashMap<Lba, u32>,
    extent_presence: HashMap<u64, usize>,
    fired: BTreeSet<u64>,
}

impl RandReadahead {
    /// `extent_size` is in blocks (twice MaxParSize in the harness),
    /// `trigger` is the distinct-block threshold, `window_len` the demand
    /// window length.
    pub fn new(extent_size: u64, trigger: usize, window_len: usize) -> Result<Self> {
        if extent_size == 0 {
            return Err(Error::config("extent size must be positive"));
        }
        if trigger == 0 || window_len == 0 {
            return Err(Error::config("trigger and window length must be positive"));
        }
        Ok(RandReadahead {
            extent_size,
            window_len,
            trigger,
            window: VecDeque::new(),
            multiplicity: HashMap::new(),
            extent_presence: HashMap::new(),
            fired: BTreeSet::new(),
        })
    }

    fn extent_of(&self, lba: Lba) -> u64 {
        lba / self.extent_size
    }

    fn push(&mut self, lba: Lba) {
        self.window.push_back(lba);
        let m = self.multiplicity.entry(lba).or_insert(0);
        *m += 1;
        if *m == 1 {
            *self.extent_presence.entry(self.extent_of(lba)).or_insert(0) += 1;
        }
        while self.window.len() > self.window_len {
            let old = self.window.pop_front().expect("nonempty");
            let m = self.multiplicity.get_mut(&old).expect("tracked");
            *m -= 1;
            if *m == 0 {
                self.multiplicity.remove(&old);
                let e = self.extent_of(old);
                let p = self.extent_presence.get_mut(&e).expect("tracked");
                *p -= 1;
                if *p < self.trigger {
                    self.fired.remove(&e);
                }
                if *p == 0 {
                    self.extent_presence.remove(&e);
                }
            }
        }
    }
}

impl Prefetcher for RandReadahead {
    fn name(&self) -> &'static str {
        "rand-readahead"
    }

    fn observe(&mut self, res: &BTreeSet<BlockId>, space: &LbaSpace) {
        for &b in res {
            self.push(space.lba(b));
        }
    }

    fn candidates(&mut self, budget: usize, space: &LbaSpace) -> Vec<BlockId> {
        let mut ready: Vec<u64> = self
            .extent_presence
            .iter()
            .filter(|(e, &p)| p >= self.trigger && !self.fired.contains(e))
            .map(|(&e, _)| e)
            .collect();
        ready.sort_unstable();
        let mut out = Vec::new();
        for e in ready {
            if out.len() >= budget {
                break;
            }
            self.fired.insert(e);
            let start = e * self.extent_size;
            for a in start..start + self.extent_size {
                if out.len() >= budget {
                    break;
                }
                if let Some(b) = space.block(a) {
                    out.push(b);
                }
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Candidate lists supplied from a file
// ---------------------------------------------------------------------------

/// Replays externally computed prefetch candidates: one JSON line per test
/// query, each an array of `[table_id, block_no]` pairs. Lets foreign
/// prefetchers join a comparison without being reimplemented.
#[derive(Debug)]
pub struct FileCandidates {
    lists: Vec<Vec<BlockId>>,
    cursor: usize,
}

impl FileCandidates {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        let mut lists = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let pairs: Vec<(u32, u32)> = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            lists.push(pairs.into_iter().map(|(t, b)| BlockId::new(t, b)).collect());
        }
        Ok(FileCandidates { lists, cursor: 0 })
    }
}

impl Prefetcher for FileCandidates {
    fn name(&self) -> &'static str {
        "file"
    }

    fn observe(&mut self, _res: &BTreeSet<BlockId>, _space: &LbaSpace) {}

    fn candidates(&mut self, budget: usize, _space: &LbaSpace) -> Vec<BlockId> {
        let list = match self.lists.get(self.cursor) {
            Some(l) => l.iter().take(budget).copied().collect(),
            None => Vec::new(),
        };
        self.cursor += 1;
        list
    }
}

/// Feeds one query record to a prefetcher (ignores empty records).
pub fn observe_record(p: &mut dyn Prefetcher, rec: &QueryRecord, space: &LbaSpace) {
    if !rec.accessed_blocks.is_empty() {
        p.observe(&rec.accessed_blocks, space);
    }
}
