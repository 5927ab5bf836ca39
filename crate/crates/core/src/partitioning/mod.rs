//! Affinity-graph maintenance, bounded-size repartitioning, and matrix
//! partition encodings.
//!
//! The affinity graph accumulates co-access weight 1/l_p per block pair per
//! query. When a batch of l_p queries completes, the repartitioner moves
//! clumps of strongly co-accessed blocks between partitions until no
//! partition's cross-partition load exceeds the dynamic threshold θ; θ only
//! grows when no feasible move exists. Weights decay by a constant factor
//! after each repartitioning so stale co-access fades without vanishing.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datastore::{BlockId, Database, TableId};
use crate::encoding::EncodingStore;
use crate::error::{Error, Result};

pub type PartitionId = u32;

/// Weighted undirected co-access graph. Nodes appear on first access only.
#[derive(Debug, Clone, Default)]
pub struct AffinityGraph {
    adj: BTreeMap<BlockId, BTreeMap<BlockId, f64>>,
}

impl AffinityGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.values().map(|n| n.len()).sum::<usize>() / 2
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.adj.contains_key(&b)
    }

    pub fn weight(&self, u: BlockId, v: BlockId) -> f64 {
        self.adj
            .get(&u)
            .and_then(|n| n.get(&v))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn neighbors(&self, u: BlockId) -> impl Iterator<Item = (BlockId, f64)> + '_ {
        self.adj
            .get(&u)
            .into_iter()
            .flat_map(|n| n.iter().map(|(&v, &w)| (v, w)))
    }

    /// All edges as (u, v, w) with u < v.
    pub fn edges(&self) -> impl Iterator<Item = (BlockId, BlockId, f64)> + '_ {
        self.adj.iter().flat_map(|(&u, nbrs)| {
            nbrs.iter()
                .filter(move |(&v, _)| u < v)
                .map(move |(&v, &w)| (u, v, w))
        })
    }

    /// Registers one query's block set: adds missing nodes and bumps every
    /// pair's edge weight by 1/l_p.
    pub fn observe_query(&mut self, res: &BTreeSet<BlockId>, l_p: u32) {
        if res.is_empty() {
            return;
        }
        let inc = 1.0 / l_p.max(1) as f64;
        let blocks: Vec<BlockId> = res.iter().copied().collect();
        for &b in &blocks {
            self.adj.entry(b).or_default();
        }
        for i in 0..blocks.len() {
            for j in (i + 1)..blocks.len() {
                let (u, v) = (blocks[i], blocks[j]);
                *self.adj.get_mut(&u).unwrap().entry(v).or_insert(0.0) += inc;
                *self.adj.get_mut(&v).unwrap().entry(u).or_insert(0.0) += inc;
            }
        }
    }

    /// Scales every edge weight by `factor`, 0 < factor < 1.
    pub fn decay_weights(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::config(format!(
                "decay factor must be in (0, 1), got {factor}"
            )));
        }
        for nbrs in self.adj.values_mut() {
            for w in nbrs.values_mut() {
                *w *= factor;
            }
        }
        Ok(())
    }
}

/// A bounded group of blocks; the unit of prediction and prefetching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub id: PartitionId,
    pub blocks: BTreeSet<BlockId>,
}

/// One clump migration performed by the repartitioner.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MigrationRecord {
    pub from: PartitionId,
    pub to: PartitionId,
    pub blocks: Vec<BlockId>,
    /// Load of the overloaded source partition that triggered the move.
    pub trigger_load: f64,
}

/// The fixed-size set of partitions plus the dynamic load threshold.
#[derive(Debug, Clone)]
pub struct PartitionSet {
    partitions: Vec<Partition>,
    assignment: BTreeMap<BlockId, PartitionId>,
    pub max_par_size: usize,
    pub k_w: f64,
    pub theta: f64,
}

impl PartitionSet {
    /// Packs consecutive blocks of each table into partitions filled to
    /// `fill_frac * max_par_size`, then appends ceil(5%) empty spares.
    pub fn initial(
        db: &Database,
        max_par_size: usize,
        fill_frac: f64,
        theta_init: f64,
        k_w: f64,
    ) -> Result<Self> {
        if max_par_size < 1 {
            return Err(Error::config("MaxParSize must be >= 1"));
        }
        if !(0.0 < fill_frac && fill_frac <= 1.0) {
            return Err(Error::config(format!(
                "fill fraction must be in (0, 1], got {fill_frac}"
            )));
        }
        if db.total_blocks() == 0 {
            return Err(Error::config("database has no blocks to partition"));
        }
        let fill = ((fill_frac * max_par_size as f64).floor() as usize).max(1);

        let mut partitions = Vec::new();
        let mut assignment = BTreeMap::new();
        for t in 0..db.n_tables() as TableId {
            let nb = db.block_count(t);
            let mut b = 0u32;
            while b < nb {
                let id = partitions.len() as PartitionId;
                let mut blocks = BTreeSet::new();
                for _ in 0..fill {
                    if b >= nb {
                        break;
                    }
                    let bid = BlockId::new(t, b);
                    blocks.insert(bid);
                    assignment.insert(bid, id);
                    b += 1;
                }
                partitions.push(Partition { id, blocks });
            }
        }
        let spares = ((partitions.len() as f64) * 0.05).ceil() as usize;
        for _ in 0..spares.max(1) {
            let id = partitions.len() as PartitionId;
            partitions.push(Partition {
                id,
                blocks: BTreeSet::new(),
            });
        }

        Ok(PartitionSet {
            partitions,
            assignment,
            max_par_size,
            k_w,
            theta: theta_init,
        })
    }

    /// Builds a set from explicit block groups plus `spares` empty
    /// partitions appended at the end.
    pub fn from_groups(
        groups: Vec<Vec<BlockId>>,
        spares: usize,
        max_par_size: usize,
        theta: f64,
        k_w: f64,
    ) -> Result<Self> {
        if max_par_size < 1 {
            return Err(Error::config("MaxParSize must be >= 1"));
        }
        let mut partitions = Vec::new();
        let mut assignment = BTreeMap::new();
        for group in groups {
            let id = partitions.len() as PartitionId;
            let mut blocks = BTreeSet::new();
            for b in group {
                if assignment.insert(b, id).is_some() {
                    return Err(Error::integrity(format!("block {b} assigned twice")));
                }
                blocks.insert(b);
            }
            if blocks.len() > max_par_size {
                return Err(Error::config(format!(
                    "group {id} holds {} blocks, max is {max_par_size}",
                    blocks.len()
                )));
            }
            partitions.push(Partition { id, blocks });
        }
        for _ in 0..spares {
            let id = partitions.len() as PartitionId;
            partitions.push(Partition {
                id,
                blocks: BTreeSet::new(),
            });
        }
        Ok(PartitionSet {
            partitions,
            assignment,
            max_par_size,
            k_w,
            theta,
        })
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }

    pub fn partition(&self, id: PartitionId) -> Option<&Partition> {
        self.partitions.get(id as usize)
    }

    pub fn partition_of(&self, b: BlockId) -> Option<PartitionId> {
        self.assignment.get(&b).copied()
    }

    /// Distinct partitions covering a block set, in ascending id order.
    pub fn partitions_of(&self, blocks: &BTreeSet<BlockId>) -> BTreeSet<PartitionId> {
        blocks
            .iter()
            .filter_map(|b| self.partition_of(*b))
            .collect()
    }

    /// Pure co-access load of one partition: the weighted sum of edges that
    /// cross its boundary, scaled by k_w. Individual block access counts do
    /// not contribute.
    pub fn partition_load(&self, id: PartitionId, g: &AffinityGraph) -> f64 {
        let Some(p) = self.partition(id) else {
            return 0.0;
        };
        let mut acc = 0.0;
        for &v in &p.blocks {
            for (u, w) in g.neighbors(v) {
                if self.assignment.get(&u) != Some(&id) {
                    acc += w;
                }
            }
        }
        acc * self.k_w
    }

    fn loads(&self, g: &AffinityGraph) -> Vec<f64> {
        (0..self.partitions.len())
            .map(|i| self.partition_load(i as PartitionId, g))
            .collect()
    }

    fn move_blocks(&mut self, blocks: &BTreeSet<BlockId>, dest: PartitionId) {
        for &b in blocks {
            if let Some(old) = self.assignment.insert(b, dest) {
                self.partitions[old as usize].blocks.remove(&b);
            }
            self.partitions[dest as usize].blocks.insert(b);
        }
    }

    /// Size of `dest` if the clump migrated into it.
    fn size_after(&self, dest: PartitionId, clump: &BTreeSet<BlockId>) -> usize {
        let p = &self.partitions[dest as usize];
        p.blocks.union(clump).count()
    }

    /// Load of `dest` if the clump migrated into it.
    fn load_after(&self, dest: PartitionId, clump: &BTreeSet<BlockId>, g: &AffinityGraph) -> f64 {
        let p = &self.partitions[dest as usize];
        let members: BTreeSet<BlockId> = p.blocks.union(clump).copied().collect();
        let mut acc = 0.0;
        for &v in &members {
            for (u, w) in g.neighbors(v) {
                if !members.contains(&u) {
                    acc += w;
                }
            }
        }
        acc * self.k_w
    }

    /// Co-access weight between the clump and the rest of `dest`.
    fn coaccess(&self, dest: PartitionId, clump: &BTreeSet<BlockId>, g: &AffinityGraph) -> f64 {
        let p = &self.partitions[dest as usize];
        let mut acc = 0.0;
        for &v in clump {
            for (u, w) in g.neighbors(v) {
                if !clump.contains(&u) && p.blocks.contains(&u) {
                    acc += w;
                }
            }
        }
        acc
    }

    /// Rebalances until no partition load exceeds θ, migrating clumps of
    /// co-accessed blocks. θ is escalated (x1.5) whenever no feasible move
    /// exists, which guarantees termination; within one call θ never
    /// decreases. Returns the migration log.
    pub fn repartition(&mut self, g: &AffinityGraph) -> Vec<MigrationRecord> {
        let mut log = Vec::new();
        // Safety valve: escalate θ if a pathological instance keeps cycling
        // feasible moves without resolving the overload.
        let mut moves_since_escalation = 0usize;
        let move_budget = 8 * self.partitions.len().max(8);

        loop {
            let loads = self.loads(g);
            let mut src: Option<(PartitionId, f64)> = None;
            for (i, &l) in loads.iter().enumerate() {
                if l > self.theta && src.is_none_or(|(_, best)| l > best) {
                    src = Some((i as PartitionId, l));
                }
            }
            let Some((src, src_load)) = src else { break };

            if moves_since_escalation >= move_budget {
                self.theta *= 1.5;
                moves_since_escalation = 0;
                continue;
            }

            match self.migrate_clump(src, src_load, g) {
                Some(record) => {
                    moves_since_escalation += 1;
                    log.push(record);
                }
                None => {
                    self.theta *= 1.5;
                    moves_since_escalation = 0;
                }
            }
        }
        log
    }

    /// Builds a clump from the overloaded partition and migrates it to the
    /// best destination, if any becomes feasible while growing.
    fn migrate_clump(
        &mut self,
        src: PartitionId,
        src_load: f64,
        g: &AffinityGraph,
    ) -> Option<MigrationRecord> {
        // Seed: the source node with the largest incident cross-partition
        // weight; ties broken by lowest block id.
        let src_blocks = &self.partitions[src as usize].blocks;
        let mut seed: Option<(BlockId, f64)> = None;
        for &v in src_blocks {
            let mut cross = 0.0;
            for (u, w) in g.neighbors(v) {
                if self.assignment.get(&u) != Some(&src) {
                    cross += w;
                }
            }
            if seed.is_none_or(|(_, best)| cross > best) {
                seed = Some((v, cross));
            }
        }
        let (seed, _) = seed?;

        let mut clump: BTreeSet<BlockId> = BTreeSet::new();
        clump.insert(seed);
        // Attachment weight of every neighbor of the clump.
        let mut attachment: BTreeMap<BlockId, f64> = BTreeMap::new();
        for (u, w) in g.neighbors(seed) {
            *attachment.entry(u).or_insert(0.0) += w;
        }

        loop {
            if let Some(dest) = self.best_destination(&clump, g) {
                let blocks: Vec<BlockId> = clump.iter().copied().collect();
                self.move_blocks(&clump, dest);
                return Some(MigrationRecord {
                    from: src,
                    to: dest,
                    blocks,
                    trigger_load: src_load,
                });
            }
            if clump.len() >= self.max_par_size {
                return None;
            }
            // Grow by the neighbor most attached to the clump (inside or
            // outside the source partition); ties by lowest block id.
            let next = attachment
                .iter()
                .max_by(|a, b| {
                    a.1.partial_cmp(b.1)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(b.0.cmp(a.0))
                })
                .map(|(&b, _)| b)?;
            attachment.remove(&next);
            clump.insert(next);
            for (u, w) in g.neighbors(next) {
                if !clump.contains(&u) {
                    *attachment.entry(u).or_insert(0.0) += w;
                }
            }
        }
    }

    /// Feasible destination maximizing co-access with the clump; falls back
    /// to an empty spare if no co-accessed partition qualifies. Feasibility:
    /// resulting size within MaxParSize and resulting load within θ.
    fn best_destination(
        &self,
        clump: &BTreeSet<BlockId>,
        g: &AffinityGraph,
    ) -> Option<PartitionId> {
        let mut best: Option<(PartitionId, f64)> = None;
        for p in &self.partitions {
            if p.blocks.is_empty() || p.blocks.is_subset(clump) {
                continue;
            }
            let score = self.coaccess(p.id, clump, g);
            if score <= 0.0 {
                continue;
            }
            if let Some((_, s)) = best {
                if score <= s {
                    continue;
                }
            }
            if self.size_after(p.id, clump) <= self.max_par_size
                && self.load_after(p.id, clump, g) <= self.theta
            {
                best = Some((p.id, score));
            }
        }
        if let Some((id, _)) = best {
            return Some(id);
        }
        // Spare: first empty partition the clump fits into within θ.
        if clump.len() <= self.max_par_size {
            for p in &self.partitions {
                if p.blocks.is_empty() && self.load_after(p.id, clump, g) <= self.theta {
                    return Some(p.id);
                }
            }
        }
        None
    }

    /// One line per block: `partition_id table_id block_no`. A header
    /// comment records the partition count so empty spares survive reload.
    pub fn save_map(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "# partitions={} max_par_size={} theta={} k_w={}",
            self.partitions.len(),
            self.max_par_size,
            self.theta,
            self.k_w
        )?;
        for p in &self.partitions {
            for b in &p.blocks {
                writeln!(w, "{} {} {}", p.id, b.table, b.block)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_map(
        path: impl AsRef<Path>,
        max_par_size: usize,
        theta: f64,
        k_w: f64,
    ) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut declared_len: Option<usize> = None;
        let mut entries: Vec<(PartitionId, BlockId)> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed.starts_with('#') {
                for token in trimmed.trim_start_matches('#').split_whitespace() {
                    if let Some(v) = token.strip_prefix("partitions=") {
                        declared_len = v.parse().ok();
                    }
                }
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let parse = |s: Option<&str>| -> Result<u32> {
                s.ok_or(Error::Parse {
                    line: i + 1,
                    msg: "expected `partition table block`".into(),
                })?
                .parse()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("{e}"),
                })
            };
            let pid = parse(parts.next())?;
            let table = parse(parts.next())?;
            let block = parse(parts.next())?;
            entries.push((pid, BlockId::new(table, block)));
        }
        let n = declared_len.unwrap_or_else(|| {
            entries
                .iter()
                .map(|(p, _)| *p as usize + 1)
                .max()
                .unwrap_or(0)
        });
        let mut set = PartitionSet {
            partitions: (0..n)
                .map(|id| Partition {
                    id: id as PartitionId,
                    blocks: BTreeSet::new(),
                })
                .collect(),
            assignment: BTreeMap::new(),
            max_par_size,
            k_w,
            theta,
        };
        for (pid, b) in entries {
            if pid as usize >= n {
                return Err(Error::integrity(format!(
                    "partition id {pid} out of range (declared {n})"
                )));
            }
            set.partitions[pid as usize].blocks.insert(b);
            set.assignment.insert(b, pid);
        }
        Ok(set)
    }

    /// Checks the disjoint-cover invariant and size bounds.
    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for p in &self.partitions {
            if p.blocks.len() > self.max_par_size {
                return Err(Error::integrity(format!(
                    "partition {} holds {} blocks, max is {}",
                    p.id,
                    p.blocks.len(),
                    self.max_par_size
                )));
            }
            for &b in &p.blocks {
                if !seen.insert(b) {
                    return Err(Error::integrity(format!("block {b} assigned twice")));
                }
                if self.assignment.get(&b) != Some(&p.id) {
                    return Err(Error::integrity(format!(
                        "block {b} assignment map disagrees with partition {}",
                        p.id
                    )));
                }
            }
        }
        if seen.len() != self.assignment.len() {
            return Err(Error::integrity(
                "assignment map tracks blocks missing from partitions",
            ));
        }
        Ok(())
    }
}

/// Partition encoding per the per-table aggregation rule: an (n_tb, l_be)
/// matrix whose row j is the element-wise mean of the encodings of the
/// partition's table-j blocks; rows of absent tables stay zero.
pub fn encode_partition(
    p: &Partition,
    encodings: &EncodingStore,
    n_tb: usize,
    l_be: usize,
) -> Result<Array2<f64>> {
    let mut enc = Array2::zeros((n_tb, l_be));
    let mut counts = vec![0usize; n_tb];
    for &b in &p.blocks {
        let v = encodings.get(b).ok_or_else(|| {
            Error::integrity(format!(
                "no stored encoding for block {b} (partition {})",
                p.id
            ))
        })?;
        if v.len() != l_be {
            return Err(Error::dimension(format!(
                "encoding for {b} has length {}, expected {l_be}",
                v.len()
            )));
        }
        let t = b.table as usize;
        if t >= n_tb {
            return Err(Error::integrity(format!(
                "block {b} table out of range ({n_tb} tables)"
            )));
        }
        for (j, &x) in v.iter().enumerate() {
            enc[[t, j]] += x;
        }
        counts[t] += 1;
    }
    for (t, &c) in counts.iter().enumerate() {
        if c > 0 {
            for j in 0..l_be {
                enc[[t, j]] /= c as f64;
            }
        }
    }
    Ok(enc)
}

/// Encodes every partition of the set.
pub fn encode_all_partitions(
    ps: &PartitionSet,
    encodings: &EncodingStore,
    n_tb: usize,
    l_be: usize,
) -> Result<Vec<Array2<f64>>> {
    ps.partitions()
        .iter()
        .map(|p| encode_partition(p, encodings, n_tb, l_be))
        .collect()
}

/// Writes the migration log as JSON lines.
pub fn save_migration_log(log: &[MigrationRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for rec in log {
        let line = serde_json::to_string(rec)
            .map_err(|e| Error::Serialization(format!("migration record: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
