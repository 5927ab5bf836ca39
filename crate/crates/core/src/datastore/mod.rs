//! Synthetic multi-table databases at block granularity, workload trace
//! generation, and trace serialization.
//!
//! A database is a list of tables, each materialized as fixed-size blocks of
//! rows. Traces are ordered lists of queries, each recording the set of
//! blocks it touched. Generation is a pure function of (spec, seed), so any
//! trace can be regenerated bit-identically.

mod gen;
mod io;

pub use gen::{
    generate_database, generate_nav_workload, generate_sql_workload, NavMode, NavParams,
    SqlCategory, SqlWorkloadParams,
};
pub use io::{load_database, load_trace, save_database, save_trace};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TableId = u32;

/// Global identity of one block: table plus block number within the table.
///
/// Ordering is (table_id, block_no), which is also the order of the global
/// linearized block address space.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct BlockId {
    pub table: TableId,
    pub block: u32,
}

impl BlockId {
    pub fn new(table: TableId, block: u32) -> Self {
        BlockId { table, block }
    }
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.table, self.block)
    }
}

/// Column value kinds supported by the generator and the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Text,
    Datetime,
}

/// One cell of a materialized row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    /// Numeric value.
    #[serde(rename = "n")]
    Num(f64),
    /// Text value.
    #[serde(rename = "s")]
    Text(String),
    /// Datetime value as Unix seconds.
    #[serde(rename = "t")]
    Time(i64),
}

/// Schema of one table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSchema {
    /// Consecutive integer assigned at generation; doubles as the row index
    /// of this table in partition and query encoding matrices.
    pub table_id: TableId,
    pub name: String,
    pub columns: Vec<(String, ColumnKind)>,
    pub row_count: u64,
    pub rows_per_block: u32,
}

impl TableSchema {
    /// Number of blocks this table occupies (ceiling division).
    pub fn block_count(&self) -> u32 {
        if self.row_count == 0 {
            0
        } else {
            self.row_count.div_ceil(self.rows_per_block as u64) as u32
        }
    }
}

/// A materialized block: up to `rows_per_block` rows of one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub table_id: TableId,
    pub block_no: u32,
    pub rows: Vec<Vec<Cell>>,
}

impl Block {
    pub fn id(&self) -> BlockId {
        BlockId::new(self.table_id, self.block_no)
    }
}

/// 2-D tile grid laid over one table's blocks, used by navigational workloads.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub table: TableId,
    pub nx: u32,
    pub ny: u32,
}

/// A fully materialized synthetic database.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Database {
    pub name: String,
    pub seed: u64,
    pub tables: Vec<TableSchema>,
    /// blocks[t][n] is block n of table t.
    pub blocks: Vec<Vec<Block>>,
    /// Optional tile grid for navigational traces.
    pub grid: Option<GridSpec>,
    /// Fixed key-correlation offsets between table pairs, drawn once at
    /// generation; join-style queries derive partner ranges from these.
    pub correlation: Vec<(TableId, TableId, u32)>,
}

impl Database {
    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, t: TableId) -> Option<&TableSchema> {
        self.tables.get(t as usize)
    }

    pub fn block_count(&self, t: TableId) -> u32 {
        self.table(t).map(|s| s.block_count()).unwrap_or(0)
    }

    pub fn total_blocks(&self) -> u64 {
        self.tables.iter().map(|t| t.block_count() as u64).sum()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        id.block < self.block_count(id.table)
    }

    pub fn block(&self, id: BlockId) -> Option<&Block> {
        self.blocks
            .get(id.table as usize)
            .and_then(|b| b.get(id.block as usize))
    }

    /// Correlation offset for the ordered pair (from, to); 0 if absent.
    pub fn correlation_offset(&self, from: TableId, to: TableId) -> u32 {
        self.correlation
            .iter()
            .find(|(a, b, _)| *a == from && *b == to)
            .map(|(_, _, off)| *off)
            .unwrap_or(0)
    }

    /// Linearized address space over all tables in table_id order.
    pub fn lba_space(&self) -> LbaSpace {
        LbaSpace::new(self)
    }
}

/// Mapping between block identities and the global linearized block address
/// space (tables concatenated in table_id order).
#[derive(Debug, Clone)]
pub struct LbaSpace {
    offsets: Vec<u64>,
    counts: Vec<u32>,
    total: u64,
}

impl LbaSpace {
    pub fn new(db: &Database) -> Self {
        let mut offsets = Vec::with_capacity(db.n_tables());
        let mut counts = Vec::with_capacity(db.n_tables());
        let mut acc = 0u64;
        for t in &db.tables {
            offsets.push(acc);
            counts.push(t.block_count());
            acc += t.block_count() as u64;
        }
        LbaSpace {
            offsets,
            counts,
            total: acc,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn lba(&self, id: BlockId) -> u64 {
        self.offsets[id.table as usize] + id.block as u64
    }

    pub fn block(&self, lba: u64) -> Option<BlockId> {
        if lba >= self.total {
            return None;
        }
        // offsets is sorted; find the owning table.
        let t = match self.offsets.binary_search(&lba) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let block = (lba - self.offsets[t]) as u32;
        if block < self.counts[t] {
            Some(BlockId::new(t as TableId, block))
        } else {
            None
        }
    }
}

/// One query of a trace: the set of blocks it accessed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "q")]
    pub query_id: u64,
    #[serde(rename = "t")]
    pub timestep: u64,
    /// Accessed block set (`BTreeSet` keeps a canonical order).
    #[serde(rename = "b")]
    pub accessed_blocks: BTreeSet<BlockId>,
    #[serde(rename = "cat", skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// An ordered sequence of queries against one database.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryTrace {
    pub records: Vec<QueryRecord>,
    pub database_ref: String,
}

impl QueryTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// FNV-1a checksum over the full record stream; replays of one
    /// experiment log it so reports are attributable to an exact trace.
    pub fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for rec in &self.records {
            eat(rec.query_id);
            eat(rec.timestep);
            for b in &rec.accessed_blocks {
                eat(((b.table as u64) << 32) | b.block as u64);
            }
        }
        h
    }

    /// Checks every accessed block exists in `db`.
    pub fn validate_against(&self, db: &Database) -> Result<()> {
        for rec in &self.records {
            for &b in &rec.accessed_blocks {
                if !db.contains(b) {
                    return Err(Error::integrity(format!(
                        "query {} references block {} not present in database `{}`",
                        rec.query_id, b, db.name
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Database spec (declarative generation input)
// ---------------------------------------------------------------------------

/// Declarative description of a database to synthesize, read from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatabaseSpec {
    pub name: String,
    #[serde(default)]
    pub tables: Vec<TableSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub rows: u64,
    pub rows_per_block: u32,
    /// Optional `[nx, ny]` tile grid for navigational traces. At most one
    /// table of the spec may carry a grid.
    #[serde(default)]
    pub grid: Option<[u32; 2]>,
    #[serde(default)]
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Numeric/datetime range low bound (epoch seconds for datetime).
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    /// Vocabulary size for text columns.
    #[serde(default)]
    pub vocab: Option<u32>,
}

impl DatabaseSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("database spec: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::config("database spec names no tables"));
        }
        let grids = self.tables.iter().filter(|t| t.grid.is_some()).count();
        if grids > 1 {
            return Err(Error::config("at most one table may carry a tile grid"));
        }
        for t in &self.tables {
            if t.rows_per_block == 0 {
                return Err(Error::config(format!(
                    "table `{}`: rows_per_block must be >= 1",
                    t.name
                )));
            }
            if !t.columns.iter().any(|c| c.kind == ColumnKind::Numeric) {
                return Err(Error::config(format!(
                    "table `{}` needs at least one numeric column",
                    t.name
                )));
            }
            if let Some([nx, ny]) = t.grid {
                if nx == 0 || ny == 0 {
                    return Err(Error::config(format!(
                        "table `{}`: grid dimensions must be >= 1",
                        t.name
                    )));
                }
            }
            for c in &t.columns {
                if let (Some(lo), Some(hi)) = (c.min, c.max) {
                    if lo > hi {
                        return Err(Error::config(format!(
                            "table `{}` column `{}`: min > max",
                            t.name, c.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
