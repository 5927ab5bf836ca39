//! Block encoding: per-column preprocessing, PCA reduction, and per-table
//! autoencoders that compress each block to an `l_be`-length vector.
//!
//! Pipeline per table: convert every column to numbers (datetimes to Unix
//! seconds, text to 8 hashed-trigram embedding columns), min-max normalize
//! each resulting column to [-1, 1], reduce rows with PCA, then train a
//! two-dense-layer autoencoder on the flattened block matrices. Encodings
//! of blocks from different tables are never aggregated directly; the
//! partition encoding keeps tables in separate matrix rows.

mod autoencoder;
mod pca;

pub use autoencoder::{train_autoencoder, AeTrainOpts, Autoencoder, EpochStat};
pub use pca::{apply_pca, fit_pca, reconstruct_pca, PcaModel};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{Block, BlockId, Cell, ColumnKind, Database, TableId};
use crate::error::{Error, Result};

/// Number of numeric columns a text column expands into.
pub const TEXT_EMBED_DIM: usize = 8;

/// Per-column min/max recorded over the fitted table and reused afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
}

impl ColumnStats {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            ColumnStats { min: 0.0, max: 0.0 }
        } else {
            ColumnStats { min, max }
        }
    }
}

/// Min-max normalization to [-1, 1]:
/// `x' = (x - min) / (max - min) * 2 - 1`.
///
/// Degenerate columns (max == min) map to 0; values outside the fitted range
/// are clipped so unseen data stays inside [-1, 1].
pub fn normalize_value(x: f64, stats: &ColumnStats) -> f64 {
    if stats.max == stats.min {
        0.0
    } else {
        ((x - stats.min) / (stats.max - stats.min) * 2.0 - 1.0).clamp(-1.0, 1.0)
    }
}

pub fn normalize_column(values: &[f64], stats: &ColumnStats) -> Vec<f64> {
    values.iter().map(|&v| normalize_value(v, stats)).collect()
}

// ---------------------------------------------------------------------------
// Text embedding
// ---------------------------------------------------------------------------

const TEXT_BUCKETS: usize = 64;
const TEXT_PROJECTION_SEED: u64 = 0x5E1E_C70A;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn text_projection() -> &'static [[f64; TEXT_BUCKETS]; TEXT_EMBED_DIM] {
    use std::sync::OnceLock;
    static PROJ: OnceLock<[[f64; TEXT_BUCKETS]; TEXT_EMBED_DIM]> = OnceLock::new();
    PROJ.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(TEXT_PROJECTION_SEED);
        let mut proj = [[0.0; TEXT_BUCKETS]; TEXT_EMBED_DIM];
        for row in proj.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        proj
    })
}

/// Deterministic 8-dimensional text embedding: a signed hashed bag of
/// character trigrams projected through a fixed seeded matrix and squashed
/// to [-1, 1]. The empty string maps to the zero vector.
pub fn embed_text(s: &str) -> [f64; TEXT_EMBED_DIM] {
    let mut chars: Vec<char> = Vec::with_capacity(s.chars().count() + 2);
    chars.push('\u{2}');
    chars.extend(s.chars());
    chars.push('\u{3}');

    let mut bag = [0.0f64; TEXT_BUCKETS];
    let mut n_grams = 0usize;
    for w in chars.windows(3) {
        let mut buf = [0u8; 12];
        let mut len = 0;
        for ch in w {
            len += ch.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(&buf[..len]);
        let bucket = (h % TEXT_BUCKETS as u64) as usize;
        let sign = if (h >> 7) & 1 == 1 { 1.0 } else { -1.0 };
        bag[bucket] += sign;
        n_grams += 1;
    }

    let mut out = [0.0; TEXT_EMBED_DIM];
    if n_grams == 0 {
        return out;
    }
    let scale = 1.0 / (n_grams as f64).sqrt();
    let proj = text_projection();
    for (i, row) in proj.iter().enumerate() {
        let dot: f64 = row.iter().zip(&bag).map(|(p, b)| p * b).sum();
        out[i] = (dot * scale).tanh();
    }
    out
}

// ---------------------------------------------------------------------------
// Datetime conversion
// ---------------------------------------------------------------------------

/// Converts a civil datetime (proleptic Gregorian, UTC) to Unix seconds.
pub fn datetime_to_number(
    year: i32,
    month: u32,
    day: u32,
    hour: u32,
    minute: u32,
    second: u32,
) -> Result<i64> {
    if !(1..=9999).contains(&year) {
        return Err(Error::numeric(format!("year {year} out of range 1..=9999")));
    }
    if !(1..=12).contains(&month) {
        return Err(Error::numeric(format!("month {month} out of range")));
    }
    let days_in_month = match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ => {
            if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 {
                29
            } else {
                28
            }
        }
    };
    if day == 0 || day > days_in_month {
        return Err(Error::numeric(format!(
            "day {day} out of range for {year}-{month:02}"
        )));
    }
    if hour > 23 || minute > 59 || second > 59 {
        return Err(Error::numeric(format!(
            "time {hour:02}:{minute:02}:{second:02} out of range"
        )));
    }
    // Days-from-civil (Howard Hinnant's algorithm).
    let y = year as i64 - i64::from(month <= 2);
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let m = month as i64;
    let d = day as i64;
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    let days = era * 146_097 + doe - 719_468;
    Ok(days * 86_400 + hour as i64 * 3600 + minute as i64 * 60 + second as i64)
}

/// Parses `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM:SS[Z]` into Unix seconds.
pub fn parse_datetime(s: &str) -> Result<i64> {
    let s = s.trim().trim_end_matches('Z');
    let (date, time) = match s.split_once('T') {
        Some((d, t)) => (d, Some(t)),
        None => (s, None),
    };
    let mut dp = date.splitn(3, '-');
    let bad = || Error::numeric(format!("unparseable datetime `{s}`"));
    let year: i32 = dp.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let month: u32 = dp.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let day: u32 = dp.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let (h, mi, sec) = if let Some(t) = time {
        let mut tp = t.splitn(3, ':');
        (
            tp.next().ok_or_else(bad)?.parse().map_err(|_| bad())?,
            tp.next().ok_or_else(bad)?.parse().map_err(|_| bad())?,
            tp.next().unwrap_or("0").parse().map_err(|_| bad())?,
        )
    } else {
        (0, 0, 0)
    };
    datetime_to_number(year, month, day, h, mi, sec)
}

// ---------------------------------------------------------------------------
// Table preprocessing
// ---------------------------------------------------------------------------

/// Fitted preprocessing state of one table: the expanded-column stats and the
/// PCA basis, reusable on any block of that table.
#[derive(Debug, Clone)]
pub struct TablePreprocessor {
    pub table_id: TableId,
    kinds: Vec<ColumnKind>,
    pub stats: Vec<ColumnStats>,
    pub pca: PcaModel,
    rows_per_block: usize,
}

fn expand_cell(cell: &Cell, kind: ColumnKind, out: &mut Vec<f64>) -> Result<()> {
    match (kind, cell) {
        (ColumnKind::Numeric, Cell::Num(v)) => out.push(*v),
        (ColumnKind::Datetime, Cell::Time(t)) => out.push(*t as f64),
        (ColumnKind::Text, Cell::Text(s)) => out.extend(embed_text(s)),
        (k, c) => {
            return Err(Error::integrity(format!(
                "cell {c:?} does not match declared column kind {k:?}"
            )))
        }
    }
    Ok(())
}

impl TablePreprocessor {
    /// Fits stats and PCA on all rows of the table and returns the
    /// preprocessor together with every block's reduced matrix.
    pub fn fit(
        db: &Database,
        table: TableId,
        d_reduced_cap: usize,
    ) -> Result<(Self, Vec<Array2<f64>>)> {
        let schema = db
            .table(table)
            .ok_or_else(|| Error::integrity(format!("table {table} does not exist")))?;
        if schema.row_count == 0 {
            return Err(Error::config(format!("table {} is empty", schema.name)));
        }
        let kinds: Vec<ColumnKind> = schema.columns.iter().map(|(_, k)| k).copied().collect();
        let expanded_dim: usize = kinds
            .iter()
            .map(|k| match k {
                ColumnKind::Text => TEXT_EMBED_DIM,
                _ => 1,
            })
            .sum();

        // Expand every row of the table.
        let blocks = &db.blocks[table as usize];
        let mut raw: Vec<f64> = Vec::new();
        let mut n_rows = 0usize;
        for block in blocks {
            for row in &block.rows {
                for (cell, &kind) in row.iter().zip(&kinds) {
                    expand_cell(cell, kind, &mut raw)?;
                }
                n_rows += 1;
            }
        }
        if n_rows < 2 {
            return Err(Error::config(format!(
                "table {} needs at least 2 rows to fit a preprocessor",
                schema.name
            )));
        }
        let raw = Array2::from_shape_vec((n_rows, expanded_dim), raw)
            .map_err(|e| Error::dimension(e.to_string()))?;

        let stats: Vec<ColumnStats> = (0..expanded_dim)
            .map(|j| ColumnStats::from_values(raw.column(j).iter().copied()))
            .collect();
        let mut normalized = raw;
        for (j, st) in stats.iter().enumerate() {
            for v in normalized.column_mut(j) {
                *v = normalize_value(*v, st);
            }
        }

        let d_reduced = expanded_dim.min(d_reduced_cap.max(1));
        let pca = fit_pca(&normalized, d_reduced)?;

        let prep = TablePreprocessor {
            table_id: table,
            kinds,
            stats,
            pca,
            rows_per_block: schema.rows_per_block as usize,
        };
        let mats = blocks
            .iter()
            .map(|b| prep.transform_block(b))
            .collect::<Result<Vec<_>>>()?;
        Ok((prep, mats))
    }

    pub fn feature_dim(&self) -> usize {
        self.pca.d_reduced()
    }

    /// Flattened input width the per-table autoencoder consumes.
    pub fn block_input_dim(&self) -> usize {
        self.rows_per_block * self.pca.d_reduced()
    }

    /// Applies the fitted pipeline to one block, yielding a
    /// (rows_per_block, d_reduced) matrix. Short trailing blocks are padded
    /// by repeating their last row so every block has the same shape.
    pub fn transform_block(&self, block: &Block) -> Result<Array2<f64>> {
        if block.table_id != self.table_id {
            return Err(Error::integrity(format!(
                "block {} fed to preprocessor of table {}",
                block.id(),
                self.table_id
            )));
        }
        if block.rows.is_empty() {
            return Err(Error::integrity(format!(
                "block {} has no rows",
                block.id()
            )));
        }
        let mut raw = Vec::with_capacity(block.rows.len() * self.stats.len());
        for row in &block.rows {
            for (cell, &kind) in row.iter().zip(&self.kinds) {
                expand_cell(cell, kind, &mut raw)?;
            }
        }
        let mut mat = Array2::from_shape_vec((block.rows.len(), self.stats.len()), raw)
            .map_err(|e| Error::dimension(e.to_string()))?;
        for (j, st) in self.stats.iter().enumerate() {
            for v in mat.column_mut(j) {
                *v = normalize_value(*v, st);
            }
        }
        let reduced = apply_pca(&self.pca, &mat)?;
        if reduced.nrows() == self.rows_per_block {
            return Ok(reduced);
        }
        let mut padded = Array2::zeros((self.rows_per_block, reduced.ncols()));
        for r in 0..self.rows_per_block {
            let src = r.min(reduced.nrows() - 1);
            padded.row_mut(r).assign(&reduced.row(src));
        }
        Ok(padded)
    }
}

// ---------------------------------------------------------------------------
// Encoding store
// ---------------------------------------------------------------------------

/// One block's `l_be`-length encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEncoding {
    pub id: BlockId,
    pub vector: Vec<f64>,
}

/// All block encodings of a database, keyed by block identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodingStore {
    pub l_be: usize,
    map: BTreeMap<BlockId, Vec<f64>>,
}

const ENC_MAGIC: &[u8; 4] = b"BENC";
const ENC_VERSION: u32 = 1;

impl EncodingStore {
    pub fn new(l_be: usize) -> Self {
        EncodingStore {
            l_be,
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: BlockId, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.l_be {
            return Err(Error::dimension(format!(
                "encoding for {id} has length {}, store expects {}",
                vector.len(),
                self.l_be
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite encoding for {id}")));
        }
        self.map.insert(id, vector);
        Ok(())
    }

    pub fn get(&self, id: BlockId) -> Option<&[f64]> {
        self.map.get(&id).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BlockId, &Vec<f64>)> {
        self.map.iter()
    }

    /// Binary format: magic, version, l_be, table count; per table a header
    /// (table_id, record count) then (block_no, l_be x f64) records.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(ENC_MAGIC)?;
        w.write_all(&ENC_VERSION.to_le_bytes())?;
        w.write_all(&(self.l_be as u32).to_le_bytes())?;

        let mut by_table: BTreeMap<TableId, Vec<(&BlockId, &Vec<f64>)>> = BTreeMap::new();
        for (id, v) in &self.map {
            by_table.entry(id.table).or_default().push((id, v));
        }
        w.write_all(&(by_table.len() as u32).to_le_bytes())?;
        for (table, entries) in by_table {
            w.write_all(&table.to_le_bytes())?;
            w.write_all(&(entries.len() as u64).to_le_bytes())?;
            for (id, v) in entries {
                w.write_all(&id.block.to_le_bytes())?;
                for &x in v.iter() {
                    w.write_all(&x.to_bits().to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != ENC_MAGIC {
            return Err(Error::Serialization("bad encoding file magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != ENC_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported encoding file version {version}"
            )));
        }
        let l_be = read_u32(&mut r)? as usize;
        let n_tables = read_u32(&mut r)? as usize;
        let mut store = EncodingStore::new(l_be);
        let mut buf = [0u8; 8];
        for _ in 0..n_tables {
            let table = read_u32(&mut r)?;
            r.read_exact(&mut buf)?;
            let count = u64::from_le_bytes(buf);
            for _ in 0..count {
                let block = read_u32(&mut r)?;
                let mut v = Vec::with_capacity(l_be);
                for _ in 0..l_be {
                    r.read_exact(&mut buf)?;
                    v.push(f64::from_bits(u64::from_le_bytes(buf)));
                }
                store.map.insert(BlockId::new(table, block), v);
            }
        }
        Ok(store)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
