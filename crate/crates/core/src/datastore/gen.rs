//! Deterministic synthesis of databases and query traces.
//!
//! Columns carry a positional gradient (values drift with the row index) so
//! that different blocks of a table hold distinguishably different value
//! ranges; the encoders downstream depend on blocks being separable by
//! content. All draws come from a seeded ChaCha stream, so generation is a
//! pure function of (spec, seed).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Block, BlockId, Cell, ColumnKind, Database, DatabaseSpec, GridSpec, QueryRecord, QueryTrace,
    TableId, TableSchema,
};
use crate::error::{Error, Result};

const DEFAULT_EPOCH_LO: f64 = 946_684_800.0; // 2000-01-01
const DEFAULT_EPOCH_HI: f64 = 1_577_836_800.0; // 2020-01-01
const DEFAULT_VOCAB: u32 = 32;
/// Weight of the positional gradient vs. uniform noise in generated values.
const GRADIENT_WEIGHT: f64 = 0.75;

fn sub_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt))
}

/// Deterministic vocabulary word `idx` for a text column.
fn vocab_word(table: TableId, col: usize, idx: u32) -> String {
    const CONS: &[u8] = b"bcdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut h = (table as u64)
        .wrapping_mul(31)
        .wrapping_add(col as u64)
        .wrapping_mul(131)
        .wrapping_add(idx as u64)
        .wrapping_mul(0x9E37_79B9);
    let mut word = String::new();
    for _ in 0..3 {
        word.push(CONS[(h % CONS.len() as u64) as usize] as char);
        h /= CONS.len() as u64;
        word.push(VOWELS[(h % VOWELS.len() as u64) as usize] as char);
        h /= VOWELS.len() as u64;
    }
    format!("{word}_{table}c{col}v{idx}")
}

/// Synthesizes a database from a declarative spec. Deterministic for a fixed
/// (spec, seed).
pub fn generate_database(spec: &DatabaseSpec, seed: u64) -> Result<Database> {
    spec.validate()?;
    let mut tables = Vec::with_capacity(spec.tables.len());
    let mut blocks = Vec::with_capacity(spec.tables.len());
    let mut grid = None;

    for (ti, tspec) in spec.tables.iter().enumerate() {
        let table_id = ti as TableId;
        let schema = TableSchema {
            table_id,
            name: tspec.name.clone(),
            columns: tspec
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.kind))
                .collect(),
            row_count: tspec.rows,
            rows_per_block: tspec.rows_per_block,
        };
        if let Some([nx, ny]) = tspec.grid {
            grid = Some(GridSpec {
                table: table_id,
                nx,
                ny,
            });
        }

        let mut rng = sub_rng(seed, table_id as u64 + 1);
        let denom = (tspec.rows.saturating_sub(1)).max(1) as f64;
        let mut table_blocks: Vec<Block> = Vec::with_capacity(schema.block_count() as usize);
        let mut current_rows: Vec<Vec<Cell>> = Vec::with_capacity(tspec.rows_per_block as usize);
        for r in 0..tspec.rows {
            let frac = r as f64 / denom;
            let mut row = Vec::with_capacity(tspec.columns.len());
            for (ci, cspec) in tspec.columns.iter().enumerate() {
                let u: f64 = rng.gen_range(0.0..1.0);
                let mix = GRADIENT_WEIGHT * frac + (1.0 - GRADIENT_WEIGHT) * u;
                let cell = match cspec.kind {
                    ColumnKind::Numeric => {
                        let lo = cspec.min.unwrap_or(0.0);
                        let hi = cspec.max.unwrap_or(1.0);
                        Cell::Num(lo + (hi - lo) * mix)
                    }
                    ColumnKind::Datetime => {
                        let lo = cspec.min.unwrap_or(DEFAULT_EPOCH_LO);
                        let hi = cspec.max.unwrap_or(DEFAULT_EPOCH_HI);
                        Cell::Time((lo + (hi - lo) * mix) as i64)
                    }
                    ColumnKind::Text => {
                        let vocab = cspec.vocab.unwrap_or(DEFAULT_VOCAB).max(1);
                        let idx = ((mix * vocab as f64) as u32).min(vocab - 1);
                        Cell::Text(vocab_word(table_id, ci, idx))
                    }
                };
                row.push(cell);
            }
            current_rows.push(row);
            if current_rows.len() == tspec.rows_per_block as usize {
                table_blocks.push(Block {
                    table_id,
                    block_no: table_blocks.len() as u32,
                    rows: std::mem::take(&mut current_rows),
                });
            }
        }
        if !current_rows.is_empty() {
            table_blocks.push(Block {
                table_id,
                block_no: table_blocks.len() as u32,
                rows: current_rows,
            });
        }
        tables.push(schema);
        blocks.push(table_blocks);
    }

    // Fixed key-correlation offsets for join emulation, one per ordered pair.
    let mut corr_rng = sub_rng(seed, 0xC0_44E1);
    let mut correlation = Vec::new();
    for i in 0..tables.len() {
        for (j, target) in tables.iter().enumerate() {
            if i == j {
                continue;
            }
            let nb = target.block_count().max(1);
            correlation.push((i as TableId, j as TableId, corr_rng.gen_range(0..nb)));
        }
    }

    Ok(Database {
        name: spec.name.clone(),
        seed,
        tables,
        blocks,
        grid,
        correlation,
    })
}

// ---------------------------------------------------------------------------
// SQL-style workloads
// ---------------------------------------------------------------------------

/// The workload taxonomy for SQL-style traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SqlCategory {
    /// Single table, sequential range scans.
    SReg,
    /// Single table, uniformly random ranges.
    SRand,
    /// Several tables, one table per query, cyclic table order and a
    /// recurring block-delta pattern.
    MReg,
    /// Several tables, random table and range per query.
    MRand,
    /// Join emulation: 2-4 tables per query with a recurring pattern.
    MjReg,
    /// Join emulation without a recurring pattern.
    MjRand,
    /// Seeded mixture of all six categories.
    Full,
}

impl SqlCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            SqlCategory::SReg => "s-reg",
            SqlCategory::SRand => "s-rand",
            SqlCategory::MReg => "m-reg",
            SqlCategory::MRand => "m-rand",
            SqlCategory::MjReg => "mj-reg",
            SqlCategory::MjRand => "mj-rand",
            SqlCategory::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "s-reg" => Ok(SqlCategory::SReg),
            "s-rand" => Ok(SqlCategory::SRand),
            "m-reg" => Ok(SqlCategory::MReg),
            "m-rand" => Ok(SqlCategory::MRand),
            "mj-reg" => Ok(SqlCategory::MjReg),
            "mj-rand" => Ok(SqlCategory::MjRand),
            "full" => Ok(SqlCategory::Full),
            other => Err(Error::Config(format!(
                "unknown workload category `{other}`"
            ))),
        }
    }

    fn needs_multiple_tables(&self) -> bool {
        !matches!(self, SqlCategory::SReg | SqlCategory::SRand)
    }
}

/// Free parameters of the SQL-style generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SqlWorkloadParams {
    /// Blocks touched per table per query.
    #[serde(default = "default_width")]
    pub range_width: u32,
    /// Number of distinct tables the m-*/mj-* categories rotate over
    /// (clamped to the table count).
    #[serde(default = "default_tables_used")]
    pub tables_used: u32,
    /// Fixed table for the s-* categories.
    #[serde(default)]
    pub table: Option<TableId>,
    /// First block of the first s-reg range.
    #[serde(default)]
    pub start_block: u32,
    /// Recurring advance steps (in blocks) for the reg categories; empty
    /// selects `[w, 3w, w, 5w]` derived from the range width.
    #[serde(default)]
    pub delta_schedule: Vec<u32>,
}

fn default_width() -> u32 {
    8
}

fn default_tables_used() -> u32 {
    3
}

impl Default for SqlWorkloadParams {
    fn default() -> Self {
        SqlWorkloadParams {
            range_width: default_width(),
            tables_used: default_tables_used(),
            table: None,
            start_block: 0,
            delta_schedule: Vec::new(),
        }
    }
}

impl SqlWorkloadParams {
    fn schedule(&self) -> Vec<u32> {
        if self.delta_schedule.is_empty() {
            let w = self.range_width;
            vec![w, 3 * w, w, 5 * w]
        } else {
            self.delta_schedule.clone()
        }
    }
}

/// Per-table cursor of the regular generators: ranges advance by a recurring
/// delta schedule and wrap to block 0 when the table end is reached.
struct RegCursor {
    pos: u32,
    schedule_idx: usize,
}

impl RegCursor {
    fn new(start: u32) -> Self {
        RegCursor {
            pos: start,
            schedule_idx: 0,
        }
    }

    /// Emits the current range and advances.
    fn take(&mut self, width: u32, n_blocks: u32, schedule: &[u32]) -> (u32, u32) {
        let start = self.pos.min(n_blocks.saturating_sub(1));
        let end = (start + width).min(n_blocks);
        let delta = schedule[self.schedule_idx % schedule.len()];
        self.schedule_idx += 1;
        let next = start + delta;
        self.pos = if next + width > n_blocks { 0 } else { next };
        (start, end)
    }
}

fn range_blocks(table: TableId, start: u32, end: u32) -> impl Iterator<Item = BlockId> {
    (start..end).map(move |b| BlockId::new(table, b))
}

/// Correlated partner range for join emulation: the primary block position is
/// rescaled into the partner table and shifted by the database's fixed
/// correlation offset.
fn correlated_start(db: &Database, primary: TableId, primary_start: u32, partner: TableId) -> u32 {
    let nb_p = db.block_count(primary).max(1) as u64;
    let nb_q = db.block_count(partner).max(1) as u64;
    let scaled = (primary_start as u64 * nb_q) / nb_p;
    let off = db.correlation_offset(primary, partner) as u64;
    ((scaled + off) % nb_q) as u32
}

struct SqlGen {
    category: SqlCategory,
    width: u32,
    tables_used: u32,
    fixed_table: TableId,
    schedule: Vec<u32>,
    cursors: Vec<RegCursor>,
    cycle: usize,
    rng: ChaCha8Rng,
}

impl SqlGen {
    fn new(db: &Database, category: SqlCategory, params: &SqlWorkloadParams, seed: u64) -> Self {
        let tables_used = params.tables_used.max(2).min(db.n_tables() as u32).max(1);
        let fixed_table = params.table.unwrap_or(0);
        // Stagger the starting positions so the tables do not move in lockstep.
        let cursors = (0..db.n_tables())
            .map(|t| {
                let nb = db.block_count(t as TableId);
                let start = if category == SqlCategory::SReg && t as TableId == fixed_table {
                    params.start_block.min(nb.saturating_sub(1))
                } else {
                    (t as u32 * 2 * params.range_width) % nb.max(1)
                };
                RegCursor::new(start)
            })
            .collect();
        SqlGen {
            category,
            width: params.range_width.max(1),
            tables_used,
            fixed_table,
            schedule: params.schedule(),
            cursors,
            cycle: 0,
            rng: sub_rng(seed, category as u64 + 0x7A5),
        }
    }

    fn random_range(&mut self, db: &Database, table: TableId) -> (u32, u32) {
        let nb = db.block_count(table);
        let max_start = nb.saturating_sub(self.width);
        let start = if max_start == 0 {
            0
        } else {
            self.rng.gen_range(0..=max_start)
        };
        (start, (start + self.width).min(nb))
    }

    fn next_query(&mut self, db: &Database) -> BTreeSet<BlockId> {
        let mut acc = BTreeSet::new();
        match self.category {
            SqlCategory::SReg => {
                let t = self.fixed_table;
                let nb = db.block_count(t);
                let (s, e) = {
                    let cur = &mut self.cursors[t as usize];
                    let start = cur.pos.min(nb.saturating_sub(1));
                    let end = (start + self.width).min(nb);
                    // Sequential scan: advance by exactly the range width and
                    // wrap at the table end, so consecutive accesses within
                    // the table differ by a single positive stride.
                    cur.pos = if end >= nb { 0 } else { end };
                    (start, end)
                };
                acc.extend(range_blocks(t, s, e));
            }
            SqlCategory::SRand => {
                let t = self.fixed_table;
                let (s, e) = self.random_range(db, t);
                acc.extend(range_blocks(t, s, e));
            }
            SqlCategory::MReg => {
                let t = (self.cycle % self.tables_used as usize) as TableId;
                self.cycle += 1;
                let nb = db.block_count(t);
                let schedule = self.schedule.clone();
                let (s, e) = self.cursors[t as usize].take(self.width, nb, &schedule);
                acc.extend(range_blocks(t, s, e));
            }
            SqlCategory::MRand => {
                let t = self.rng.gen_range(0..self.tables_used) as TableId;
                let (s, e) = self.random_range(db, t);
                acc.extend(range_blocks(t, s, e));
            }
            SqlCategory::MjReg => {
                let m = self.tables_used as usize;
                let primary = (self.cycle % m) as TableId;
                let partners = 1 + (self.cycle / m) % (m - 1).min(3);
                self.cycle += 1;
                let nb = db.block_count(primary);
                let schedule = self.schedule.clone();
                let (s, e) = self.cursors[primary as usize].take(self.width, nb, &schedule);
                acc.extend(range_blocks(primary, s, e));
                for i in 0..partners {
                    let partner = ((primary as usize + 1 + i) % m) as TableId;
                    let ps = correlated_start(db, primary, s, partner);
                    let pe = (ps + self.width).min(db.block_count(partner));
                    acc.extend(range_blocks(partner, ps, pe));
                }
            }
            SqlCategory::MjRand => {
                let m = self.tables_used as usize;
                let primary = self.rng.gen_range(0..m) as TableId;
                let partners = self.rng.gen_range(1..=(m - 1).min(3));
                let (s, e) = self.random_range(db, primary);
                acc.extend(range_blocks(primary, s, e));
                for i in 0..partners {
                    let partner = ((primary as usize + 1 + i) % m) as TableId;
                    let ps = correlated_start(db, primary, s, partner);
                    let pe = (ps + self.width).min(db.block_count(partner));
                    acc.extend(range_blocks(partner, ps, pe));
                }
            }
            SqlCategory::Full => unreachable!("full handled by the mixture driver"),
        }
        acc
    }
}

/// Generates a SQL-style trace of `n_queries` records in the given category.
pub fn generate_sql_workload(
    db: &Database,
    category: SqlCategory,
    n_queries: usize,
    seed: u64,
    params: &SqlWorkloadParams,
) -> Result<QueryTrace> {
    if db.tables.is_empty() || db.total_blocks() == 0 {
        return Err(Error::config("database has no blocks"));
    }
    if n_queries == 0 {
        return Err(Error::config("n_queries must be >= 1"));
    }
    if category.needs_multiple_tables() && db.n_tables() < 2 {
        return Err(Error::Config(format!(
            "category {} needs at least 2 tables, database has {}",
            category.as_str(),
            db.n_tables()
        )));
    }
    if let Some(t) = params.table {
        if db.table(t).is_none() {
            return Err(Error::Config(format!("fixed table {t} does not exist")));
        }
    }
    let used = if category.needs_multiple_tables() {
        params.tables_used.max(2).min(db.n_tables() as u32)
    } else {
        1
    };
    let first = params.table.unwrap_or(0);
    for t in 0..used {
        let table = if category.needs_multiple_tables() {
            t
        } else {
            first
        };
        if db.block_count(table) == 0 {
            return Err(Error::Config(format!(
                "table {table} has no blocks; cannot generate {} queries over it",
                category.as_str()
            )));
        }
    }

    let mut records = Vec::with_capacity(n_queries);
    if category == SqlCategory::Full {
        const MIX: [SqlCategory; 6] = [
            SqlCategory::SReg,
            SqlCategory::SRand,
            SqlCategory::MReg,
            SqlCategory::MRand,
            SqlCategory::MjReg,
            SqlCategory::MjRand,
        ];
        let mut gens: Vec<SqlGen> = MIX
            .iter()
            .map(|&c| SqlGen::new(db, c, params, seed))
            .collect();
        let mut pick = sub_rng(seed, 0xF0_11);
        for q in 0..n_queries {
            let which = pick.gen_range(0..MIX.len());
            let blocks = gens[which].next_query(db);
            records.push(QueryRecord {
                query_id: q as u64,
                timestep: q as u64,
                accessed_blocks: blocks,
                label: Some(MIX[which].as_str().to_string()),
            });
        }
    } else {
        let mut g = SqlGen::new(db, category, params, seed);
        for q in 0..n_queries {
            let blocks = g.next_query(db);
            records.push(QueryRecord {
                query_id: q as u64,
                timestep: q as u64,
                accessed_blocks: blocks,
                label: Some(category.as_str().to_string()),
            });
        }
    }

    Ok(QueryTrace {
        records,
        database_ref: db.name.clone(),
    })
}

// ---------------------------------------------------------------------------
// Navigational workloads
// ---------------------------------------------------------------------------

/// Exploration style over the tile grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NavMode {
    /// Every viewport is one tile step from the previous one.
    Smooth,
    /// Runs of adjacent moves separated by teleports.
    Jumping,
    /// Uniformly random viewports.
    Random,
}

impl NavMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NavMode::Smooth => "smooth",
            NavMode::Jumping => "jumping",
            NavMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(NavMode::Smooth),
            "jumping" => Ok(NavMode::Jumping),
            "random" => Ok(NavMode::Random),
            other => Err(Error::Config(format!("unknown navigation mode `{other}`"))),
        }
    }
}

/// Free parameters of the navigational generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NavParams {
    /// Viewport size in tiles (width, height).
    #[serde(default = "default_viewport")]
    pub viewport: (u32, u32),
    /// Jump-mode run length range (inclusive).
    #[serde(default = "default_run_len")]
    pub run_len: (u32, u32),
}

fn default_viewport() -> (u32, u32) {
    (2, 2)
}

fn default_run_len() -> (u32, u32) {
    (5, 15)
}

impl Default for NavParams {
    fn default() -> Self {
        NavParams {
            viewport: default_viewport(),
            run_len: default_run_len(),
        }
    }
}

struct TileMap {
    table: TableId,
    nx: u32,
    ny: u32,
    blocks_per_tile: u32,
    n_blocks: u32,
}

impl TileMap {
    fn new(db: &Database, grid: GridSpec) -> Self {
        let n_blocks = db.block_count(grid.table);
        let tiles = (grid.nx * grid.ny).max(1);
        TileMap {
            table: grid.table,
            nx: grid.nx,
            ny: grid.ny,
            blocks_per_tile: n_blocks.div_ceil(tiles).max(1),
            n_blocks,
        }
    }

    fn tile_blocks(&self, x: u32, y: u32) -> impl Iterator<Item = BlockId> + '_ {
        let idx = y * self.nx + x;
        let start = (idx * self.blocks_per_tile).min(self.n_blocks);
        let end = ((idx + 1) * self.blocks_per_tile).min(self.n_blocks);
        (start..end).map(move |b| BlockId::new(self.table, b))
    }

    fn viewport_blocks(&self, pos: (u32, u32), vw: u32, vh: u32) -> BTreeSet<BlockId> {
        let mut acc = BTreeSet::new();
        for dy in 0..vh {
            for dx in 0..vw {
                let x = (pos.0 + dx).min(self.nx - 1);
                let y = (pos.1 + dy).min(self.ny - 1);
                acc.extend(self.tile_blocks(x, y));
            }
        }
        acc
    }
}

/// Generates a navigational trace over the database's tile grid.
pub fn generate_nav_workload(
    db: &Database,
    mode: NavMode,
    n_steps: usize,
    seed: u64,
    params: &NavParams,
) -> Result<QueryTrace> {
    let grid = db
        .grid
        .ok_or_else(|| Error::config("database has no tile grid; navigational traces need one"))?;
    if n_steps == 0 {
        return Err(Error::config("n_steps must be >= 1"));
    }
    let (vw, vh) = params.viewport;
    if vw == 0 || vh == 0 {
        return Err(Error::config("viewport must be at least 1x1 tiles"));
    }
    let map = TileMap::new(db, grid);
    // Valid top-left anchor positions.
    let max_x = map.nx.saturating_sub(vw);
    let max_y = map.ny.saturating_sub(vh);
    if mode != NavMode::Random && max_x == 0 && max_y == 0 {
        return Err(Error::config(
            "grid is not larger than the viewport; no adjacent moves exist",
        ));
    }

    let mut rng = sub_rng(seed, 0x11AF + mode as u64);
    let mut pos = (rng.gen_range(0..=max_x), rng.gen_range(0..=max_y));
    let mut records = Vec::with_capacity(n_steps);
    let mut run_left = 0u32;

    for q in 0..n_steps {
        if q > 0 {
            match mode {
                NavMode::Smooth => pos = adjacent_step(&mut rng, pos, max_x, max_y),
                NavMode::Random => pos = (rng.gen_range(0..=max_x), rng.gen_range(0..=max_y)),
                NavMode::Jumping => {
                    if run_left == 0 {
                        pos = teleport(&mut rng, pos, max_x, max_y);
                        run_left = rng
                            .gen_range(params.run_len.0..=params.run_len.1.max(params.run_len.0));
                    } else {
                        pos = adjacent_step(&mut rng, pos, max_x, max_y);
                        run_left -= 1;
                    }
                }
            }
        } else if mode == NavMode::Jumping {
            run_left = rng.gen_range(params.run_len.0..=params.run_len.1.max(params.run_len.0));
        }
        records.push(QueryRecord {
            query_id: q as u64,
            timestep: q as u64,
            accessed_blocks: map.viewport_blocks(pos, vw, vh),
            label: Some(mode.as_str().to_string()),
        });
    }

    Ok(QueryTrace {
        records,
        database_ref: db.name.clone(),
    })
}

/// One tile step in any of the 8 directions, clamped to the grid; redraws
/// until the position actually changes.
fn adjacent_step(rng: &mut ChaCha8Rng, pos: (u32, u32), max_x: u32, max_y: u32) -> (u32, u32) {
    loop {
        let dx = rng.gen_range(-1i64..=1);
        let dy = rng.gen_range(-1i64..=1);
        if dx == 0 && dy == 0 {
            continue;
        }
        let nx = (pos.0 as i64 + dx).clamp(0, max_x as i64) as u32;
        let ny = (pos.1 as i64 + dy).clamp(0, max_y as i64) as u32;
        if (nx, ny) != pos {
            return (nx, ny);
        }
    }
}

/// A teleport: a uniform position with Chebyshev distance > 1 from `pos`.
fn teleport(rng: &mut ChaCha8Rng, pos: (u32, u32), max_x: u32, max_y: u32) -> (u32, u32) {
    for _ in 0..256 {
        let cand = (rng.gen_range(0..=max_x), rng.gen_range(0..=max_y));
        let d = chebyshev(cand, pos);
        if d > 1 {
            return cand;
        }
    }
    // Grid too cramped for a real jump; fall back to an adjacent move.
    adjacent_step(rng, pos, max_x, max_y)
}

fn chebyshev(a: (u32, u32), b: (u32, u32)) -> u32 {
    let dx = a.0.abs_diff(b.0);
    let dy = a.1.abs_diff(b.1);
    dx.max(dy)
}
