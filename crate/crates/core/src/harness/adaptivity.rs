//! Shifting-workload scenario: four consecutive query batches over one
//! database, each batch changing the accessed tables, introducing a share of
//! never-before-accessed blocks, and (later batches) swapping query
//! templates. Reports the hit ratio of each system per fixed-size window of
//! consecutive test queries.
//!
//! Shift profile per batch (fractions of the previous batch's tables, and of
//! accesses targeting fresh blocks):
//!   batch 1: same tables, no fresh blocks, training templates;
//!   batch 2: 80% of tables change, 20% fresh blocks;
//!   batch 3: 75% of tables change, 33% fresh blocks, 66% new templates;
//!   batch 4: all tables change, 85% fresh blocks, all-new templates.
//!
//! Fresh blocks are honest: the builder tracks a per-table frontier and
//! places each batch's working window so the demanded share of it lies
//! beyond everything previously accessed; it fails with a configuration
//! error when a table is too small to honor the share.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{replay_system, ExperimentConfig, SystemSpec};
use crate::datastore::{
    BlockId, ColumnKind, ColumnSpec, Database, DatabaseSpec, QueryRecord, QueryTrace, TableId,
    TableSpec,
};
use crate::error::{Error, Result};

/// Scenario shape knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptivityParams {
    pub n_tables: usize,
    pub blocks_per_table: u32,
    pub rows_per_block: u32,
    /// Blocks of each table covered by the training workload.
    pub seen_window: u32,
    /// Range width of the scenario's queries.
    pub width: u32,
    /// Queries per shift batch (4 batches total).
    pub batch_len: usize,
    /// Training-prefix length.
    pub train_len: usize,
    /// Hit-ratio window in queries.
    pub window: usize,
}

impl Default for AdaptivityParams {
    fn default() -> Self {
        AdaptivityParams {
            n_tables: 16,
            blocks_per_table: 150,
            rows_per_block: 8,
            seen_window: 60,
            width: 10,
            batch_len: 2000,
            train_len: 2000,
            window: 50,
        }
    }
}

#[derive(Debug, Clone)]
struct Template {
    schedule: Vec<u32>,
    width: u32,
}

#[derive(Debug, Clone)]
struct BatchSpec {
    tables: Vec<TableId>,
    templates: Vec<Template>,
    fresh_frac: f64,
}

/// Windowed hit-ratio series of one system.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SystemSeries {
    pub system: String,
    pub hit_ratios: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdaptivityReport {
    pub window: usize,
    pub batch_len: usize,
    pub n_batches: usize,
    pub series: Vec<SystemSeries>,
}

impl AdaptivityReport {
    pub fn windows_per_batch(&self) -> usize {
        self.batch_len / self.window
    }
}

fn scenario_database(params: &AdaptivityParams, seed: u64) -> Result<Database> {
    let spec = DatabaseSpec {
        name: "shift-scenario".into(),
        tables: (0..params.n_tables)
            .map(|i| TableSpec {
                name: format!("t{i}"),
                rows: params.blocks_per_table as u64 * params.rows_per_block as u64,
                rows_per_block: params.rows_per_block,
                grid: None,
                columns: vec![
                    ColumnSpec {
                        name: "a".into(),
                        kind: ColumnKind::Numeric,
                        min: Some(0.0),
                        max: Some(1000.0),
                        vocab: None,
                    },
                    ColumnSpec {
                        name: "b".into(),
                        kind: ColumnKind::Numeric,
                        min: Some(-50.0),
                        max: Some(50.0),
                        vocab: None,
                    },
                    ColumnSpec {
                        name: "ts".into(),
                        kind: ColumnKind::Datetime,
                        min: None,
                        max: None,
                        vocab: None,
                    },
                ],
            })
            .collect(),
    };
    crate::datastore::generate_database(&spec, seed)
}

fn batch_specs(params: &AdaptivityParams) -> Result<[BatchSpec; 4]> {
    let w = params.width;
    if params.n_tables < 16 {
        return Err(Error::config(
            "the shift scenario needs at least 16 tables for disjoint batch groups",
        ));
    }
    let t_a = Template {
        schedule: vec![w, 2 * w],
        width: w,
    };
    let t_b = Template {
        schedule: vec![3 * w, w, 2 * w],
        width: w,
    };
    let t_c = Template {
        schedule: vec![2 * w, 2 * w, w],
        width: w + w / 2,
    };
    let t_d = Template {
        schedule: vec![4 * w, w],
        width: w / 2 + 1,
    };
    let t_e = Template {
        schedule: vec![w, w, 3 * w],
        width: w + 2,
    };
    let t_f = Template {
        schedule: vec![5 * w, 2 * w],
        width: w.saturating_sub(2).max(1),
    };
    Ok([
        // Batch 1: training tables and templates, nothing fresh.
        BatchSpec {
            tables: vec![0, 1, 2, 3, 4],
            templates: vec![t_a.clone(), t_b.clone()],
            fresh_frac: 0.0,
        },
        // Batch 2: 4 of 5 tables change, 20% fresh blocks.
        BatchSpec {
            tables: vec![4, 5, 6, 7, 8],
            templates: vec![t_a.clone(), t_b],
            fresh_frac: 0.20,
        },
        // Batch 3: 3 of 4 tables change, 33% fresh, 2 of 3 templates new.
        BatchSpec {
            tables: vec![8, 9, 10, 11],
            templates: vec![t_a, t_c, t_d],
            fresh_frac: 0.33,
        },
        // Batch 4: all tables change, 85% fresh, all-new templates.
        BatchSpec {
            tables: vec![12, 13, 14, 15],
            templates: vec![t_e, t_f],
            fresh_frac: 0.85,
        },
    ])
}

/// Cyclic cursor over a per-table working window.
struct WindowCursor {
    start: u32,
    end: u32,
    pos: u32,
    step: usize,
}

impl WindowCursor {
    fn take(&mut self, template: &Template, table: TableId) -> Vec<BlockId> {
        let width = template.width.min(self.end - self.start);
        let lo = self.start + self.pos;
        let hi = (lo + width).min(self.end);
        let blocks = (lo..hi).map(|b| BlockId::new(table, b)).collect();
        let delta = template.schedule[self.step % template.schedule.len()];
        self.step += 1;
        let next = self.pos + delta;
        self.pos = if self.start + next + width > self.end {
            0
        } else {
            next
        };
        blocks
    }
}

/// Builds the training prefix plus the 4-batch test segment. Returns the
/// combined trace and the split index.
pub(crate) fn build_shift_trace(
    db: &Database,
    params: &AdaptivityParams,
    _seed: u64,
) -> Result<(QueryTrace, usize)> {
    let specs = batch_specs(params)?;
    let nb = params.blocks_per_table;
    if params.seen_window == 0 || params.seen_window > nb {
        return Err(Error::config("seen_window must be within the table size"));
    }
    if params.window == 0 || !params.batch_len.is_multiple_of(params.window) {
        return Err(Error::config(
            "batch_len must be a positive multiple of the hit-ratio window",
        ));
    }

    let mut records = Vec::new();
    let mut qid = 0u64;
    let mut push = |blocks: Vec<BlockId>, label: &str, records: &mut Vec<QueryRecord>| {
        records.push(QueryRecord {
            query_id: qid,
            timestep: qid,
            accessed_blocks: blocks.into_iter().collect(),
            label: Some(label.to_string()),
        });
        qid += 1;
    };

    // Training: every table's [0, seen_window) with the training templates,
    // so later "table changes" still mostly touch previously seen blocks.
    let train_templates = [
        Template {
            schedule: vec![params.width, 2 * params.width],
            width: params.width,
        },
        Template {
            schedule: vec![3 * params.width, params.width, 2 * params.width],
            width: params.width,
        },
    ];
    let mut frontier: Vec<u32> = vec![0; params.n_tables];
    {
        let mut cursors: Vec<WindowCursor> = (0..params.n_tables)
            .map(|t| WindowCursor {
                start: 0,
                end: params.seen_window,
                pos: ((t as u32) * 3 * params.width) % params.seen_window.max(1),
                step: 0,
            })
            .collect();
        for i in 0..params.train_len {
            let t = (i % params.n_tables) as TableId;
            let template = &train_templates[(i / params.n_tables) % train_templates.len()];
            let blocks = cursors[t as usize].take(template, t);
            push(blocks, "shift-train", &mut records);
        }
        for f in frontier.iter_mut() {
            *f = params.seen_window;
        }
    }
    let split = records.len();

    // Four shift batches.
    for (bi, spec) in specs.iter().enumerate() {
        let label = format!("shift-batch-{}", bi + 1);
        // Place each table's window so `fresh_frac` of it lies beyond the
        // frontier, then advance the frontier.
        let span = params.seen_window;
        let fresh = (spec.fresh_frac * span as f64).ceil() as u32;
        let mut cursors: Vec<(TableId, WindowCursor)> = Vec::new();
        for &t in &spec.tables {
            let f = frontier[t as usize];
            if f + fresh > nb {
                return Err(Error::Config(format!(
                    "table {t} too small to honor a {:.0}% fresh-block share in batch {}",
                    spec.fresh_frac * 100.0,
                    bi + 1
                )));
            }
            let start = f.saturating_sub(span - fresh);
            let end = f + fresh;
            frontier[t as usize] = end;
            cursors.push((
                t,
                WindowCursor {
                    start,
                    end,
                    pos: 0,
                    step: 0,
                },
            ));
        }
        let g = cursors.len();
        for i in 0..params.batch_len {
            let slot = i % g;
            let template = &spec.templates[(i / g) % spec.templates.len()];
            let (t, cursor) = &mut cursors[slot];
            let blocks = cursor.take(template, *t);
            push(blocks, &label, &mut records);
        }
    }

    Ok((
        QueryTrace {
            records,
            database_ref: db.name.clone(),
        },
        split,
    ))
}

/// Runs the shifting scenario: builds the database and trace, replays every
/// requested system (NP always included), and reports per-window hit ratios
/// over the test segment.
pub fn run_adaptivity_scenario(
    cfg: &ExperimentConfig,
    systems: &[SystemSpec],
    params: &AdaptivityParams,
    seed: u64,
) -> Result<AdaptivityReport> {
    cfg.validate()?;
    if !systems.contains(&SystemSpec::Semantic) {
        return Err(Error::config(
            "the adaptivity scenario needs the semantic system enabled",
        ));
    }
    let db = scenario_database(params, seed)?;
    let (trace, split) = build_shift_trace(&db, params, seed)?;
    trace.validate_against(&db)?;

    let mut ordered: Vec<SystemSpec> = vec![SystemSpec::Np];
    for s in systems {
        if *s != SystemSpec::Np && !ordered.contains(s) {
            ordered.push(s.clone());
        }
    }

    let mut series = Vec::new();
    for system in &ordered {
        let out = replay_system(cfg, &db, &trace.records, split, system)?;
        let mut ratios = Vec::new();
        for chunk in out.per_query.chunks(params.window) {
            if chunk.len() < params.window {
                break;
            }
            let hits: u64 = chunk.iter().map(|a| a.hits).sum();
            let misses: u64 = chunk.iter().map(|a| a.misses).sum();
            let total = hits + misses;
            ratios.push(if total == 0 {
                0.0
            } else {
                hits as f64 / total as f64
            });
        }
        series.push(SystemSeries {
            system: system.name(),
            hit_ratios: ratios,
        });
    }

    Ok(AdaptivityReport {
        window: params.window,
        batch_len: params.batch_len,
        n_batches: 4,
        series,
    })
}

/// CSV: system, window_index, hit_ratio.
pub fn save_series_csv(report: &AdaptivityReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "system,window_index,hit_ratio")?;
    for s in &report.series {
        for (i, r) in s.hit_ratios.iter().enumerate() {
            writeln!(w, "{},{},{}", s.system, i, r)?;
        }
    }
    w.flush()?;
    Ok(())
}
