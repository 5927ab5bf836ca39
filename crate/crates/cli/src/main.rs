//! Command-line harness: generate databases and traces, train the learned
//! prefetcher, replay systems over traces, run the shifting-workload
//! scenario, and convert reports.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use prefetch_core::datastore::{
    generate_database, generate_nav_workload, generate_sql_workload, load_database, load_trace,
    save_database, save_trace, DatabaseSpec, NavMode, NavParams, SqlCategory, SqlWorkloadParams,
    TableId,
};
use prefetch_core::harness::{
    build_semantic_pipeline, emit_report, encode_blocks, read_report, run_adaptivity_scenario,
    run_experiment, save_series_csv, save_train_log, train_split, AdaptivityParams,
    ExperimentConfig, ReportFormat, SystemSpec,
};
use prefetch_core::partitioning::save_migration_log;

#[derive(Parser)]
#[command(
    name = "prefetch-sim",
    about = "Trace-driven simulator comparing a learned semantic prefetcher with traditional readahead baselines",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML config file with [experiment] and [adaptivity] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prefetch size in partitions.
    #[arg(long)]
    k: Option<usize>,
    /// Master seed for encoders and the prediction model.
    #[arg(long)]
    seed: Option<u64>,
    /// Repartitioning threshold in queries.
    #[arg(long)]
    l_p: Option<u32>,
    #[arg(long)]
    cache_bytes: Option<u64>,
    #[arg(long)]
    block_bytes: Option<u64>,
    #[arg(long)]
    max_par_size: Option<usize>,
    /// Block encoding length.
    #[arg(long)]
    l_be: Option<usize>,
    /// Use the desk-scale preset as the base instead of the reference
    /// configuration.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Deserialize, Default)]
struct FileConfig {
    #[serde(default)]
    experiment: Option<ExperimentConfig>,
    #[serde(default)]
    adaptivity: Option<AdaptivityParams>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(ExperimentConfig, AdaptivityParams)> {
        let base = if self.desk_scale {
            ExperimentConfig::desk_scale()
        } else {
            ExperimentConfig::default()
        };
        let mut file = FileConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            file = toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
        }
        let mut cfg = file.experiment.unwrap_or(base);
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(l_p) = self.l_p {
            cfg.l_p = l_p;
        }
        if let Some(v) = self.cache_bytes {
            cfg.cache_bytes = v;
        }
        if let Some(v) = self.block_bytes {
            cfg.block_bytes = v;
        }
        if let Some(v) = self.max_par_size {
            cfg.max_par_size = v;
        }
        if let Some(v) = self.l_be {
            cfg.l_be = v;
        }
        Ok((cfg, file.adaptivity.unwrap_or_default()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a database from a declarative TOML spec.
    GenDb {
        /// Database spec (tables, columns, row counts, optional grid).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a query trace over a database.
    GenTrace {
        #[arg(long)]
        db: PathBuf,
        /// s-reg, s-rand, m-reg, m-rand, mj-reg, mj-rand, full, smooth,
        /// jumping, or random.
        #[arg(long)]
        category: String,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Blocks per table per query (SQL categories).
        #[arg(long)]
        width: Option<u32>,
        /// Tables rotated over by the m-*/mj-* categories.
        #[arg(long)]
        tables_used: Option<u32>,
        /// Fixed table for the s-* categories.
        #[arg(long)]
        table: Option<TableId>,
        /// First block of the first s-reg range.
        #[arg(long)]
        start_block: Option<u32>,
        /// Viewport size in tiles (navigational categories).
        #[arg(long)]
        viewport: Option<u32>,
    },
    /// Fit per-table encoders and store every block's encoding.
    Encode {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training-log CSV (epoch, train loss, val loss) of the last table.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the full pipeline on a trace's training prefix and save the
    /// artifacts (encodings, partition map, migration log, model, log).
    Train {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Replay systems over a trace and emit a metrics report.
    Run {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated: np, lookahead, naive, rand-readahead, semantic,
        /// file:<path>.
        #[arg(long, default_value = "np,lookahead,naive,rand-readahead,semantic")]
        systems: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        /// Workload label for the report rows (defaults to the trace stem).
        #[arg(long)]
        workload: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the 4-batch shifting-workload scenario and emit windowed hit
    /// ratios per system.
    Adaptivity {
        #[arg(long, default_value = "np,lookahead,semantic")]
        systems: String,
        #[arg(long, default_value_t = 7)]
        scenario_seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Convert or re-emit a report between CSV and JSON.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "json")]
        format: String,
    },
}

fn parse_systems(s: &str) -> Result<Vec<SystemSpec>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| SystemSpec::parse(t).map_err(Into::into))
        .collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenDb { spec, seed, out } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading spec {}", spec.display()))?;
            let spec = DatabaseSpec::from_toml(&text)?;
            let db = generate_database(&spec, seed)?;
            save_database(&db, &out)?;
            println!(
                "wrote database `{}`: {} tables, {} blocks -> {}",
                db.name,
                db.n_tables(),
                db.total_blocks(),
                out.display()
            );
        }
        Command::GenTrace {
            db,
            category,
            queries,
            seed,
            out,
            width,
            tables_used,
            table,
            start_block,
            viewport,
        } => {
            let db = load_database(&db)?;
            let trace = match category.as_str() {
                "smooth" | "jumping" | "random" => {
                    let mode = NavMode::parse(&category)?;
                    let mut params = NavParams::default();
                    if let Some(v) = viewport {
                        params.viewport = (v, v);
                    }
                    generate_nav_workload(&db, mode, queries, seed, &params)?
                }
                other => {
                    let cat = SqlCategory::parse(other)?;
                    let mut params = SqlWorkloadParams::default();
                    if let Some(w) = width {
                        params.range_width = w;
                    }
                    if let Some(t) = tables_used {
                        params.tables_used = t;
                    }
                    params.table = table;
                    if let Some(s) = start_block {
                        params.start_block = s;
                    }
                    generate_sql_workload(&db, cat, queries, seed, &params)?
                }
            };
            save_trace(&trace, &out)?;
            println!("wrote {} queries -> {}", trace.len(), out.display());
        }
        Command::Encode {
            db,
            out,
            log,
            config,
        } => {
            let (cfg, _) = config.load()?;
            cfg.validate()?;
            let db = load_database(&db)?;
            let (store, last_log) = encode_blocks(&cfg, &db)?;
            store.save(&out)?;
            if let Some(log_path) = log {
                save_train_log(&last_log, &log_path)?;
            }
            println!(
                "encoded {} blocks at l_be={} -> {}",
                store.len(),
                store.l_be,
                out.display()
            );
        }
        Command::Train {
            db,
            trace,
            out_dir,
            config,
        } => {
            let (cfg, _) = config.load()?;
            cfg.validate()?;
            let db = load_database(&db)?;
            let trace = load_trace(&trace)?;
            trace.validate_against(&db)?;
            let split = train_split(&cfg, trace.len());
            if split == 0 {
                bail!("trace too short to train on");
            }
            std::fs::create_dir_all(&out_dir)?;
            let pipe = build_semantic_pipeline(&cfg, &db, &trace.records[..split])?;
            pipe.encodings.save(out_dir.join("encodings.bin"))?;
            pipe.partitions.save_map(out_dir.join("partitions.txt"))?;
            save_migration_log(&pipe.warmup_migrations, out_dir.join("migrations.jsonl"))?;
            pipe.model.save(out_dir.join("model.bin"))?;
            save_train_log(&pipe.train_log, out_dir.join("train_log.csv"))?;
            println!(
                "trained on {split} queries: {} partitions, model |P|={} -> {}",
                pipe.partitions.len(),
                pipe.model.dims.n_partitions,
                out_dir.display()
            );
        }
        Command::Run {
            db,
            trace,
            systems,
            out,
            format,
            workload,
            config,
        } => {
            let (cfg, _) = config.load()?;
            let systems = parse_systems(&systems)?;
            if systems.is_empty() {
                bail!("no systems requested");
            }
            let format = ReportFormat::parse(&format)?;
            let db = load_database(&db)?;
            let trace_path = trace.clone();
            let trace = load_trace(&trace)?;
            let workload = workload.unwrap_or_else(|| {
                trace_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "trace".into())
            });
            println!(
                "trace checksum {:016x} ({} queries)",
                trace.checksum(),
                trace.len()
            );
            let rows = run_experiment(&cfg, &systems, &db, &trace, &workload)?;
            emit_report(&rows, &out, format)?;
            for r in &rows {
                println!(
                    "{:<16} hit_ratio={:.4} coverage={} rel_t_io={}",
                    r.system,
                    r.hit_ratio,
                    r.coverage.map_or("n/a".into(), |c| format!("{c:.4}")),
                    r.relative_t_io.map_or("n/a".into(), |c| format!("{c:.4}")),
                );
            }
            println!("report -> {}", out.display());
        }
        Command::Adaptivity {
            systems,
            scenario_seed,
            out,
            config,
        } => {
            let (cfg, params) = config.load()?;
            let systems = parse_systems(&systems)?;
            let report = run_adaptivity_scenario(&cfg, &systems, &params, scenario_seed)?;
            save_series_csv(&report, &out)?;
            println!(
                "adaptivity: {} systems x {} windows of {} queries -> {}",
                report.series.len(),
                report.series.first().map_or(0, |s| s.hit_ratios.len()),
                report.window,
                out.display()
            );
        }
        Command::Report { input, out, format } => {
            let rows = read_report(&input)?;
            let format = ReportFormat::parse(&format)?;
            emit_report(&rows, &out, format)?;
            println!("converted {} rows -> {}", rows.len(), out.display());
        }
    }
    Ok(())
}
