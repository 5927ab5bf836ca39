//! Experiment harness: wires generation, encoding, partitioning, learning,
//! and cache replay into comparable runs, and emits metric reports.
//!
//! The no-prefetch (NP) system always runs first; its misses and I/O cost
//! are the reference for coverage and relative I/O. All systems replay the
//! identical trace: the training prefix warms the cache (demand only, no
//! prefetching) and online baselines observe it; metrics cover the test
//! segment only.

mod adaptivity;

pub use adaptivity::{
    run_adaptivity_scenario, save_series_csv, AdaptivityParams, AdaptivityReport, SystemSeries,
};

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::{FileCandidates, Lookahead, NaivePrefetcher, Prefetcher, RandReadahead};
use crate::cache::{
    coverage, relative_io, CacheState, IoCostModel, MetricsAccumulator, QueryAccess,
};
use crate::datastore::{BlockId, Database, QueryRecord, QueryTrace, TableId};
use crate::encoding::{train_autoencoder, AeTrainOpts, EncodingStore, TablePreprocessor};
use crate::error::{Error, Result};
use crate::learner::{
    build_training_set, encode_query, fine_tune, select_topk, ModelDims, PredictionModel, TrainOpts,
};
use crate::nn::AdamParams;
use crate::partitioning::{
    encode_all_partitions, AffinityGraph, MigrationRecord, PartitionId, PartitionSet,
};

/// Every knob of one experiment. Defaults are the reference configuration
/// (4 GB cache, 32 kB blocks, 128-block partitions, lookback 4, k_w 10,
/// θ = 1, l_p = 2500); [`ExperimentConfig::desk_scale`] shrinks everything
/// so a full pipeline run finishes in seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub cache_bytes: u64,
    pub block_bytes: u64,
    pub max_par_size: usize,
    pub l_be: usize,
    /// PCA target dimension cap per table.
    pub d_reduced: usize,
    pub lookback: usize,
    /// Prefetch size in partitions.
    pub k: usize,
    pub k_w: f64,
    pub theta_init: f64,
    /// Repartitioning threshold in queries.
    pub l_p: u32,
    pub fill_frac: f64,
    pub decay_factor: f64,
    pub seek_cost: f64,
    pub transfer_cost: f64,
    pub seed: u64,
    /// Leading fraction of the trace used for training.
    pub train_frac: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub fine_tune_epochs: usize,
    pub fine_tune_lr: f64,
    pub compressed_dim: usize,
    pub hidden_dim: usize,
    /// Random-readahead demand window length.
    pub rr_window: usize,
    /// Random-readahead extent trigger threshold.
    pub l_rr: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cache_bytes: 4 << 30,
            block_bytes: 32 << 10,
            max_par_size: 128,
            l_be: 32,
            d_reduced: 16,
            lookback: 4,
            k: 8,
            k_w: 10.0,
            theta_init: 1.0,
            l_p: 2500,
            fill_frac: 0.95,
            decay_factor: 0.75,
            seek_cost: 10.0,
            transfer_cost: 1.0,
            seed: 7,
            train_frac: 0.8,
            max_epochs: 75,
            batch_size: 32,
            patience: 5,
            learning_rate: 1e-3,
            fine_tune_epochs: 15,
            fine_tune_lr: 1e-5,
            compressed_dim: 128,
            hidden_dim: 64,
            rr_window: 64,
            l_rr: 13,
        }
    }
}

impl ExperimentConfig {
    /// Small preset that keeps full pipeline runs under a minute: 64 MB
    /// cache of 8 kB blocks, 16-block partitions, repartitioning every 100
    /// queries.
    pub fn desk_scale() -> Self {
        ExperimentConfig {
            cache_bytes: 64 << 20,
            block_bytes: 8 << 10,
            max_par_size: 16,
            l_p: 100,
            ..Default::default()
        }
    }

    pub fn cache_capacity(&self) -> usize {
        (self.cache_bytes / self.block_bytes.max(1)) as usize
    }

    pub fn io_model(&self) -> IoCostModel {
        IoCostModel {
            seek_cost: self.seek_cost,
            transfer_cost: self.transfer_cost,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_bytes == 0 || self.cache_bytes == 0 {
            return Err(Error::config("cache and block sizes must be positive"));
        }
        if self.cache_capacity() == 0 {
            return Err(Error::config("cache holds no blocks at this block size"));
        }
        if self.max_par_size == 0 {
            return Err(Error::config("MaxParSize must be >= 1"));
        }
        if self.l_be == 0 || self.d_reduced == 0 {
            return Err(Error::config("l_be and d_reduced must be >= 1"));
        }
        if self.lookback == 0 {
            return Err(Error::config("lookback must be >= 1"));
        }
        if self.l_p == 0 {
            return Err(Error::config("l_p must be >= 1"));
        }
        if !(0.0 < self.fill_frac && self.fill_frac <= 1.0) {
            return Err(Error::config("fill_frac must be in (0, 1]"));
        }
        if !(0.0 < self.decay_factor && self.decay_factor < 1.0) {
            return Err(Error::config("decay_factor must be in (0, 1)"));
        }
        if !(0.0 < self.train_frac && self.train_frac < 1.0) {
            return Err(Error::config("train_frac must be in (0, 1)"));
        }
        if self.seek_cost < 0.0 || self.transfer_cost < 0.0 {
            return Err(Error::config("io costs must be non-negative"));
        }
        if self.rr_window == 0 || self.l_rr == 0 {
            return Err(Error::config(
                "rand-readahead window and trigger must be >= 1",
            ));
        }
        Ok(())
    }
}

/// A system under comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SystemSpec {
    Np,
    Lookahead,
    Naive,
    RandReadahead,
    Semantic,
    /// Externally supplied candidate lists (one JSON line per test query).
    File(PathBuf),
}

impl SystemSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "np" => Ok(SystemSpec::Np),
            "lookahead" => Ok(SystemSpec::Lookahead),
            "naive" => Ok(SystemSpec::Naive),
            "rand-readahead" => Ok(SystemSpec::RandReadahead),
            "semantic" => Ok(SystemSpec::Semantic),
            other => {
                if let Some(path) = other.strip_prefix("file:") {
                    Ok(SystemSpec::File(PathBuf::from(path)))
                } else {
                    Err(Error::Config(format!("unknown system `{other}`")))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            SystemSpec::Np => "np".into(),
            SystemSpec::Lookahead => "lookahead".into(),
            SystemSpec::Naive => "naive".into(),
            SystemSpec::RandReadahead => "rand-readahead".into(),
            SystemSpec::Semantic => "semantic".into(),
            SystemSpec::File(p) => format!("file:{}", p.display()),
        }
    }
}

/// One system's metrics over one replayed workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub workload: String,
    pub k: usize,
    pub hits: u64,
    pub misses: u64,
    pub hit_ratio: f64,
    pub coverage: Option<f64>,
    pub t_io: f64,
    pub relative_t_io: Option<f64>,
    pub prefetched_blocks: u64,
    pub repartitions: u64,
    pub fine_tunes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// Writes rows in a stable column order; an empty row set is an error, not
/// an empty file.
pub fn emit_report(rows: &[ReportRow], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("refusing to emit an empty report"));
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
            for row in rows {
                w.serialize(row)
                    .map_err(|e| Error::Serialization(format!("report row: {e}")))?;
            }
            w.flush()?;
        }
        ReportFormat::Json => {
            let mut w = BufWriter::new(File::create(path)?);
            serde_json::to_writer_pretty(&mut w, rows)
                .map_err(|e| Error::Serialization(format!("report: {e}")))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Training log CSV: epoch, train loss, validation loss (blank when the set
/// was too small for a split).
pub fn save_train_log(stats: &[crate::encoding::EpochStat], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,train_loss,val_loss")?;
    for s in stats {
        match s.val_loss {
            Some(v) => writeln!(w, "{},{},{}", s.epoch, s.train_loss, v)?,
            None => writeln!(w, "{},{},", s.epoch, s.train_loss)?,
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a report in either format (sniffed from the first byte).
pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(&path)?;
    if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).map_err(|e| Error::Serialization(format!("report: {e}")))
    } else {
        let mut rdr = csv::Reader::from_reader(BufReader::new(text.as_bytes()));
        let mut out = Vec::new();
        for rec in rdr.deserialize() {
            out.push(rec.map_err(|e| Error::Serialization(format!("report row: {e}")))?);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Replays
// ---------------------------------------------------------------------------

/// Per-query outcome of a replayed test segment.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub per_query: Vec<QueryAccess>,
    pub metrics: MetricsAccumulator,
    pub repartitions: u64,
    pub fine_tunes: u64,
}

fn replay_baseline(
    cfg: &ExperimentConfig,
    db: &Database,
    records: &[QueryRecord],
    split: usize,
    mut prefetcher: Option<Box<dyn Prefetcher>>,
) -> Result<ReplayOutcome> {
    let io = cfg.io_model();
    let mut cache = CacheState::new(cfg.cache_capacity());
    let space = db.lba_space();
    let budget = cfg.k * cfg.max_par_size;
    let mut metrics = MetricsAccumulator::default();
    let mut per_query = Vec::with_capacity(records.len().saturating_sub(split));

    for (i, rec) in records.iter().enumerate() {
        let access = cache.access_blocks(&io, &rec.accessed_blocks, db)?;
        if i >= split {
            metrics.record_access(&access);
            per_query.push(access);
        }
        if let Some(p) = prefetcher.as_mut() {
            if !rec.accessed_blocks.is_empty() {
                p.observe(&rec.accessed_blocks, &space);
            }
            if i >= split {
                let cands = p.candidates(budget, &space);
                let fetched = cache.prefetch_blocks(&cands);
                metrics.record_prefetch(&fetched, &io);
            }
        }
    }
    Ok(ReplayOutcome {
        per_query,
        metrics,
        repartitions: 0,
        fine_tunes: 0,
    })
}

/// Trained artifacts of the learned prefetcher, reusable across replays and
/// persistable by the CLI.
pub struct SemanticPipeline {
    pub encodings: EncodingStore,
    pub partitions: PartitionSet,
    pub graph: AffinityGraph,
    pub partition_encodings: Vec<Array2<f64>>,
    pub model: PredictionModel,
    pub train_log: Vec<crate::encoding::EpochStat>,
    pub warmup_migrations: Vec<MigrationRecord>,
}

/// Fits every table's preprocessor and autoencoder and stores each block's
/// encoding. Returns the store plus the last table's training log.
pub fn encode_blocks(
    cfg: &ExperimentConfig,
    db: &Database,
) -> Result<(EncodingStore, Vec<crate::encoding::EpochStat>)> {
    let mut encodings = EncodingStore::new(cfg.l_be);
    let ae_opts = AeTrainOpts {
        max_epochs: cfg.max_epochs,
        batch_size: cfg.batch_size,
        patience: cfg.patience,
        adam: AdamParams::with_lr(cfg.learning_rate),
        ..Default::default()
    };
    let mut last_log = Vec::new();
    for t in 0..db.n_tables() as TableId {
        let (prep, mats) = TablePreprocessor::fit(db, t, cfg.d_reduced)?;
        let input_dim = prep.block_input_dim();
        let mut inputs = Array2::zeros((mats.len(), input_dim));
        for (i, m) in mats.iter().enumerate() {
            for (j, v) in m.iter().enumerate() {
                inputs[[i, j]] = *v;
            }
        }
        let (ae, log) =
            train_autoencoder(t, &inputs, cfg.l_be, cfg.seed ^ (t as u64 + 1), &ae_opts)?;
        for (block_no, _) in mats.iter().enumerate() {
            let flat: Vec<f64> = inputs.row(block_no).to_vec();
            encodings.insert(BlockId::new(t, block_no as u32), ae.encode(&flat)?)?;
        }
        last_log = log;
    }
    Ok((encodings, last_log))
}

/// Builds the full pipeline from the training prefix: per-table encoders,
/// initial partitions warmed by the training queries, partition encodings,
/// and the trained prediction model.
pub fn build_semantic_pipeline(
    cfg: &ExperimentConfig,
    db: &Database,
    train: &[QueryRecord],
) -> Result<SemanticPipeline> {
    let n_tb = db.n_tables();
    let (encodings, _) = encode_blocks(cfg, db)?;

    let mut partitions =
        PartitionSet::initial(db, cfg.max_par_size, cfg.fill_frac, cfg.theta_init, cfg.k_w)?;
    let mut graph = AffinityGraph::new();
    let mut warmup_migrations = Vec::new();
    for (i, rec) in train.iter().enumerate() {
        graph.observe_query(&rec.accessed_blocks, cfg.l_p);
        if (i + 1) % cfg.l_p as usize == 0 {
            warmup_migrations.extend(partitions.repartition(&graph));
            graph.decay_weights(cfg.decay_factor)?;
        }
    }

    let partition_encodings = encode_all_partitions(&partitions, &encodings, n_tb, cfg.l_be)?;
    let examples = build_training_set(
        train,
        &partitions,
        &partition_encodings,
        cfg.lookback,
        n_tb,
        cfg.l_be,
    )?;
    if examples.is_empty() {
        return Err(Error::config(format!(
            "training prefix of {} queries is too short for lookback {}",
            train.len(),
            cfg.lookback
        )));
    }
    let dims = ModelDims {
        n_tb,
        l_be: cfg.l_be,
        lookback: cfg.lookback,
        n_partitions: partitions.len(),
        compressed: cfg.compressed_dim,
        hidden: cfg.hidden_dim,
    };
    let opts = TrainOpts {
        max_epochs: cfg.max_epochs,
        batch_size: cfg.batch_size,
        patience: cfg.patience,
        adam: AdamParams::with_lr(cfg.learning_rate),
        ..Default::default()
    };
    let (model, train_log) = crate::learner::train_model(&examples, dims, cfg.seed, &opts)?;

    Ok(SemanticPipeline {
        encodings,
        partitions,
        graph,
        partition_encodings,
        model,
        train_log,
        warmup_migrations,
    })
}

fn window_matrix(
    recent: &VecDeque<QueryRecord>,
    ps: &PartitionSet,
    enc_p: &[Array2<f64>],
    lookback: usize,
    n_tb: usize,
    l_be: usize,
) -> Result<Array2<f64>> {
    let dim = n_tb * l_be;
    let mut window = Array2::zeros((lookback, dim));
    let start = recent.len() - lookback;
    for t in 0..lookback {
        let rec = &recent[start + t];
        let res_p: Vec<PartitionId> = ps.partitions_of(&rec.accessed_blocks).into_iter().collect();
        let enc = encode_query(&res_p, enc_p, n_tb, l_be)?;
        for (j, v) in enc.iter().enumerate() {
            window[[t, j]] = *v;
        }
    }
    Ok(window)
}

fn replay_semantic(
    cfg: &ExperimentConfig,
    db: &Database,
    records: &[QueryRecord],
    split: usize,
) -> Result<ReplayOutcome> {
    let train = &records[..split];
    let test = &records[split..];
    let mut pipe = build_semantic_pipeline(cfg, db, train)?;
    let n_tb = db.n_tables();

    let io = cfg.io_model();
    let mut cache = CacheState::new(cfg.cache_capacity());
    // Warm the cache exactly like every other system: demand-only replay of
    // the training prefix.
    for rec in train {
        cache.access_blocks(&io, &rec.accessed_blocks, db)?;
    }
    cache.hits = 0;
    cache.misses = 0;

    // Sliding history: enough for the prediction window plus the post-
    // repartition rebuild of the last l_p queries.
    let keep = cfg.l_p as usize + cfg.lookback + 1;
    let mut recent: VecDeque<QueryRecord> = VecDeque::with_capacity(keep);
    for rec in train.iter().rev().take(cfg.lookback).rev() {
        recent.push_back(rec.clone());
    }

    let mut metrics = MetricsAccumulator::default();
    let mut per_query = Vec::with_capacity(test.len());
    let mut repartitions = 0u64;
    let mut fine_tunes = 0u64;

    for (i, rec) in test.iter().enumerate() {
        let access = cache.access_blocks(&io, &rec.accessed_blocks, db)?;
        metrics.record_access(&access);
        per_query.push(access);

        pipe.graph.observe_query(&rec.accessed_blocks, cfg.l_p);
        recent.push_back(rec.clone());
        while recent.len() > keep {
            recent.pop_front();
        }

        let window = window_matrix(
            &recent,
            &pipe.partitions,
            &pipe.partition_encodings,
            cfg.lookback,
            n_tb,
            cfg.l_be,
        )?;
        let yhat = pipe.model.predict(&window)?;
        let top = select_topk(yhat.as_slice().expect("contiguous"), cfg.k);
        let mut blocks = Vec::new();
        for pid in &top {
            if let Some(p) = pipe.partitions.partition(*pid) {
                blocks.extend(p.blocks.iter().copied());
            }
        }
        let fetched = cache.prefetch_blocks(&blocks);
        metrics.record_prefetch(&fetched, &io);

        if (i + 1) % cfg.l_p as usize == 0 {
            pipe.partitions.repartition(&pipe.graph);
            repartitions += 1;
            pipe.graph.decay_weights(cfg.decay_factor)?;
            pipe.partition_encodings =
                encode_all_partitions(&pipe.partitions, &pipe.encodings, n_tb, cfg.l_be)?;
            let recent_records: Vec<QueryRecord> = recent.iter().cloned().collect();
            let ft_examples = build_training_set(
                &recent_records,
                &pipe.partitions,
                &pipe.partition_encodings,
                cfg.lookback,
                n_tb,
                cfg.l_be,
            )?;
            fine_tune(
                &mut pipe.model,
                &ft_examples,
                cfg.fine_tune_epochs,
                cfg.fine_tune_lr,
            )?;
            fine_tunes += 1;
        }
    }

    Ok(ReplayOutcome {
        per_query,
        metrics,
        repartitions,
        fine_tunes,
    })
}

/// Replays one system over the trace, metrics on the test segment.
pub fn replay_system(
    cfg: &ExperimentConfig,
    db: &Database,
    records: &[QueryRecord],
    split: usize,
    system: &SystemSpec,
) -> Result<ReplayOutcome> {
    match system {
        SystemSpec::Np => replay_baseline(cfg, db, records, split, None),
        SystemSpec::Lookahead => {
            replay_baseline(cfg, db, records, split, Some(Box::new(Lookahead::new())))
        }
        SystemSpec::Naive => replay_baseline(
            cfg,
            db,
            records,
            split,
            Some(Box::new(NaivePrefetcher::new())),
        ),
        SystemSpec::RandReadahead => {
            let rr = RandReadahead::new(2 * cfg.max_par_size as u64, cfg.l_rr, cfg.rr_window)?;
            replay_baseline(cfg, db, records, split, Some(Box::new(rr)))
        }
        SystemSpec::File(path) => {
            let fc = FileCandidates::from_path(path)?;
            replay_baseline(cfg, db, records, split, Some(Box::new(fc)))
        }
        SystemSpec::Semantic => replay_semantic(cfg, db, records, split),
    }
}

/// Index where the trace splits into training prefix and test segment.
pub fn train_split(cfg: &ExperimentConfig, n_records: usize) -> usize {
    ((n_records as f64) * cfg.train_frac).floor() as usize
}

/// Runs every requested system over the trace and reports test-segment
/// metrics. NP always runs (first); the reported rows start with it.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    systems: &[SystemSpec],
    db: &Database,
    trace: &QueryTrace,
    workload_name: &str,
) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(Error::config("empty trace"));
    }
    trace.validate_against(db)?;
    let split = train_split(cfg, trace.len());
    if split >= trace.len() {
        return Err(Error::config(
            "train_frac leaves no test queries; shorten the prefix or lengthen the trace",
        ));
    }

    let np = replay_system(cfg, db, &trace.records, split, &SystemSpec::Np)?;
    let misses_np = np.metrics.misses;
    let t_io_np = np.metrics.t_io;

    let mut rows = Vec::new();
    let row_of = |system: &SystemSpec, out: &ReplayOutcome| ReportRow {
        system: system.name(),
        workload: workload_name.to_string(),
        k: cfg.k,
        hits: out.metrics.hits,
        misses: out.metrics.misses,
        hit_ratio: out.metrics.hit_ratio(),
        coverage: coverage(misses_np, out.metrics.misses),
        t_io: out.metrics.t_io,
        relative_t_io: relative_io(out.metrics.t_io, t_io_np),
        prefetched_blocks: out.metrics.prefetched_blocks,
        repartitions: out.repartitions,
        fine_tunes: out.fine_tunes,
    };
    rows.push(row_of(&SystemSpec::Np, &np));

    for system in systems {
        if *system == SystemSpec::Np {
            continue;
        }
        let out = replay_system(cfg, db, &trace.records, split, system)?;
        rows.push(row_of(system, &out));
    }
    Ok(rows)
}
