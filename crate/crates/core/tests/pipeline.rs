//! Cross-module integration: the full learned-prefetcher pipeline on a small
//! synthetic database, plus artifact persistence.

use prefetch_core::datastore::{
    generate_database, generate_sql_workload, ColumnKind, ColumnSpec, DatabaseSpec, SqlCategory,
    SqlWorkloadParams, TableSpec,
};
use prefetch_core::encoding::EncodingStore;
use prefetch_core::harness::{
    build_semantic_pipeline, run_experiment, train_split, ExperimentConfig, SystemSpec,
};
use prefetch_core::learner::PredictionModel;
use prefetch_core::partitioning::PartitionSet;

fn mini_db() -> prefetch_core::datastore::Database {
    let spec = DatabaseSpec {
        name: "mini".into(),
        tables: (0..3)
            .map(|i| TableSpec {
                name: format!("t{i}"),
                rows: 48 * 4,
                rows_per_block: 4,
                grid: None,
                columns: vec![
                    ColumnSpec {
                        name: "v".into(),
                        kind: ColumnKind::Numeric,
                        min: Some(0.0),
                        max: Some(100.0 * (i + 1) as f64),
                        vocab: None,
                    },
                    ColumnSpec {
                        name: "tag".into(),
                        kind: ColumnKind::Text,
                        min: None,
                        max: None,
                        vocab: Some(12),
                    },
                ],
            })
            .collect(),
    };
    generate_database(&spec, 21).unwrap()
}

fn mini_cfg() -> ExperimentConfig {
    ExperimentConfig {
        cache_bytes: 48 * 8192,
        block_bytes: 8192,
        max_par_size: 8,
        l_be: 8,
        d_reduced: 6,
        lookback: 3,
        k: 3,
        l_p: 40,
        max_epochs: 10,
        compressed_dim: 16,
        hidden_dim: 16,
        seed: 5,
        ..ExperimentConfig::default()
    }
}

#[test]
fn pipeline_artifacts_are_complete_and_reloadable() {
    let db = mini_db();
    let cfg = mini_cfg();
    let trace = generate_sql_workload(
        &db,
        SqlCategory::MReg,
        400,
        9,
        &SqlWorkloadParams {
            range_width: 4,
            tables_used: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let split = train_split(&cfg, trace.len());
    let pipe = build_semantic_pipeline(&cfg, &db, &trace.records[..split]).unwrap();

    // Every block of the database is encoded at length l_be.
    assert_eq!(pipe.encodings.len() as u64, db.total_blocks());
    for (_, v) in pipe.encodings.iter() {
        assert_eq!(v.len(), cfg.l_be);
    }
    // Partition invariants hold after warm-up repartitioning.
    pipe.partitions.check_invariants().unwrap();
    assert_eq!(pipe.partition_encodings.len(), pipe.partitions.len());

    // Artifacts roundtrip through their file formats.
    let dir = tempfile::tempdir().unwrap();
    let enc_path = dir.path().join("encodings.bin");
    pipe.encodings.save(&enc_path).unwrap();
    assert_eq!(EncodingStore::load(&enc_path).unwrap(), pipe.encodings);

    let map_path = dir.path().join("partitions.txt");
    pipe.partitions.save_map(&map_path).unwrap();
    let reloaded =
        PartitionSet::load_map(&map_path, cfg.max_par_size, pipe.partitions.theta, cfg.k_w)
            .unwrap();
    assert_eq!(reloaded.len(), pipe.partitions.len());
    for (a, b) in pipe
        .partitions
        .partitions()
        .iter()
        .zip(reloaded.partitions())
    {
        assert_eq!(a.blocks, b.blocks);
    }

    let model_path = dir.path().join("model.bin");
    pipe.model.save(&model_path).unwrap();
    let model = PredictionModel::load(&model_path).unwrap();
    assert_eq!(model.params_flat(), pipe.model.params_flat());
}

#[test]
fn learned_prefetcher_beats_np_on_a_regular_pattern() {
    let db = mini_db();
    let cfg = mini_cfg();
    let trace = generate_sql_workload(
        &db,
        SqlCategory::MReg,
        500,
        13,
        &SqlWorkloadParams {
            range_width: 4,
            tables_used: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let rows = run_experiment(
        &cfg,
        &[SystemSpec::Semantic, SystemSpec::Lookahead],
        &db,
        &trace,
        "m-reg",
    )
    .unwrap();
    let np = rows.iter().find(|r| r.system == "np").unwrap();
    let sem = rows.iter().find(|r| r.system == "semantic").unwrap();
    // Hits + misses account for exactly the blocks the test segment demands.
    let split = train_split(&cfg, trace.len());
    let demanded: u64 = trace.records[split..]
        .iter()
        .map(|r| r.accessed_blocks.len() as u64)
        .sum();
    for r in &rows {
        assert_eq!(r.hits + r.misses, demanded, "{}", r.system);
    }
    assert!(
        sem.hit_ratio > np.hit_ratio,
        "semantic {} vs np {}",
        sem.hit_ratio,
        np.hit_ratio
    );
    assert!(sem.coverage.unwrap() > 0.0);
    // Prefetched partitions per step stay within k.
    assert!(sem.prefetched_blocks <= (trace.len() as u64) * (cfg.k * cfg.max_par_size) as u64);
}
