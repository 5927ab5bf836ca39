//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured figure. Heavy end-to-end criteria pin their full
//! configuration (sizes, widths, seeds) so results are reproducible.

use std::collections::BTreeSet;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prefetch_core::cache::{coverage, relative_io, CacheState, IoCostModel};
use prefetch_core::datastore::{
    generate_database, generate_sql_workload, BlockId, ColumnKind, ColumnSpec, Database,
    DatabaseSpec, SqlCategory, SqlWorkloadParams, TableSpec,
};
use prefetch_core::encoding::{normalize_value, Autoencoder, ColumnStats, EncodingStore};
use prefetch_core::learner::{
    encode_query, fine_tune, train_model, ModelDims, PredictionModel, TrainOpts, TrainingExample,
};
use prefetch_core::nn::{
    bce_batch, binary_cross_entropy, max_rel_grad_error, mean_squared_error, Activation,
    DenseLayer, LstmCell, LstmGrads,
};
use prefetch_core::partitioning::{
    encode_partition, AffinityGraph, Partition, PartitionId, PartitionSet,
};

fn b(t: u32, n: u32) -> BlockId {
    BlockId::new(t, n)
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_suite() {
    let start = Instant::now();
    let mut worst = 0.0f64;

    // Dense + MSE.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let layer = DenseLayer::new(5, 4, Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((3, 5), |_| rng.gen_range(-1.0..1.0));
        let target = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let (y, cache) = layer.forward(&x).unwrap();
        let (_, dy) = mean_squared_error(&target, &y).unwrap();
        let (grads, _) = layer.backward(&cache, &dy);
        let mut params: Vec<f64> = layer.w.iter().copied().collect();
        params.extend(layer.b.iter());
        let mut analytic: Vec<f64> = grads.dw.iter().copied().collect();
        analytic.extend(grads.db.iter());
        let mut probe = layer.clone();
        let err = max_rel_grad_error(
            |p| {
                let nw = p[..probe.w.len()].to_vec();
                let nb = p[probe.w.len()..].to_vec();
                probe.w = Array2::from_shape_vec(probe.w.dim(), nw).unwrap();
                probe.b = Array1::from_vec(nb);
                let (y, _) = probe.forward(&x).unwrap();
                mean_squared_error(&target, &y).unwrap().0
            },
            &params,
            &analytic,
            1e-5,
        );
        assert!(err < 1e-4, "dense+mse gradient error {err}");
        worst = worst.max(err);
    }

    // Single LSTM step + BCE head on the hidden state.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let cell = LstmCell::new(4, 3, &mut rng);
        let x = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0));
        let y_true = Array2::from_shape_fn((2, 3), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        let loss_of = |c: &LstmCell| -> f64 {
            let (h0, c0) = c.zero_state(2);
            let (h, _, _) = c.step(&x, &h0, &c0).unwrap();
            let probs = h.mapv(|v| 1.0 / (1.0 + (-v).exp()));
            bce_batch(&y_true, &probs).unwrap().0
        };
        let (h0, c0) = cell.zero_state(2);
        let (h, _, cache) = cell.step(&x, &h0, &c0).unwrap();
        let probs = h.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        let (_, dprob) = bce_batch(&y_true, &probs).unwrap();
        let dh = &dprob * &probs.mapv(|p| p * (1.0 - p));
        let mut grads = LstmGrads::zeros(&cell);
        let dc = Array2::zeros((2, 3));
        cell.backward_step(&cache, &dh, &dc, &mut grads);
        let mut params: Vec<f64> = cell.wx.iter().copied().collect();
        params.extend(cell.wh.iter());
        params.extend(cell.b.iter());
        let mut analytic: Vec<f64> = grads.dwx.iter().copied().collect();
        analytic.extend(grads.dwh.iter());
        analytic.extend(grads.db.iter());
        let mut probe = cell.clone();
        let err = max_rel_grad_error(
            |p| {
                let (nwx, rest) = p.split_at(probe.wx.len());
                let (nwh, nb) = rest.split_at(probe.wh.len());
                probe.wx = Array2::from_shape_vec(probe.wx.dim(), nwx.to_vec()).unwrap();
                probe.wh = Array2::from_shape_vec(probe.wh.dim(), nwh.to_vec()).unwrap();
                probe.b = Array1::from_vec(nb.to_vec());
                loss_of(&probe)
            },
            &params,
            &analytic,
            1e-5,
        );
        assert!(err < 1e-4, "lstm+bce gradient error {err}");
        worst = worst.max(err);
    }

    // Autoencoder (compare against its own MSE loss).
    {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let model = Autoencoder::new(0, 6, 2, &mut rng);
        let x = Array2::from_shape_fn((3, 6), |_| rng.gen_range(-1.0..1.0));
        let (recon, cache) = model.forward(&x).unwrap();
        let (_, d_recon) = mean_squared_error(&x, &recon).unwrap();
        let grads = model.backward(&cache, &d_recon);
        let analytic = Autoencoder::grads_flat(&grads);
        let params = model.params_flat();
        let mut probe = model.clone();
        let err = max_rel_grad_error(
            |p| {
                probe.set_params_flat(p);
                let (r, _) = probe.forward(&x).unwrap();
                mean_squared_error(&x, &r).unwrap().0
            },
            &params,
            &analytic,
            1e-5,
        );
        assert!(err < 1e-4, "autoencoder gradient error {err}");
        worst = worst.max(err);
    }

    // Full stack: compressor -> encoder/decoder LSTM -> dense heads -> BCE.
    {
        let dims = ModelDims {
            n_tb: 2,
            l_be: 2,
            lookback: 3,
            n_partitions: 4,
            compressed: 5,
            hidden: 4,
        };
        let model = PredictionModel::new(dims, 104);
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        let w1 = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let w2 = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let targets = Array2::from_shape_fn((2, 4), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        let (yhat, cache) = model.forward_batch(&[&w1, &w2]).unwrap();
        let (_, dyhat) = bce_batch(&targets, &yhat).unwrap();
        let grads = model.backward(&cache, &dyhat);
        let analytic = PredictionModel::grads_flat(&grads);
        let params = model.params_flat();
        let mut probe = model.clone();
        let err = max_rel_grad_error(
            |p| {
                probe.set_params_flat(p);
                let (y, _) = probe.forward_batch(&[&w1, &w2]).unwrap();
                bce_batch(&targets, &y).unwrap().0
            },
            &params,
            &analytic,
            1e-5,
        );
        assert!(err < 1e-4, "full-stack gradient error {err}");
        worst = worst.max(err);
    }

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "gradient suite took {elapsed:?}"
    );
    println!(
        "criterion 1 PASS: max relative gradient error {worst:.3e} (< 1e-4), runtime {:.2}s (< 30s)",
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: formula oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_formula_oracles() {
    // Min-max normalization endpoints and midpoint.
    let st = ColumnStats {
        min: 0.0,
        max: 10.0,
    };
    assert_eq!(normalize_value(0.0, &st), -1.0);
    assert_eq!(normalize_value(10.0, &st), 1.0);
    assert_eq!(normalize_value(5.0, &st), 0.0);

    // Partition load equals the brute-force edge-filtered sum on 50 random
    // graphs of at most 30 nodes.
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    for round in 0..50 {
        let n_blocks = rng.gen_range(4..=30u32);
        let n_parts = rng.gen_range(2..6u32);
        let mut groups: Vec<Vec<BlockId>> = vec![Vec::new(); n_parts as usize];
        for i in 0..n_blocks {
            groups[rng.gen_range(0..n_parts) as usize].push(b(0, i));
        }
        let ps = PartitionSet::from_groups(groups, 1, 64, 1.0, 10.0).unwrap();
        let mut g = AffinityGraph::new();
        for _ in 0..rng.gen_range(5..50) {
            let k = rng.gen_range(2..6usize);
            let mut res = BTreeSet::new();
            for _ in 0..k {
                res.insert(b(0, rng.gen_range(0..n_blocks)));
            }
            g.observe_query(&res, rng.gen_range(1..20));
        }
        for id in 0..ps.len() as PartitionId {
            let fast = ps.partition_load(id, &g);
            let mut slow = 0.0;
            for (u, v, w) in g.edges() {
                let pu = ps.partition_of(u) == Some(id);
                let pv = ps.partition_of(v) == Some(id);
                if pu != pv {
                    slow += w;
                }
            }
            slow *= 10.0;
            assert!(
                (fast - slow).abs() < 1e-12,
                "round {round} partition {id}: {fast} vs {slow}"
            );
        }
    }

    // Summed BCE at uniform 0.5 over 4 labels is 4 ln 2.
    let (loss, _) = binary_cross_entropy(&[1.0, 0.0, 1.0, 0.0], &[0.5; 4]).unwrap();
    assert!((loss - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);

    // Hit ratio, coverage (negative allowed), relative I/O identities.
    assert!((96.0 / (96.0 + 4.0) - 0.96f64).abs() < 1e-15);
    assert_eq!(coverage(100, 20), Some(0.8));
    assert_eq!(coverage(100, 110), Some(-0.1));
    assert_eq!(coverage(0, 10), None);
    assert_eq!(relative_io(20.0, 100.0), Some(0.2));
    assert_eq!(relative_io(0.0, 100.0), Some(0.0));
    assert_eq!(relative_io(5.0, 0.0), None);

    // Partition encoding equals an independent per-table mean on 50 random
    // partitions.
    let l_be = 4;
    let n_tb = 4;
    for round in 0..50 {
        let n_blocks = rng.gen_range(1..40usize);
        let mut store = EncodingStore::new(l_be);
        let mut blocks = BTreeSet::new();
        for i in 0..n_blocks {
            let id = b(rng.gen_range(0..n_tb as u32), i as u32);
            let v: Vec<f64> = (0..l_be).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store.insert(id, v).unwrap();
            blocks.insert(id);
        }
        let p = Partition {
            id: 0,
            blocks: blocks.clone(),
        };
        let enc = encode_partition(&p, &store, n_tb, l_be).unwrap();
        // Independent oracle: straightforward per-table accumulation.
        let mut sums = vec![vec![0.0; l_be]; n_tb];
        let mut counts = vec![0usize; n_tb];
        for id in &blocks {
            let v = store.get(*id).unwrap();
            for (j, &x) in v.iter().enumerate() {
                sums[id.table as usize][j] += x;
            }
            counts[id.table as usize] += 1;
        }
        for t in 0..n_tb {
            for j in 0..l_be {
                let expect = if counts[t] == 0 {
                    0.0
                } else {
                    sums[t][j] / counts[t] as f64
                };
                assert!(
                    (enc[[t, j]] - expect).abs() < 1e-12,
                    "round {round}: row {t} col {j}"
                );
            }
        }
    }

    println!("criterion 2 PASS: normalization endpoints, load vs brute force (50 graphs), 4ln2 loss, metric identities, partition-encoding oracle (50 partitions)");
}

// ---------------------------------------------------------------------------
// Criterion 3: LRU oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_lru_oracle() {
    let spec = DatabaseSpec {
        name: "lru".into(),
        tables: vec![TableSpec {
            name: "t".into(),
            rows: 200,
            rows_per_block: 2,
            grid: None,
            columns: vec![ColumnSpec {
                name: "x".into(),
                kind: ColumnKind::Numeric,
                min: Some(0.0),
                max: Some(1.0),
                vocab: None,
            }],
        }],
    };
    let db = generate_database(&spec, 1).unwrap();
    let io = IoCostModel::default();
    let capacity = 16;
    let mut cache = CacheState::new(capacity);
    // Reference implementation: a recency list, least recent first.
    let mut oracle: Vec<BlockId> = Vec::new();
    let touch = |oracle: &mut Vec<BlockId>, id: BlockId| {
        if let Some(pos) = oracle.iter().position(|&x| x == id) {
            oracle.remove(pos);
        } else if oracle.len() >= capacity {
            oracle.remove(0);
        }
        oracle.push(id);
    };

    let mut rng = ChaCha8Rng::seed_from_u64(301);
    for step in 0..10_000 {
        if rng.gen_bool(0.6) {
            let start = rng.gen_range(0..95u32);
            let len = rng.gen_range(1..6u32);
            let res: BTreeSet<BlockId> = (start..start + len).map(|i| b(0, i)).collect();
            cache.access_blocks(&io, &res, &db).unwrap();
            let mut missing = Vec::new();
            for &id in &res {
                if oracle.contains(&id) {
                    touch(&mut oracle, id);
                } else {
                    missing.push(id);
                }
            }
            for id in missing {
                touch(&mut oracle, id);
            }
        } else {
            let n = rng.gen_range(1..8);
            let list: Vec<BlockId> = (0..n).map(|_| b(0, rng.gen_range(0..100))).collect();
            cache.prefetch_blocks(&list);
            for id in list {
                touch(&mut oracle, id);
            }
        }
        assert_eq!(cache.lru_order(), oracle, "diverged at step {step}");
    }
    println!("criterion 3 PASS: engine matches reference LRU state-for-state over 10,000 steps");
}

// ---------------------------------------------------------------------------
// Criterion 4: partitioner
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_partitioner() {
    // Two 4-cliques split 2/2 across two partitions: brute force over all
    // 2-partition assignments of capacity 4 confirms the optimum is zero
    // cross-partition load, and repartitioning reaches it.
    let a: Vec<BlockId> = (0..4).map(|i| b(0, i)).collect();
    let c: Vec<BlockId> = (10..14).map(|i| b(0, i)).collect();
    let all: Vec<BlockId> = a.iter().chain(c.iter()).copied().collect();
    let mut g = AffinityGraph::new();
    let clique_a: BTreeSet<BlockId> = a.iter().copied().collect();
    let clique_c: BTreeSet<BlockId> = c.iter().copied().collect();
    for _ in 0..5 {
        g.observe_query(&clique_a, 10);
        g.observe_query(&clique_c, 10);
    }

    // Brute force: choose 4 of 8 blocks for partition 0.
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << 8) {
        if mask.count_ones() != 4 {
            continue;
        }
        let g0: Vec<BlockId> = (0..8)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| all[i])
            .collect();
        let g1: Vec<BlockId> = (0..8)
            .filter(|i| mask & (1 << i) == 0)
            .map(|i| all[i])
            .collect();
        let ps = PartitionSet::from_groups(vec![g0, g1], 0, 4, 1.0, 10.0).unwrap();
        let total: f64 = (0..2).map(|id| ps.partition_load(id, &g)).sum();
        best = best.min(total);
    }
    assert!(best.abs() < 1e-12, "brute-force optimum {best} is not zero");

    let mut ps = PartitionSet::from_groups(
        vec![vec![a[0], a[1], c[0], c[1]], vec![a[2], a[3], c[2], c[3]]],
        1,
        4,
        1.0,
        10.0,
    )
    .unwrap();
    ps.repartition(&g);
    ps.check_invariants().unwrap();
    let total: f64 = (0..ps.len() as PartitionId)
        .map(|id| ps.partition_load(id, &g))
        .sum();
    assert!(
        total.abs() < 1e-12,
        "repartitioner left residual load {total}, optimum is 0"
    );

    // Disjoint cover across 100 randomized observe/repartition cycles.
    let spec = DatabaseSpec {
        name: "p".into(),
        tables: vec![TableSpec {
            name: "t".into(),
            rows: 320,
            rows_per_block: 4,
            grid: None,
            columns: vec![ColumnSpec {
                name: "x".into(),
                kind: ColumnKind::Numeric,
                min: Some(0.0),
                max: Some(1.0),
                vocab: None,
            }],
        }],
    };
    let db = generate_database(&spec, 4).unwrap();
    let mut ps = PartitionSet::initial(&db, 8, 0.9, 1.0, 10.0).unwrap();
    let total_blocks: usize = ps.partitions().iter().map(|p| p.blocks.len()).sum();
    let mut g = AffinityGraph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    for cycle in 0..100 {
        for _ in 0..15 {
            let start = rng.gen_range(0..75u32);
            let res: BTreeSet<BlockId> = (start..start + 5).map(|i| b(0, i)).collect();
            g.observe_query(&res, 15);
        }
        ps.repartition(&g);
        ps.check_invariants()
            .unwrap_or_else(|e| panic!("cycle {cycle}: {e}"));
        let after: usize = ps.partitions().iter().map(|p| p.blocks.len()).sum();
        assert_eq!(after, total_blocks, "cycle {cycle} changed block count");
        g.decay_weights(0.75).unwrap();
    }

    // An oversized clique raises theta at least once and terminates.
    let clique: Vec<BlockId> = (0..5).map(|i| b(0, i)).collect();
    let mut ps = PartitionSet::from_groups(
        vec![clique[..3].to_vec(), clique[3..].to_vec()],
        2,
        4,
        1.0,
        10.0,
    )
    .unwrap();
    let mut g = AffinityGraph::new();
    let res: BTreeSet<BlockId> = clique.iter().copied().collect();
    for _ in 0..50 {
        g.observe_query(&res, 10);
    }
    let theta_before = ps.theta;
    ps.repartition(&g);
    ps.check_invariants().unwrap();
    assert!(ps.theta > theta_before, "theta did not escalate");

    println!("criterion 4 PASS: two-clique optimum reached, disjoint cover over 100 cycles, theta escalation terminates");
}

// ---------------------------------------------------------------------------
// Criterion 5: desk-scale regular workload analog
// ---------------------------------------------------------------------------

fn desk_db() -> Database {
    let ranges = [
        (0.0, 360.0, -90.0, 90.0),
        (0.0, 1000.0, 0.0, 1.0),
        (-500.0, 500.0, 10.0, 20.0),
        (0.0, 42.0, 0.0, 9000.0),
        (100.0, 200.0, -1.0, 1.0),
    ];
    let spec = DatabaseSpec {
        name: "desk".into(),
        tables: ranges
            .iter()
            .enumerate()
            .map(|(i, &(a_lo, a_hi, b_lo, b_hi))| TableSpec {
                name: format!("t{i}"),
                rows: 1920,
                rows_per_block: 8,
                grid: None,
                columns: vec![
                    ColumnSpec {
                        name: "a".into(),
                        kind: ColumnKind::Numeric,
                        min: Some(a_lo),
                        max: Some(a_hi),
                        vocab: None,
                    },
                    ColumnSpec {
                        name: "b".into(),
                        kind: ColumnKind::Numeric,
                        min: Some(b_lo),
                        max: Some(b_hi),
                        vocab: None,
                    },
                    ColumnSpec {
                        name: "tag".into(),
                        kind: ColumnKind::Text,
                        min: None,
                        max: None,
                        vocab: Some(24),
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
    generate_database(&spec, 7).unwrap()
}

#[test]
fn criterion_05_desk_scale_regular_workload() {
    use prefetch_core::harness::{run_experiment, ExperimentConfig, SystemSpec};

    let start = Instant::now();
    let db = desk_db();
    let trace = generate_sql_workload(
        &db,
        SqlCategory::MReg,
        2500,
        9,
        &SqlWorkloadParams {
            range_width: 12,
            tables_used: 5,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = ExperimentConfig {
        cache_bytes: 192 * 8192,
        block_bytes: 8192,
        max_par_size: 16,
        l_be: 32,
        d_reduced: 16,
        lookback: 4,
        k: 8,
        l_p: 100,
        seed: 7,
        ..ExperimentConfig::default()
    };
    let rows = run_experiment(
        &cfg,
        &[SystemSpec::Semantic, SystemSpec::Lookahead],
        &db,
        &trace,
        "m-reg",
    )
    .unwrap();
    let np = rows.iter().find(|r| r.system == "np").unwrap();
    let la = rows.iter().find(|r| r.system == "lookahead").unwrap();
    let sem = rows.iter().find(|r| r.system == "semantic").unwrap();

    assert!(
        sem.hit_ratio >= 0.95,
        "semantic hit ratio {} below 0.95",
        sem.hit_ratio
    );
    assert!(
        sem.hit_ratio > np.hit_ratio,
        "semantic {} does not exceed np {}",
        sem.hit_ratio,
        np.hit_ratio
    );
    assert!(
        sem.hit_ratio > la.hit_ratio,
        "semantic {} does not exceed lookahead {}",
        sem.hit_ratio,
        la.hit_ratio
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "took {elapsed:?}");
    println!(
        "criterion 5 PASS: semantic hit ratio {:.4} (>= 0.95) vs np {:.4} and lookahead {:.4}, runtime {:.1}s (< 600s)",
        sem.hit_ratio,
        np.hit_ratio,
        la.hit_ratio,
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: baseline fidelity analog on s-rand
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_baseline_fidelity_s_rand() {
    use prefetch_core::harness::{run_experiment, ExperimentConfig, SystemSpec};

    let spec = DatabaseSpec {
        name: "srand".into(),
        tables: vec![TableSpec {
            name: "wide".into(),
            rows: 32_000,
            rows_per_block: 8,
            grid: None,
            columns: vec![
                ColumnSpec {
                    name: "a".into(),
                    kind: ColumnKind::Numeric,
                    min: Some(0.0),
                    max: Some(100.0),
                    vocab: None,
                },
                ColumnSpec {
                    name: "b".into(),
                    kind: ColumnKind::Numeric,
                    min: Some(-10.0),
                    max: Some(10.0),
                    vocab: None,
                },
            ],
        }],
    };
    let db = generate_database(&spec, 21).unwrap();
    let trace = generate_sql_workload(
        &db,
        SqlCategory::SRand,
        2000,
        23,
        &SqlWorkloadParams {
            range_width: 28,
            ..Default::default()
        },
    )
    .unwrap();
    let cfg = ExperimentConfig {
        cache_bytes: 3072 * 8192,
        block_bytes: 8192,
        max_par_size: 16,
        k: 1,
        l_p: 100,
        ..ExperimentConfig::default()
    };
    let rows = run_experiment(
        &cfg,
        &[SystemSpec::Lookahead, SystemSpec::RandReadahead],
        &db,
        &trace,
        "s-rand",
    )
    .unwrap();
    let la = rows.iter().find(|r| r.system == "lookahead").unwrap();
    let rr = rows.iter().find(|r| r.system == "rand-readahead").unwrap();
    let la_cov = la.coverage.expect("np misses > 0");
    let rr_cov = rr.coverage.expect("np misses > 0");

    assert!(
        (-0.02..=0.02).contains(&la_cov),
        "lookahead coverage {la_cov} outside [-0.02, 0.02]"
    );
    assert!(
        rr_cov > la_cov,
        "rand-readahead coverage {rr_cov} does not exceed lookahead {la_cov}"
    );
    println!(
        "criterion 6 PASS: lookahead coverage {la_cov:.4} within [-0.02, 0.02]; rand-readahead {rr_cov:.4} > lookahead"
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: query-encoding order invariance
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_order_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(701);
    let n_tb = 3;
    let l_be = 8;
    let encs: Vec<Array2<f64>> = (0..12)
        .map(|_| Array2::from_shape_fn((n_tb, l_be), |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let mut ids: Vec<PartitionId> = vec![0, 3, 5, 7, 9, 11];
    let base = encode_query(&ids, &encs, n_tb, l_be).unwrap();
    for shuffle in 0..1000 {
        ids.shuffle(&mut rng);
        let enc = encode_query(&ids, &encs, n_tb, l_be).unwrap();
        assert_eq!(enc, base, "shuffle {shuffle} changed the encoding");
    }
    println!("criterion 7 PASS: enc(q) bit-identical under 1000 random permutations");
}

// ---------------------------------------------------------------------------
// Criterion 8: fine-tune freeze
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_fine_tune_freeze() {
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let dims = ModelDims {
        n_tb: 2,
        l_be: 4,
        lookback: 3,
        n_partitions: 5,
        compressed: 16,
        hidden: 16,
    };
    let encs: Vec<Array2<f64>> = (0..5)
        .map(|_| Array2::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0)))
        .collect();
    let dim = 2 * 4;
    let mut examples = Vec::new();
    for endq in 2..80 {
        let mut window = Array2::zeros((3, dim));
        for (t, q) in ((endq - 2)..=endq).enumerate() {
            let flat: Vec<f64> = encs[q % 5].iter().copied().collect();
            window.row_mut(t).assign(&Array1::from_vec(flat));
        }
        let mut target = Array1::zeros(5);
        target[(endq + 1) % 5] = 1.0;
        examples.push(TrainingExample { window, target });
    }
    let (mut model, _) = train_model(
        &examples,
        dims,
        13,
        &TrainOpts {
            max_epochs: 5,
            ..Default::default()
        },
    )
    .unwrap();

    let (frozen_before, heads_before) = model.stage_checksums();
    fine_tune(&mut model, &examples, 15, 1e-5).unwrap();
    let (frozen_after, heads_after) = model.stage_checksums();
    assert_eq!(
        frozen_before, frozen_after,
        "compressor/encoder/decoder parameters changed"
    );
    assert_ne!(heads_before, heads_after, "head parameters did not change");
    println!("criterion 8 PASS: frozen-stage checksum unchanged, head checksum changed");
}

// ---------------------------------------------------------------------------
// Criterion 9: adaptivity analog
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_adaptivity_recovery() {
    use prefetch_core::harness::{
        run_adaptivity_scenario, AdaptivityParams, ExperimentConfig, SystemSpec,
    };

    let cfg = ExperimentConfig {
        cache_bytes: 4 << 20,
        block_bytes: 8192,
        max_par_size: 16,
        l_be: 16,
        d_reduced: 8,
        lookback: 4,
        k: 6,
        l_p: 100,
        max_epochs: 40,
        compressed_dim: 64,
        hidden_dim: 64,
        seed: 7,
        ..ExperimentConfig::default()
    };
    let params = AdaptivityParams::default();
    let report = run_adaptivity_scenario(
        &cfg,
        &[SystemSpec::Semantic, SystemSpec::Lookahead],
        &params,
        7,
    )
    .unwrap();

    let windows_per_batch = report.windows_per_batch();
    assert_eq!(windows_per_batch, 40); // 2000-query batches, 50-query windows
    let sem = report
        .series
        .iter()
        .find(|s| s.system == "semantic")
        .unwrap();
    assert_eq!(sem.hit_ratios.len(), 4 * windows_per_batch); // 160 windows
                                                             // NP is reported alongside.
    assert!(report.series.iter().any(|s| s.system == "np"));

    let head = (cfg.l_p as usize).div_ceil(params.window); // first ceil(l_p/50) windows
    for batch in 1..4 {
        let lo = batch * windows_per_batch;
        let hi = lo + windows_per_batch;
        let early: f64 = sem.hit_ratios[lo..lo + head].iter().sum::<f64>() / head as f64;
        let late: f64 = sem.hit_ratios[hi - 5..hi].iter().sum::<f64>() / 5.0;
        assert!(
            late > early,
            "batch {}: late mean {late:.4} does not exceed early mean {early:.4}",
            batch + 1
        );
        println!(
            "criterion 9: batch {} recovered from {early:.4} (first {head} windows) to {late:.4} (last 5 windows)",
            batch + 1
        );
    }
    println!("criterion 9 PASS: windowed hit ratio recovers within every shifted batch");
}

// ---------------------------------------------------------------------------
// Criterion 10: CLI determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_cli_determinism() {
    use std::process::Command;

    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("db.toml");
    std::fs::write(
        &spec_path,
        r#"name = "det"

[[tables]]
name = "alpha"
rows = 480
rows_per_block = 8

[[tables.columns]]
name = "x"
kind = "numeric"
min = 0.0
max = 100.0

[[tables.columns]]
name = "tag"
kind = "text"
vocab = 12

[[tables]]
name = "beta"
rows = 480
rows_per_block = 8

[[tables.columns]]
name = "y"
kind = "numeric"
min = -5.0
max = 5.0

[[tables.columns]]
name = "ts"
kind = "datetime"
"#,
    )
    .unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg_path,
        r#"[experiment]
cache_bytes = 262144
block_bytes = 8192
max_par_size = 8
l_be = 8
d_reduced = 6
lookback = 3
k = 3
l_p = 40
max_epochs = 15
compressed_dim = 16
hidden_dim = 16
seed = 11
"#,
    )
    .unwrap();

    let bin = env!("CARGO_BIN_EXE_prefetch-sim");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().expect("spawn cli");
        assert!(
            out.status.success(),
            "cli failed: {}\n{}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        );
    };

    let db = dir.path().join("db.json");
    let trace = dir.path().join("trace.jsonl");
    run(&[
        "gen-db",
        "--spec",
        spec_path.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        db.to_str().unwrap(),
    ]);
    run(&[
        "gen-trace",
        "--db",
        db.to_str().unwrap(),
        "--category",
        "m-reg",
        "--queries",
        "400",
        "--seed",
        "5",
        "--width",
        "4",
        "--tables-used",
        "2",
        "--out",
        trace.to_str().unwrap(),
    ]);

    let report_a = dir.path().join("a.csv");
    let report_b = dir.path().join("b.csv");
    for out in [&report_a, &report_b] {
        run(&[
            "run",
            "--db",
            db.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
            "--config",
            cfg_path.to_str().unwrap(),
            "--systems",
            "np,lookahead,naive,rand-readahead,semantic",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let a = std::fs::read(&report_a).unwrap();
    let bb = std::fs::read(&report_b).unwrap();
    assert_eq!(a, bb, "reports differ between identical runs");
    assert!(!a.is_empty());

    // The generated artifacts are byte-stable too.
    let trace2 = dir.path().join("trace2.jsonl");
    run(&[
        "gen-trace",
        "--db",
        db.to_str().unwrap(),
        "--category",
        "m-reg",
        "--queries",
        "400",
        "--seed",
        "5",
        "--width",
        "4",
        "--tables-used",
        "2",
        "--out",
        trace2.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(&trace).unwrap(),
        std::fs::read(&trace2).unwrap()
    );
    println!("criterion 10 PASS: repeated CLI runs produce byte-identical reports and traces");
}
