use super::*;
use crate::datastore::BlockId;
use crate::nn::max_rel_grad_error;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_partition_encodings(
    n_parts: usize,
    n_tb: usize,
    l_be: usize,
    seed: u64,
) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_parts)
        .map(|_| Array2::from_shape_fn((n_tb, l_be), |_| rng.gen_range(-1.0..1.0)))
        .collect()
}

// --- encode_query ------------------------------------------------------------

#[test]
fn single_partition_query_encodes_to_that_partition() {
    let encs = toy_partition_encodings(6, 2, 3, 1);
    let enc = encode_query(&[5], &encs, 2, 3).unwrap();
    assert_eq!(enc, encs[5]);
}

#[test]
fn query_encoding_is_order_invariant() {
    let encs = toy_partition_encodings(8, 2, 3, 2);
    let mut ids: Vec<PartitionId> = vec![1, 4, 6, 2];
    let base = encode_query(&ids, &encs, 2, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        ids.shuffle(&mut rng);
        let enc = encode_query(&ids, &encs, 2, 3).unwrap();
        assert_eq!(enc, base);
    }
}

#[test]
fn empty_query_encodes_to_zero_matrix() {
    let encs = toy_partition_encodings(4, 2, 3, 4);
    let enc = encode_query(&[], &encs, 2, 3).unwrap();
    assert!(enc.iter().all(|&v| v == 0.0));
}

#[test]
fn stale_partition_id_is_an_integrity_error() {
    let encs = toy_partition_encodings(4, 2, 3, 5);
    assert!(matches!(
        encode_query(&[9], &encs, 2, 3),
        Err(Error::Integrity(_))
    ));
}

// --- build_training_set -------------------------------------------------------

fn record(q: u64, blocks: &[(u32, u32)]) -> QueryRecord {
    QueryRecord {
        query_id: q,
        timestep: q,
        accessed_blocks: blocks.iter().map(|&(t, b)| BlockId::new(t, b)).collect(),
        label: None,
    }
}

fn three_partition_set() -> PartitionSet {
    PartitionSet::from_groups(
        vec![
            vec![BlockId::new(0, 0), BlockId::new(0, 1)],
            vec![BlockId::new(0, 2), BlockId::new(0, 3)],
            vec![BlockId::new(0, 4), BlockId::new(0, 5)],
        ],
        0,
        4,
        1.0,
        10.0,
    )
    .unwrap()
}

#[test]
fn window_count_is_n_minus_lookback() {
    let ps = three_partition_set();
    let encs = toy_partition_encodings(3, 1, 2, 6);
    let records: Vec<QueryRecord> = (0..10).map(|q| record(q, &[(0, (q % 6) as u32)])).collect();
    let set = build_training_set(&records, &ps, &encs, 4, 1, 2).unwrap();
    assert_eq!(set.len(), 6);
}

#[test]
fn trace_of_exactly_lookback_yields_empty_set() {
    let ps = three_partition_set();
    let encs = toy_partition_encodings(3, 1, 2, 6);
    let records: Vec<QueryRecord> = (0..4).map(|q| record(q, &[(0, 0)])).collect();
    let set = build_training_set(&records, &ps, &encs, 4, 1, 2).unwrap();
    assert!(set.is_empty());
}

#[test]
fn target_bits_mark_next_query_partitions() {
    let ps = three_partition_set();
    let encs = toy_partition_encodings(3, 1, 2, 7);
    // Queries hit partitions 0, 1, 2, 0 in turn (block 2i lives in
    // partition i).
    let records = vec![
        record(0, &[(0, 0)]),
        record(1, &[(0, 2)]),
        record(2, &[(0, 4)]),
        record(3, &[(0, 0), (0, 2)]),
    ];
    let set = build_training_set(&records, &ps, &encs, 2, 1, 2).unwrap();
    assert_eq!(set.len(), 2);
    // First window covers queries 0..1, target = partitions of query 2 = {2}.
    assert_eq!(set[0].target.to_vec(), vec![0.0, 0.0, 1.0]);
    // Second window covers queries 1..2, target = {0, 1}.
    assert_eq!(set[1].target.to_vec(), vec![1.0, 1.0, 0.0]);
}

// --- select_topk -------------------------------------------------------------

#[test]
fn topk_orders_by_probability() {
    assert_eq!(select_topk(&[0.9, 0.1, 0.5], 2), vec![0, 2]);
}

#[test]
fn topk_zero_is_empty() {
    assert!(select_topk(&[0.9, 0.1], 0).is_empty());
}

#[test]
fn topk_ties_prefer_lower_id_and_k_clamps() {
    assert_eq!(select_topk(&[0.5, 0.5], 1), vec![0]);
    assert_eq!(select_topk(&[0.2, 0.8], 10), vec![1, 0]);
}

// --- the model ---------------------------------------------------------------

fn cyclic_examples(
    n_parts: usize,
    n_tb: usize,
    l_be: usize,
    lookback: usize,
    n_queries: usize,
    seed: u64,
) -> (Vec<TrainingExample>, Vec<Array2<f64>>) {
    let encs = toy_partition_encodings(n_parts, n_tb, l_be, seed);
    let dim = n_tb * l_be;
    let mut examples = Vec::new();
    for end in (lookback - 1)..(n_queries - 1) {
        let mut window = Array2::zeros((lookback, dim));
        for (t, q) in ((end + 1 - lookback)..=end).enumerate() {
            let flat: Vec<f64> = encs[q % n_parts].iter().copied().collect();
            window.row_mut(t).assign(&ndarray::Array1::from_vec(flat));
        }
        let mut target = ndarray::Array1::zeros(n_parts);
        target[(end + 1) % n_parts] = 1.0;
        examples.push(TrainingExample { window, target });
    }
    (examples, encs)
}

fn small_dims(n_tb: usize, l_be: usize, lookback: usize, n_parts: usize) -> ModelDims {
    ModelDims {
        n_tb,
        l_be,
        lookback,
        n_partitions: n_parts,
        compressed: 16,
        hidden: 16,
    }
}

#[test]
fn cyclic_pattern_is_learned() {
    let (examples, encs) = cyclic_examples(4, 2, 3, 4, 160, 11);
    let dims = small_dims(2, 3, 4, 4);
    let (model, stats) = train_model(&examples, dims, 5, &TrainOpts::default()).unwrap();
    assert!(stats.last().unwrap().train_loss <= stats.first().unwrap().train_loss);

    let mut correct = 0usize;
    for e in &examples {
        let yhat = model.predict(&e.window).unwrap();
        let pred = select_topk(yhat.as_slice().unwrap(), 1)[0] as usize;
        let truth = e
            .target
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot target");
        if pred == truth {
            correct += 1;
        }
    }
    let acc = correct as f64 / examples.len() as f64;
    assert!(acc >= 0.95, "held-in argmax accuracy {acc}");

    // A window ending at p2 must predict p3: queries 3,4,5,6 hit partitions
    // 3,0,1,2, so the next is 3.
    let dim = 2 * 3;
    let mut window = Array2::zeros((4, dim));
    for (t, q) in (3..7).enumerate() {
        let flat: Vec<f64> = encs[q % 4].iter().copied().collect();
        window.row_mut(t).assign(&ndarray::Array1::from_vec(flat));
    }
    let yhat = model.predict(&window).unwrap();
    assert_eq!(select_topk(yhat.as_slice().unwrap(), 1), vec![3]);
}

#[test]
fn predictions_stay_in_open_unit_interval_and_are_pure() {
    let (examples, _) = cyclic_examples(3, 1, 2, 2, 20, 13);
    let dims = small_dims(1, 2, 2, 3);
    let model = PredictionModel::new(dims, 3);
    let a = model.predict(&examples[0].window).unwrap();
    let b = model.predict(&examples[0].window).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn wrong_window_length_is_a_dimension_error() {
    let dims = small_dims(1, 2, 3, 3);
    let model = PredictionModel::new(dims, 3);
    let window = Array2::zeros((2, 2));
    assert!(model.predict(&window).is_err());
}

#[test]
fn training_is_deterministic() {
    let (examples, _) = cyclic_examples(3, 1, 2, 2, 40, 17);
    let dims = small_dims(1, 2, 2, 3);
    let opts = TrainOpts {
        max_epochs: 5,
        ..Default::default()
    };
    let (a, _) = train_model(&examples, dims, 9, &opts).unwrap();
    let (b, _) = train_model(&examples, dims, 9, &opts).unwrap();
    assert_eq!(a.params_flat(), b.params_flat());
}

#[test]
fn full_stack_gradients_match_finite_differences() {
    let dims = ModelDims {
        n_tb: 1,
        l_be: 3,
        lookback: 2,
        n_partitions: 3,
        compressed: 4,
        hidden: 3,
    };
    let model = PredictionModel::new(dims, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let w1 = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
    let w2 = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
    let targets = Array2::from_shape_fn((2, 3), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });

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
    assert!(err < 1e-4, "max relative gradient error {err}");
}

#[test]
fn batched_loss_matches_the_per_vector_bce() {
    use crate::nn::{bce_batch, binary_cross_entropy};
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let y = Array2::from_shape_fn((6, 5), |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    let yhat = Array2::from_shape_fn((6, 5), |_| rng.gen_range(0.01..0.99));
    let (batched, _) = bce_batch(&y, &yhat).unwrap();
    let mut manual = 0.0;
    for (yr, pr) in y.rows().into_iter().zip(yhat.rows()) {
        manual += binary_cross_entropy(yr.as_slice().unwrap(), pr.as_slice().unwrap())
            .unwrap()
            .0;
    }
    manual /= 6.0;
    assert!((batched - manual).abs() < 1e-12);
}

// --- fine-tuning --------------------------------------------------------------

#[test]
fn fine_tune_freezes_everything_before_the_heads() {
    let (examples, _) = cyclic_examples(4, 2, 2, 3, 60, 23);
    let dims = small_dims(2, 2, 3, 4);
    let opts = TrainOpts {
        max_epochs: 3,
        ..Default::default()
    };
    let (mut model, _) = train_model(&examples, dims, 7, &opts).unwrap();
    let (frozen_before, heads_before) = model.stage_checksums();
    fine_tune(&mut model, &examples, 15, 1e-5).unwrap();
    let (frozen_after, heads_after) = model.stage_checksums();
    assert_eq!(frozen_before, frozen_after, "frozen stage changed");
    assert_ne!(heads_before, heads_after, "heads did not move");
}

#[test]
fn fine_tune_on_empty_set_is_a_no_op() {
    let dims = small_dims(1, 2, 2, 3);
    let mut model = PredictionModel::new(dims, 3);
    let before = model.params_flat();
    fine_tune(&mut model, &[], 15, 1e-5).unwrap();
    assert_eq!(model.params_flat(), before);
}

// --- checkpointing --------------------------------------------------------------

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dims = small_dims(2, 3, 4, 5);
    let model = PredictionModel::new(dims, 41);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    model.save(&path).unwrap();
    let back = PredictionModel::load(&path).unwrap();
    assert_eq!(back.dims, model.dims);
    assert_eq!(back.params_flat(), model.params_flat());
}
