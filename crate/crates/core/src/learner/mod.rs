//! Query encodings, the encoder-decoder sequence model over them, top-k
//! selection, and head-only fine-tuning after repartitioning.
//!
//! A query is encoded as the element-wise mean of the partition-encoding
//! matrices of the partitions it touched, so the encoding depends only on
//! the accessed set, not on any ordering. Windows of `lookback` consecutive
//! query encodings predict a per-partition access-probability vector for the
//! next query.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::QueryRecord;
use crate::encoding::EpochStat;
use crate::error::{Error, Result};
use crate::nn::{
    bce_batch, Activation, AdamParams, AdamState, DenseCache, DenseGrads, DenseLayer, LstmCell,
    LstmGrads, LstmStepCache, NamedTensor,
};
use crate::partitioning::{PartitionId, PartitionSet};

/// One query's (n_tb, l_be) encoding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEncoding {
    pub query_id: u64,
    pub matrix: Array2<f64>,
}

/// Element-wise mean of the accessed partitions' encoding matrices.
/// The input order is irrelevant: ids are deduplicated and summed in
/// ascending order, so the result is bit-identical under permutation.
/// An empty set yields the zero matrix.
pub fn encode_query(
    res_p: &[PartitionId],
    partition_encodings: &[Array2<f64>],
    n_tb: usize,
    l_be: usize,
) -> Result<Array2<f64>> {
    let ids: BTreeSet<PartitionId> = res_p.iter().copied().collect();
    let mut acc = Array2::zeros((n_tb, l_be));
    if ids.is_empty() {
        return Ok(acc);
    }
    for &pid in &ids {
        let enc = partition_encodings.get(pid as usize).ok_or_else(|| {
            Error::integrity(format!("no encoding for partition {pid}; stale id"))
        })?;
        if enc.dim() != (n_tb, l_be) {
            return Err(Error::dimension(format!(
                "partition {pid} encoding has shape {:?}, expected ({n_tb}, {l_be})",
                enc.dim()
            )));
        }
        acc += enc;
    }
    acc /= ids.len() as f64;
    Ok(acc)
}

/// One supervised example: `lookback` consecutive query encodings (rows are
/// flattened (n_tb * l_be) matrices) and the next query's partition bitmap.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub window: Array2<f64>,
    pub target: Array1<f64>,
}

/// Builds one example per window position: for a trace of N records exactly
/// N - lookback examples; shorter traces yield an empty set.
pub fn build_training_set(
    records: &[QueryRecord],
    ps: &PartitionSet,
    partition_encodings: &[Array2<f64>],
    lookback: usize,
    n_tb: usize,
    l_be: usize,
) -> Result<Vec<TrainingExample>> {
    if lookback == 0 {
        return Err(Error::config("lookback must be >= 1"));
    }
    let n = records.len();
    if n < lookback + 1 {
        return Ok(Vec::new());
    }
    let dim = n_tb * l_be;
    // Encode every query once.
    let encodings: Vec<Vec<f64>> = records
        .iter()
        .map(|rec| {
            let res_p: Vec<PartitionId> =
                ps.partitions_of(&rec.accessed_blocks).into_iter().collect();
            encode_query(&res_p, partition_encodings, n_tb, l_be).map(|m| m.into_iter().collect())
        })
        .collect::<Result<_>>()?;

    let n_parts = ps.len();
    let mut out = Vec::with_capacity(n - lookback);
    for end in (lookback - 1)..(n - 1) {
        let mut window = Array2::zeros((lookback, dim));
        for (t, src) in ((end + 1 - lookback)..=end).enumerate() {
            window
                .row_mut(t)
                .assign(&Array1::from_vec(encodings[src].clone()));
        }
        let mut target = Array1::zeros(n_parts);
        for pid in ps.partitions_of(&records[end + 1].accessed_blocks) {
            target[pid as usize] = 1.0;
        }
        out.push(TrainingExample { window, target });
    }
    Ok(out)
}

/// Ids of the k largest probabilities, descending; ties broken by the lower
/// partition id. `k >= len` returns every id.
pub fn select_topk(yhat: &[f64], k: usize) -> Vec<PartitionId> {
    let mut idx: Vec<usize> = (0..yhat.len()).collect();
    idx.sort_by(|&a, &b| {
        yhat[b]
            .partial_cmp(&yhat[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx.into_iter().map(|i| i as PartitionId).collect()
}

// ---------------------------------------------------------------------------
// Prediction model
// ---------------------------------------------------------------------------

/// Architecture sizes. `compressed` and `hidden` default to the 128-dim
/// time-distributed compressor and 64-cell LSTMs of the experiment setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_tb: usize,
    pub l_be: usize,
    pub lookback: usize,
    pub n_partitions: usize,
    pub compressed: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub fn new(n_tb: usize, l_be: usize, lookback: usize, n_partitions: usize) -> Self {
        ModelDims {
            n_tb,
            l_be,
            lookback,
            n_partitions,
            compressed: 128,
            hidden: 64,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_tb * self.l_be
    }
}

/// Time-distributed compressor -> encoder LSTM -> decoder LSTM (initialized
/// with the encoder's final states, consuming the compressed sequence again)
/// -> two dense heads of `n_partitions` units, sigmoid last.
#[derive(Debug, Clone)]
pub struct PredictionModel {
    pub dims: ModelDims,
    pub compressor: DenseLayer,
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub head1: DenseLayer,
    pub head2: DenseLayer,
}

pub struct ForwardCache {
    comp: Vec<DenseCache>,
    enc: Vec<LstmStepCache>,
    dec: Vec<LstmStepCache>,
    h1: DenseCache,
    h2: DenseCache,
}

pub struct ModelGrads {
    pub comp: DenseGrads,
    pub enc: LstmGrads,
    pub dec: LstmGrads,
    pub h1: DenseGrads,
    pub h2: DenseGrads,
}

impl PredictionModel {
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let compressor = DenseLayer::new(
            dims.input_dim(),
            dims.compressed,
            Activation::Tanh,
            &mut rng,
        );
        let encoder = LstmCell::new(dims.compressed, dims.hidden, &mut rng);
        let decoder = LstmCell::new(dims.compressed, dims.hidden, &mut rng);
        let head1 = DenseLayer::new(dims.hidden, dims.n_partitions, Activation::Tanh, &mut rng);
        let head2 = DenseLayer::new(
            dims.n_partitions,
            dims.n_partitions,
            Activation::Sigmoid,
            &mut rng,
        );
        PredictionModel {
            dims,
            compressor,
            encoder,
            decoder,
            head1,
            head2,
        }
    }

    /// Batched forward pass. `windows` rows are flattened query encodings,
    /// one matrix per batch element of shape (lookback, n_tb * l_be).
    pub fn forward_batch(&self, windows: &[&Array2<f64>]) -> Result<(Array2<f64>, ForwardCache)> {
        let l = self.dims.lookback;
        let batch = windows.len();
        if batch == 0 {
            return Err(Error::dimension("empty batch"));
        }
        for w in windows {
            if w.dim() != (l, self.dims.input_dim()) {
                return Err(Error::dimension(format!(
                    "window shape {:?}, expected ({l}, {})",
                    w.dim(),
                    self.dims.input_dim()
                )));
            }
        }

        // Compress each timestep across the batch.
        let mut comp_caches = Vec::with_capacity(l);
        let mut z = Vec::with_capacity(l);
        for t in 0..l {
            let mut xt = Array2::zeros((batch, self.dims.input_dim()));
            for (bi, w) in windows.iter().enumerate() {
                xt.row_mut(bi).assign(&w.row(t));
            }
            let (zt, cache) = self.compressor.forward(&xt)?;
            comp_caches.push(cache);
            z.push(zt);
        }

        // Encoder.
        let (mut he, mut ce) = self.encoder.zero_state(batch);
        let mut enc_caches = Vec::with_capacity(l);
        for zt in &z {
            let (h2, c2, cache) = self.encoder.step(zt, &he, &ce)?;
            he = h2;
            ce = c2;
            enc_caches.push(cache);
        }

        // Decoder, initialized with the encoder's final states, replaying
        // the compressed sequence.
        let mut hd = he;
        let mut cd = ce;
        let mut dec_caches = Vec::with_capacity(l);
        for zt in &z {
            let (h2, c2, cache) = self.decoder.step(zt, &hd, &cd)?;
            hd = h2;
            cd = c2;
            dec_caches.push(cache);
        }

        let (u, h1_cache) = self.head1.forward(&hd)?;
        let (yhat, h2_cache) = self.head2.forward(&u)?;
        Ok((
            yhat,
            ForwardCache {
                comp: comp_caches,
                enc: enc_caches,
                dec: dec_caches,
                h1: h1_cache,
                h2: h2_cache,
            },
        ))
    }

    /// Single-window prediction: probability per partition, each in (0, 1).
    pub fn predict(&self, window: &Array2<f64>) -> Result<Array1<f64>> {
        let (yhat, _) = self.forward_batch(&[window])?;
        Ok(yhat.row(0).to_owned())
    }

    /// Full backward pass from the loss gradient in yhat.
    pub fn backward(&self, cache: &ForwardCache, dyhat: &Array2<f64>) -> ModelGrads {
        let l = self.dims.lookback;
        let batch = dyhat.nrows();
        let (g_h2, du) = self.head2.backward(&cache.h2, dyhat);
        let (g_h1, dhd) = self.head1.backward(&cache.h1, &du);

        let mut g_dec = LstmGrads::zeros(&self.decoder);
        let mut dz: Vec<Array2<f64>> = Vec::with_capacity(l);
        let mut dh = dhd;
        let mut dc = Array2::zeros((batch, self.dims.hidden));
        for t in (0..l).rev() {
            let (dzt, dhp, dcp) = self
                .decoder
                .backward_step(&cache.dec[t], &dh, &dc, &mut g_dec);
            dz.push(dzt);
            dh = dhp;
            dc = dcp;
        }
        dz.reverse();

        // The decoder's initial state is the encoder's final state, so the
        // remaining (dh, dc) flow into the encoder's last step.
        let mut g_enc = LstmGrads::zeros(&self.encoder);
        for t in (0..l).rev() {
            let (dzt, dhp, dcp) = self
                .encoder
                .backward_step(&cache.enc[t], &dh, &dc, &mut g_enc);
            dz[t] += &dzt;
            dh = dhp;
            dc = dcp;
        }

        let mut g_comp = DenseGrads::zeros(self.compressor.out_dim(), self.compressor.in_dim());
        for (dzt, comp_cache) in dz.iter().zip(&cache.comp) {
            let (g, _) = self.compressor.backward(comp_cache, dzt);
            g_comp.dw += &g.dw;
            g_comp.db += &g.db;
        }

        ModelGrads {
            comp: g_comp,
            enc: g_enc,
            dec: g_dec,
            h1: g_h1,
            h2: g_h2,
        }
    }

    /// Backward restricted to the two dense heads (used by fine-tuning,
    /// which freezes everything before them).
    pub fn backward_heads(
        &self,
        cache: &ForwardCache,
        dyhat: &Array2<f64>,
    ) -> (DenseGrads, DenseGrads) {
        let (g_h2, du) = self.head2.backward(&cache.h2, dyhat);
        let (g_h1, _) = self.head1.backward(&cache.h1, &du);
        (g_h1, g_h2)
    }

    pub fn param_names() -> Vec<String> {
        vec![
            "compressor.w".into(),
            "compressor.b".into(),
            "encoder.wx".into(),
            "encoder.wh".into(),
            "encoder.b".into(),
            "decoder.wx".into(),
            "decoder.wh".into(),
            "decoder.b".into(),
            "head1.w".into(),
            "head1.b".into(),
            "head2.w".into(),
            "head2.b".into(),
        ]
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.compressor.w.iter());
        out.extend(self.compressor.b.iter());
        out.extend(self.encoder.wx.iter());
        out.extend(self.encoder.wh.iter());
        out.extend(self.encoder.b.iter());
        out.extend(self.decoder.wx.iter());
        out.extend(self.decoder.wh.iter());
        out.extend(self.decoder.b.iter());
        out.extend(self.head1.w.iter());
        out.extend(self.head1.b.iter());
        out.extend(self.head2.w.iter());
        out.extend(self.head2.b.iter());
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut idx = 0;
        let mut fill = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[idx..idx + dst.len()]);
            idx += dst.len();
        };
        fill(self.compressor.w.as_slice_mut().expect("layout"));
        fill(self.compressor.b.as_slice_mut().expect("layout"));
        fill(self.encoder.wx.as_slice_mut().expect("layout"));
        fill(self.encoder.wh.as_slice_mut().expect("layout"));
        fill(self.encoder.b.as_slice_mut().expect("layout"));
        fill(self.decoder.wx.as_slice_mut().expect("layout"));
        fill(self.decoder.wh.as_slice_mut().expect("layout"));
        fill(self.decoder.b.as_slice_mut().expect("layout"));
        fill(self.head1.w.as_slice_mut().expect("layout"));
        fill(self.head1.b.as_slice_mut().expect("layout"));
        fill(self.head2.w.as_slice_mut().expect("layout"));
        fill(self.head2.b.as_slice_mut().expect("layout"));
        assert_eq!(idx, flat.len(), "parameter vector length mismatch");
    }

    pub fn grads_flat(g: &ModelGrads) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(g.comp.dw.iter());
        out.extend(g.comp.db.iter());
        out.extend(g.enc.dwx.iter());
        out.extend(g.enc.dwh.iter());
        out.extend(g.enc.db.iter());
        out.extend(g.dec.dwx.iter());
        out.extend(g.dec.dwh.iter());
        out.extend(g.dec.db.iter());
        out.extend(g.h1.dw.iter());
        out.extend(g.h1.db.iter());
        out.extend(g.h2.dw.iter());
        out.extend(g.h2.db.iter());
        out
    }

    /// Checksums of the frozen stage (compressor + both LSTMs) and the head
    /// stage, for freeze verification.
    pub fn stage_checksums(&self) -> (u64, u64) {
        let sum = |vals: &mut dyn Iterator<Item = f64>| -> u64 {
            let mut h = 0xcbf2_9ce4_8422_2325u64;
            for v in vals {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
            h
        };
        let frozen = sum(&mut self
            .compressor
            .w
            .iter()
            .chain(self.compressor.b.iter())
            .chain(self.encoder.wx.iter())
            .chain(self.encoder.wh.iter())
            .chain(self.encoder.b.iter())
            .chain(self.decoder.wx.iter())
            .chain(self.decoder.wh.iter())
            .chain(self.decoder.b.iter())
            .copied());
        let heads = sum(&mut self
            .head1
            .w
            .iter()
            .chain(self.head1.b.iter())
            .chain(self.head2.w.iter())
            .chain(self.head2.b.iter())
            .copied());
        (frozen, heads)
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let t2 = |name: &str, a: &Array2<f64>| {
            NamedTensor::new(
                name,
                vec![a.nrows(), a.ncols()],
                a.iter().copied().collect(),
            )
            .expect("consistent shape")
        };
        let t1 = |name: &str, a: &Array1<f64>| {
            NamedTensor::new(name, vec![a.len()], a.to_vec()).expect("consistent shape")
        };
        vec![
            t2("compressor.w", &self.compressor.w),
            t1("compressor.b", &self.compressor.b),
            t2("encoder.wx", &self.encoder.wx),
            t2("encoder.wh", &self.encoder.wh),
            t1("encoder.b", &self.encoder.b),
            t2("decoder.wx", &self.decoder.wx),
            t2("decoder.wh", &self.decoder.wh),
            t1("decoder.b", &self.decoder.b),
            t2("head1.w", &self.head1.w),
            t1("head1.b", &self.head1.b),
            t2("head2.w", &self.head2.w),
            t1("head2.b", &self.head2.b),
        ]
    }

    pub fn from_tensors(dims: ModelDims, tensors: &[NamedTensor]) -> Result<Self> {
        let find = |name: &str| -> Result<&NamedTensor> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Serialization(format!("missing tensor `{name}`")))
        };
        let m2 = |name: &str| -> Result<Array2<f64>> {
            let t = find(name)?;
            if t.shape.len() != 2 {
                return Err(Error::Serialization(format!("tensor {name} not rank 2")));
            }
            Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
                .map_err(|e| Error::Serialization(e.to_string()))
        };
        let v1 =
            |name: &str| -> Result<Array1<f64>> { Ok(Array1::from_vec(find(name)?.data.clone())) };

        let compressor =
            DenseLayer::from_parts(m2("compressor.w")?, v1("compressor.b")?, Activation::Tanh)?;
        let head1 = DenseLayer::from_parts(m2("head1.w")?, v1("head1.b")?, Activation::Tanh)?;
        let head2 = DenseLayer::from_parts(m2("head2.w")?, v1("head2.b")?, Activation::Sigmoid)?;
        let lstm = |prefix: &str| -> Result<LstmCell> {
            let wx = m2(&format!("{prefix}.wx"))?;
            let wh = m2(&format!("{prefix}.wh"))?;
            let b = v1(&format!("{prefix}.b"))?;
            let hidden = wh.ncols();
            let input = wx.ncols();
            if wx.nrows() != 4 * hidden || wh.nrows() != 4 * hidden || b.len() != 4 * hidden {
                return Err(Error::Serialization(format!(
                    "{prefix}: inconsistent gate shapes"
                )));
            }
            Ok(LstmCell {
                wx,
                wh,
                b,
                input,
                hidden,
            })
        };
        Ok(PredictionModel {
            dims,
            compressor,
            encoder: lstm("encoder")?,
            decoder: lstm("decoder")?,
            head1,
            head2,
        })
    }

    /// Checkpoint: a JSON dims header followed by the tensor container.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"PMDL")?;
        let header = serde_json::to_vec(&self.dims)
            .map_err(|e| Error::Serialization(format!("model dims: {e}")))?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        crate::nn::write_tensors(&mut w, &self.to_tensors())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"PMDL" {
            return Err(Error::Serialization("bad model checkpoint magic".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let dims: ModelDims = serde_json::from_slice(&header)
            .map_err(|e| Error::Serialization(format!("model dims: {e}")))?;
        let tensors = crate::nn::read_tensors(&mut r)?;
        Self::from_tensors(dims, &tensors)
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Training options: batches of 32, at most 75 epochs, early stopping on a
/// 10% validation split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainOpts {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub val_frac: f64,
    pub patience: usize,
    pub adam: AdamParams,
}

impl Default for TrainOpts {
    fn default() -> Self {
        TrainOpts {
            max_epochs: 75,
            batch_size: 32,
            val_frac: 0.1,
            patience: 5,
            adam: AdamParams::default(),
        }
    }
}

fn eval_loss(model: &PredictionModel, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let windows: Vec<&Array2<f64>> = examples.iter().map(|e| &e.window).collect();
    let (yhat, _) = model.forward_batch(&windows)?;
    let mut targets = Array2::zeros((examples.len(), examples[0].target.len()));
    for (i, e) in examples.iter().enumerate() {
        targets.row_mut(i).assign(&e.target);
    }
    Ok(bce_batch(&targets, &yhat)?.0)
}

fn full_adam_step(
    model: &mut PredictionModel,
    adam: &mut AdamState,
    grads: &ModelGrads,
) -> Result<()> {
    let gs: Vec<Vec<f64>> = vec![
        grads.comp.dw.iter().copied().collect(),
        grads.comp.db.to_vec(),
        grads.enc.dwx.iter().copied().collect(),
        grads.enc.dwh.iter().copied().collect(),
        grads.enc.db.to_vec(),
        grads.dec.dwx.iter().copied().collect(),
        grads.dec.dwh.iter().copied().collect(),
        grads.dec.db.to_vec(),
        grads.h1.dw.iter().copied().collect(),
        grads.h1.db.to_vec(),
        grads.h2.dw.iter().copied().collect(),
        grads.h2.db.to_vec(),
    ];
    let g_refs: Vec<&[f64]> = gs.iter().map(|v| v.as_slice()).collect();

    let PredictionModel {
        compressor,
        encoder,
        decoder,
        head1,
        head2,
        ..
    } = model;
    let mut p_refs: Vec<&mut [f64]> = vec![
        compressor.w.as_slice_mut().expect("layout"),
        compressor.b.as_slice_mut().expect("layout"),
        encoder.wx.as_slice_mut().expect("layout"),
        encoder.wh.as_slice_mut().expect("layout"),
        encoder.b.as_slice_mut().expect("layout"),
        decoder.wx.as_slice_mut().expect("layout"),
        decoder.wh.as_slice_mut().expect("layout"),
        decoder.b.as_slice_mut().expect("layout"),
        head1.w.as_slice_mut().expect("layout"),
        head1.b.as_slice_mut().expect("layout"),
        head2.w.as_slice_mut().expect("layout"),
        head2.b.as_slice_mut().expect("layout"),
    ];
    adam.step(&mut p_refs, &g_refs)
}

fn batch_of<'a>(
    examples: &'a [TrainingExample],
    idxs: &[usize],
) -> (Vec<&'a Array2<f64>>, Array2<f64>) {
    let windows: Vec<&Array2<f64>> = idxs.iter().map(|&i| &examples[i].window).collect();
    let mut targets = Array2::zeros((idxs.len(), examples[0].target.len()));
    for (row, &i) in idxs.iter().enumerate() {
        targets.row_mut(row).assign(&examples[i].target);
    }
    (windows, targets)
}

/// Trains a fresh model on the example set. Deterministic for a fixed seed;
/// the returned model carries the best-scoring parameters seen, so the final
/// training loss never exceeds the initial one.
pub fn train_model(
    examples: &[TrainingExample],
    dims: ModelDims,
    seed: u64,
    opts: &TrainOpts,
) -> Result<(PredictionModel, Vec<EpochStat>)> {
    if examples.is_empty() {
        return Err(Error::config("training needs at least 1 example"));
    }
    for e in examples {
        if e.target.len() != dims.n_partitions {
            return Err(Error::dimension(format!(
                "target length {} does not match |P| = {}",
                e.target.len(),
                dims.n_partitions
            )));
        }
    }

    let mut model = PredictionModel::new(dims, seed);
    let mut adam = AdamState::new(opts.adam, PredictionModel::param_names());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005A_D077);

    let n = examples.len();
    let n_val = if n >= 10 {
        ((n as f64) * opts.val_frac).floor() as usize
    } else {
        0
    };
    let (train, val) = examples.split_at(n - n_val);

    let mut stats = Vec::new();
    let initial_train = eval_loss(&model, train)?;
    let initial_val = if n_val > 0 {
        Some(eval_loss(&model, val)?)
    } else {
        None
    };
    stats.push(EpochStat {
        epoch: 0,
        train_loss: initial_train,
        val_loss: initial_val,
    });

    let mut best_score = initial_val.unwrap_or(initial_train);
    let mut best_params = model.params_flat();
    let mut bad_epochs = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let (windows, targets) = batch_of(train, chunk);
            let (yhat, cache) = model.forward_batch(&windows)?;
            let (loss, dyhat) = bce_batch(&targets, &yhat)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite prediction loss at epoch {epoch}"
                )));
            }
            let grads = model.backward(&cache, &dyhat);
            full_adam_step(&mut model, &mut adam, &grads)?;
        }

        let train_loss = eval_loss(&model, train)?;
        let val_loss = if n_val > 0 {
            Some(eval_loss(&model, val)?)
        } else {
            None
        };
        stats.push(EpochStat {
            epoch,
            train_loss,
            val_loss,
        });

        let score = val_loss.unwrap_or(train_loss);
        if score < best_score - 1e-12 {
            best_score = score;
            best_params = model.params_flat();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if n_val > 0 && bad_epochs > opts.patience {
                break;
            }
        }
    }

    model.set_params_flat(&best_params);
    Ok((model, stats))
}

/// Fine-tunes only the two dense heads for exactly `epochs` epochs at the
/// given learning rate; compressor and both LSTMs stay bit-identical. An
/// empty example set leaves the model entirely unchanged.
pub fn fine_tune(
    model: &mut PredictionModel,
    examples: &[TrainingExample],
    epochs: usize,
    lr: f64,
) -> Result<()> {
    if examples.is_empty() {
        return Ok(());
    }
    for e in examples {
        if e.target.len() != model.dims.n_partitions {
            return Err(Error::dimension(format!(
                "target length {} does not match |P| = {}",
                e.target.len(),
                model.dims.n_partitions
            )));
        }
    }
    let mut adam = AdamState::new(
        AdamParams::with_lr(lr),
        vec![
            "head1.w".into(),
            "head1.b".into(),
            "head2.w".into(),
            "head2.b".into(),
        ],
    );
    let idxs: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..epochs {
        for chunk in idxs.chunks(32) {
            let (windows, targets) = batch_of(examples, chunk);
            let (yhat, cache) = model.forward_batch(&windows)?;
            let (loss, dyhat) = bce_batch(&targets, &yhat)?;
            if !loss.is_finite() {
                return Err(Error::numeric("non-finite fine-tune loss"));
            }
            let (g_h1, g_h2) = model.backward_heads(&cache, &dyhat);
            let gs: Vec<Vec<f64>> = vec![
                g_h1.dw.iter().copied().collect(),
                g_h1.db.to_vec(),
                g_h2.dw.iter().copied().collect(),
                g_h2.db.to_vec(),
            ];
            let g_refs: Vec<&[f64]> = gs.iter().map(|v| v.as_slice()).collect();
            let PredictionModel { head1, head2, .. } = model;
            let mut p_refs: Vec<&mut [f64]> = vec![
                head1.w.as_slice_mut().expect("layout"),
                head1.b.as_slice_mut().expect("layout"),
                head2.w.as_slice_mut().expect("layout"),
                head2.b.as_slice_mut().expect("layout"),
            ];
            adam.step(&mut p_refs, &g_refs)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
