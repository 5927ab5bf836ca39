//! Per-table autoencoder: two dense encoder layers to the latent encoding,
//! mirrored decoder, trained with MSE and Adam.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::TableId;
use crate::error::{Error, Result};
use crate::nn::{
    mean_squared_error, Activation, AdamParams, AdamState, DenseCache, DenseGrads, DenseLayer,
    NamedTensor,
};

/// Encoder `input -> 4*l_be -> l_be` (tanh), decoder mirrored with a linear
/// output layer.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub table_id: TableId,
    pub enc1: DenseLayer,
    pub enc2: DenseLayer,
    pub dec1: DenseLayer,
    pub dec2: DenseLayer,
}

pub struct AeCache {
    e1: DenseCache,
    e2: DenseCache,
    d1: DenseCache,
    d2: DenseCache,
}

pub struct AeGrads {
    pub e1: DenseGrads,
    pub e2: DenseGrads,
    pub d1: DenseGrads,
    pub d2: DenseGrads,
}

/// Training options mirroring the experiment defaults: batches of 32, at
/// most 75 epochs, early stopping on a 10% validation split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AeTrainOpts {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub val_frac: f64,
    pub patience: usize,
    pub adam: AdamParams,
}

impl Default for AeTrainOpts {
    fn default() -> Self {
        AeTrainOpts {
            max_epochs: 75,
            batch_size: 32,
            val_frac: 0.1,
            patience: 5,
            adam: AdamParams::default(),
        }
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

impl Autoencoder {
    pub fn new(table_id: TableId, input_dim: usize, l_be: usize, rng: &mut ChaCha8Rng) -> Self {
        let hidden = 4 * l_be;
        Autoencoder {
            table_id,
            enc1: DenseLayer::new(input_dim, hidden, Activation::Tanh, rng),
            enc2: DenseLayer::new(hidden, l_be, Activation::Tanh, rng),
            dec1: DenseLayer::new(l_be, hidden, Activation::Tanh, rng),
            dec2: DenseLayer::new(hidden, input_dim, Activation::Linear, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.enc1.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.enc2.out_dim()
    }

    /// Encoder forward pass on one flattened block matrix.
    pub fn encode(&self, flat_block: &[f64]) -> Result<Vec<f64>> {
        let h = self.enc1.forward_vec(flat_block)?;
        self.enc2.forward_vec(&h)
    }

    /// Full forward pass for training; rows of `x` are flattened blocks.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, AeCache)> {
        let (h1, e1) = self.enc1.forward(x)?;
        let (z, e2) = self.enc2.forward(&h1)?;
        let (h2, d1) = self.dec1.forward(&z)?;
        let (recon, d2) = self.dec2.forward(&h2)?;
        Ok((recon, AeCache { e1, e2, d1, d2 }))
    }

    /// Backward pass from the reconstruction gradient.
    pub fn backward(&self, cache: &AeCache, d_recon: &Array2<f64>) -> AeGrads {
        let (g_d2, dh2) = self.dec2.backward(&cache.d2, d_recon);
        let (g_d1, dz) = self.dec1.backward(&cache.d1, &dh2);
        let (g_e2, dh1) = self.enc2.backward(&cache.e2, &dz);
        let (g_e1, _) = self.enc1.backward(&cache.e1, &dh1);
        AeGrads {
            e1: g_e1,
            e2: g_e2,
            d1: g_d1,
            d2: g_d2,
        }
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 4] {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.dec1,
            &mut self.dec2,
        ]
    }

    fn layers(&self) -> [&DenseLayer; 4] {
        [&self.enc1, &self.enc2, &self.dec1, &self.dec2]
    }

    pub fn param_names() -> Vec<String> {
        ["enc1", "enc2", "dec1", "dec2"]
            .iter()
            .flat_map(|l| [format!("{l}.w"), format!("{l}.b")])
            .collect()
    }

    /// Parameters flattened in the order of [`Autoencoder::param_names`].
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.layers() {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut idx = 0;
        for l in self.layers_mut() {
            for v in l.w.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[idx];
                idx += 1;
            }
        }
        assert_eq!(idx, flat.len(), "parameter vector length mismatch");
    }

    pub fn grads_flat(grads: &AeGrads) -> Vec<f64> {
        let mut out = Vec::new();
        for g in [&grads.e1, &grads.e2, &grads.d1, &grads.d2] {
            out.extend(g.dw.iter());
            out.extend(g.db.iter());
        }
        out
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (name, l) in ["enc1", "enc2", "dec1", "dec2"].iter().zip(self.layers()) {
            out.push(
                NamedTensor::new(
                    format!("{name}.w"),
                    vec![l.w.nrows(), l.w.ncols()],
                    l.w.iter().copied().collect(),
                )
                .expect("consistent shape"),
            );
            out.push(
                NamedTensor::new(format!("{name}.b"), vec![l.b.len()], l.b.to_vec())
                    .expect("consistent shape"),
            );
        }
        out
    }

    pub fn from_tensors(table_id: TableId, tensors: &[NamedTensor]) -> Result<Self> {
        let find = |name: &str| -> Result<&NamedTensor> {
            tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Serialization(format!("missing tensor `{name}`")))
        };
        let layer = |prefix: &str, act: Activation| -> Result<DenseLayer> {
            let w = find(&format!("{prefix}.w"))?;
            let b = find(&format!("{prefix}.b"))?;
            if w.shape.len() != 2 {
                return Err(Error::Serialization(format!(
                    "tensor {prefix}.w not rank 2"
                )));
            }
            DenseLayer::from_parts(
                Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
                    .map_err(|e| Error::Serialization(e.to_string()))?,
                ndarray::Array1::from_vec(b.data.clone()),
                act,
            )
        };
        Ok(Autoencoder {
            table_id,
            enc1: layer("enc1", Activation::Tanh)?,
            enc2: layer("enc2", Activation::Tanh)?,
            dec1: layer("dec1", Activation::Tanh)?,
            dec2: layer("dec2", Activation::Linear)?,
        })
    }
}

/// Trains one table's autoencoder on its flattened block matrices.
///
/// Deterministic for a fixed seed. The returned model carries the parameters
/// with the best validation loss seen (best training loss if the set is too
/// small for a validation split), so the final reconstruction MSE never
/// exceeds the initial one.
pub fn train_autoencoder(
    table_id: TableId,
    inputs: &Array2<f64>,
    l_be: usize,
    seed: u64,
    opts: &AeTrainOpts,
) -> Result<(Autoencoder, Vec<EpochStat>)> {
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::config("autoencoder training needs at least 1 block"));
    }
    if l_be == 0 {
        return Err(Error::config("l_be must be >= 1"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Autoencoder::new(table_id, inputs.ncols(), l_be, &mut rng);
    let mut adam = AdamState::new(opts.adam, Autoencoder::param_names());

    let n_val = if n >= 10 {
        ((n as f64) * opts.val_frac).floor() as usize
    } else {
        0
    };
    let n_train = n - n_val;
    let train = inputs.slice(ndarray::s![0..n_train, ..]).to_owned();
    let val = inputs.slice(ndarray::s![n_train.., ..]).to_owned();

    let eval = |m: &Autoencoder, data: &Array2<f64>| -> Result<f64> {
        if data.nrows() == 0 {
            return Ok(0.0);
        }
        let (recon, _) = m.forward(data)?;
        Ok(mean_squared_error(data, &recon)?.0)
    };

    let mut stats = Vec::new();
    let initial_train = eval(&model, &train)?;
    let initial_val = if n_val > 0 {
        Some(eval(&model, &val)?)
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
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 1..=opts.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let mut batch = Array2::zeros((chunk.len(), inputs.ncols()));
            for (bi, &i) in chunk.iter().enumerate() {
                batch.row_mut(bi).assign(&train.row(i));
            }
            let (recon, cache) = model.forward(&batch)?;
            let (loss, d_recon) = mean_squared_error(&batch, &recon)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite autoencoder loss for table {table_id} at epoch {epoch}"
                )));
            }
            let grads = model.backward(&cache, &d_recon);
            apply_adam(&mut model, &mut adam, &grads)?;
        }

        let train_loss = eval(&model, &train)?;
        let val_loss = if n_val > 0 {
            Some(eval(&model, &val)?)
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

fn apply_adam(model: &mut Autoencoder, adam: &mut AdamState, grads: &AeGrads) -> Result<()> {
    let gs: Vec<Vec<f64>> = [&grads.e1, &grads.e2, &grads.d1, &grads.d2]
        .iter()
        .flat_map(|g| [g.dw.iter().copied().collect::<Vec<f64>>(), g.db.to_vec()])
        .collect();
    let g_refs: Vec<&[f64]> = gs.iter().map(|v| v.as_slice()).collect();

    let [l1, l2, l3, l4] = model.layers_mut();
    let mut p_refs: Vec<&mut [f64]> = Vec::with_capacity(8);
    for l in [l1, l2, l3, l4] {
        let (w, b) = (&mut l.w, &mut l.b);
        p_refs.push(w.as_slice_mut().expect("standard layout"));
        p_refs.push(b.as_slice_mut().expect("standard layout"));
    }
    adam.step(&mut p_refs, &g_refs)
}
