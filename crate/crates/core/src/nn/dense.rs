//! Fully connected layer with cached pre-activations.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{glorot, Activation};
use crate::error::{Error, Result};

/// A dense layer `y = act(W x + b)` with `W` of shape (out, in).
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

/// Forward-pass cache: the inputs and pre-activations needed by backward.
#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Array2<f64>,
    z: Array2<f64>,
    y: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

impl DenseGrads {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseGrads {
            dw: Array2::zeros((out_dim, in_dim)),
            db: Array1::zeros(out_dim),
        }
    }
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| glorot(rng, in_dim, out_dim));
        DenseLayer {
            w,
            b: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn from_parts(w: Array2<f64>, b: Array1<f64>, activation: Activation) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::dimension(format!(
                "dense weights {}x{} inconsistent with bias length {}",
                w.nrows(),
                w.ncols(),
                b.len()
            )));
        }
        Ok(DenseLayer { w, b, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    /// Batch forward: rows of `x` are independent samples.
    pub fn forward(&self, x: &Array2<f64>) -> Result<(Array2<f64>, DenseCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::dimension(format!(
                "dense layer expects input dim {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let mut z = x.dot(&self.w.t());
        z += &self.b;
        let y = z.mapv(|v| self.activation.apply(v));
        Ok((y.clone(), DenseCache { x: x.clone(), z, y }))
    }

    /// Single-sample convenience wrapper.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let xm = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::dimension(e.to_string()))?;
        let (y, _) = self.forward(&xm)?;
        Ok(y.row(0).to_vec())
    }

    /// Backward through activation and affine map; returns parameter
    /// gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &DenseCache, dy: &Array2<f64>) -> (DenseGrads, Array2<f64>) {
        let mut dz = dy.clone();
        ndarray::Zip::from(&mut dz)
            .and(&cache.z)
            .and(&cache.y)
            .for_each(|d, &z, &y| *d *= self.activation.derivative(z, y));
        let dw = dz.t().dot(&cache.x);
        let db = dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.w);
        (DenseGrads { dw, db }, dx)
    }
}
