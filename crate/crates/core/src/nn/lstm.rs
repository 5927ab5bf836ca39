//! Single LSTM cell with batched step and backward-through-time support.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::sigmoid;
use crate::error::{Error, Result};

/// LSTM cell parameters. The four gates are stored stacked in row blocks of
/// `hidden` rows each, in the order input, forget, candidate, output:
/// `wx` is (4h, in), `wh` is (4h, h), `b` is (4h).
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
    pub input: usize,
    pub hidden: usize,
}

/// Per-step cache for backward-through-time.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmGrads {
    pub dwx: Array2<f64>,
    pub dwh: Array2<f64>,
    pub db: Array1<f64>,
}

impl LstmGrads {
    pub fn zeros(cell: &LstmCell) -> Self {
        LstmGrads {
            dwx: Array2::zeros((4 * cell.hidden, cell.input)),
            dwh: Array2::zeros((4 * cell.hidden, cell.hidden)),
            db: Array1::zeros(4 * cell.hidden),
        }
    }
}

impl LstmCell {
    /// New cell with per-gate uniform init in ±sqrt(6/(in + 2h)) and the
    /// forget-gate bias set to 1.
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (input + 2 * hidden) as f64).sqrt();
        let wx = Array2::from_shape_fn((4 * hidden, input), |_| rng.gen_range(-bound..bound));
        let wh = Array2::from_shape_fn((4 * hidden, hidden), |_| rng.gen_range(-bound..bound));
        let mut b = Array1::zeros(4 * hidden);
        b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        LstmCell {
            wx,
            wh,
            b,
            input,
            hidden,
        }
    }

    /// Zero state matrices for a batch of the given size.
    pub fn zero_state(&self, batch: usize) -> (Array2<f64>, Array2<f64>) {
        (
            Array2::zeros((batch, self.hidden)),
            Array2::zeros((batch, self.hidden)),
        )
    }

    /// One recurrence step for a batch: rows of `x`, `h_prev`, `c_prev` are
    /// samples. Returns the new hidden and cell states plus the cache.
    pub fn step(
        &self,
        x: &Array2<f64>,
        h_prev: &Array2<f64>,
        c_prev: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, LstmStepCache)> {
        let batch = x.nrows();
        if x.ncols() != self.input {
            return Err(Error::dimension(format!(
                "lstm expects input dim {}, got {}",
                self.input,
                x.ncols()
            )));
        }
        if h_prev.dim() != (batch, self.hidden) || c_prev.dim() != (batch, self.hidden) {
            return Err(Error::dimension(format!(
                "lstm state shapes {:?}/{:?} inconsistent with batch {} hidden {}",
                h_prev.dim(),
                c_prev.dim(),
                batch,
                self.hidden
            )));
        }
        let h = self.hidden;
        let mut lin = x.dot(&self.wx.t()) + h_prev.dot(&self.wh.t());
        lin += &self.b;
        let i = lin.slice(s![.., 0..h]).mapv(sigmoid);
        let f = lin.slice(s![.., h..2 * h]).mapv(sigmoid);
        let g = lin.slice(s![.., 2 * h..3 * h]).mapv(f64::tanh);
        let o = lin.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);
        let c_new = &f * c_prev + &i * &g;
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &o * &tanh_c;
        Ok((
            h_new,
            c_new,
            LstmStepCache {
                x: x.clone(),
                h_prev: h_prev.clone(),
                c_prev: c_prev.clone(),
                i,
                f,
                g,
                o,
                tanh_c,
            },
        ))
    }

    /// Backward through one step. `dh` and `dc` are the gradients flowing
    /// into this step's outputs; parameter gradients accumulate into `grads`.
    /// Returns (dx, dh_prev, dc_prev).
    pub fn backward_step(
        &self,
        cache: &LstmStepCache,
        dh: &Array2<f64>,
        dc: &Array2<f64>,
        grads: &mut LstmGrads,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let h = self.hidden;
        let batch = cache.x.nrows();
        // Total gradient at the new cell state.
        let dc_total = dc + &(dh * &cache.o * &cache.tanh_c.mapv(|t| 1.0 - t * t));
        let di = &dc_total * &cache.g;
        let df = &dc_total * &cache.c_prev;
        let dg = &dc_total * &cache.i;
        let do_ = dh * &cache.tanh_c;

        let mut dlin = Array2::zeros((batch, 4 * h));
        dlin.slice_mut(s![.., 0..h])
            .assign(&(&di * &cache.i * &cache.i.mapv(|v| 1.0 - v)));
        dlin.slice_mut(s![.., h..2 * h])
            .assign(&(&df * &cache.f * &cache.f.mapv(|v| 1.0 - v)));
        dlin.slice_mut(s![.., 2 * h..3 * h])
            .assign(&(&dg * &cache.g.mapv(|v| 1.0 - v * v)));
        dlin.slice_mut(s![.., 3 * h..4 * h])
            .assign(&(&do_ * &cache.o * &cache.o.mapv(|v| 1.0 - v)));

        grads.dwx += &dlin.t().dot(&cache.x);
        grads.dwh += &dlin.t().dot(&cache.h_prev);
        grads.db += &dlin.sum_axis(Axis(0));

        let dx = dlin.dot(&self.wx);
        let dh_prev = dlin.dot(&self.wh);
        let dc_prev = dc_total * &cache.f;
        (dx, dh_prev, dc_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cell(input: usize, hidden: usize, seed: u64) -> LstmCell {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LstmCell::new(input, hidden, &mut rng)
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let mut c = cell(3, 4, 1);
        c.wx.fill(0.0);
        c.wh.fill(0.0);
        c.b.fill(0.0);
        let x = Array2::from_elem((2, 3), 5.0);
        let (h0, c0) = c.zero_state(2);
        let (h, cst, _) = c.step(&x, &h0, &c0).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(cst.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_components_stay_in_open_unit_interval() {
        let c = cell(3, 8, 2);
        let x = Array2::from_elem((1, 3), 100.0);
        let (mut h, mut st) = c.zero_state(1);
        for _ in 0..50 {
            let (h2, c2, _) = c.step(&x, &h, &st).unwrap();
            h = h2;
            st = c2;
            assert!(h.iter().all(|&v| v.abs() < 1.0));
        }
    }

    #[test]
    fn step_is_pure() {
        let c = cell(2, 3, 3);
        let x = Array2::from_elem((1, 2), 0.3);
        let (h0, c0) = c.zero_state(1);
        let (h1, c1, _) = c.step(&x, &h0, &c0).unwrap();
        let (h2, c2, _) = c.step(&x, &h0, &c0).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn mismatched_dims_error() {
        let c = cell(2, 3, 4);
        let x = Array2::zeros((1, 5));
        let (h0, c0) = c.zero_state(1);
        assert!(c.step(&x, &h0, &c0).is_err());
    }
}
