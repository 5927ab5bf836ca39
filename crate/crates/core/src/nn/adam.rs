//! Adam optimizer over named flat parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            ..Default::default()
        }
    }
}

/// Optimizer state: first/second moment accumulators per tensor plus the
/// step counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hp: AdamParams,
    step: u64,
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// `names` identify the tensors in the order they will be passed to
    /// [`AdamState::step`]; they only matter for error messages.
    pub fn new(hp: AdamParams, names: Vec<String>) -> Self {
        let n = names.len();
        AdamState {
            hp,
            step: 0,
            names,
            m: vec![Vec::new(); n],
            v: vec![Vec::new(); n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One optimization step over all tensors. Moments are lazily sized on
    /// first use. Fails on non-finite gradients, naming the tensor.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.names.len() {
            return Err(Error::dimension(format!(
                "adam got {} parameter tensors, {} gradient tensors, state tracks {}",
                params.len(),
                grads.len(),
                self.names.len()
            )));
        }
        for (idx, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dimension(format!(
                    "adam tensor `{}`: {} params vs {} grads",
                    self.names[idx],
                    p.len(),
                    g.len()
                )));
            }
            if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient in parameter `{}` at element {}",
                    self.names[idx], pos
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.hp.beta1.powi(t);
        let bc2 = 1.0 - self.hp.beta2.powi(t);
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if self.m[idx].len() != p.len() {
                self.m[idx] = vec![0.0; p.len()];
                self.v[idx] = vec![0.0; p.len()];
            }
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.len() {
                m[i] = self.hp.beta1 * m[i] + (1.0 - self.hp.beta1) * g[i];
                v[i] = self.hp.beta2 * v[i] + (1.0 - self.hp.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.hp.lr * mhat / (vhat.sqrt() + self.hp.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut st = AdamState::new(AdamParams::default(), vec!["w".into()]);
        let mut p = vec![1.5, -0.25, 3.0];
        let orig = p.clone();
        let g = vec![0.0; 3];
        st.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_magnitude_is_about_the_learning_rate() {
        // One step with constant gradient g: mhat = g, vhat = g^2, so the
        // update is lr * g / (|g| + eps) = lr * sign(g) up to eps rounding.
        let hp = AdamParams::with_lr(0.01);
        let mut st = AdamState::new(hp, vec!["w".into()]);
        let mut p = vec![0.0];
        let g = vec![2.5];
        st.step(&mut [&mut p], &[&g]).unwrap();
        let expected = -hp.lr * 2.5 / (2.5 + hp.eps);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0].abs() - hp.lr).abs() < 1e-8);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn same_state_copy_gives_identical_results() {
        let mut a = AdamState::new(AdamParams::default(), vec!["w".into()]);
        let mut pa = vec![0.3, 0.7];
        let g1 = vec![0.1, -0.2];
        a.step(&mut [&mut pa], &[&g1]).unwrap();
        let mut b = a.clone();
        let mut pb = pa.clone();
        let g2 = vec![-0.05, 0.4];
        a.step(&mut [&mut pa], &[&g2]).unwrap();
        b.step(&mut [&mut pb], &[&g2]).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut st = AdamState::new(AdamParams::default(), vec!["head.w".into()]);
        let mut p = vec![0.0];
        let g = vec![f64::NAN];
        let err = st.step(&mut [&mut p], &[&g]).unwrap_err();
        assert!(err.to_string().contains("head.w"), "{err}");
    }
}
