//! Bias-corrected adaptive-moment (Adam) updates on flat parameter vectors.

use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update of `x` in place.
    pub fn update(&mut self, x: &mut [f64], grad: &[f64]) -> Result<()> {
        for len in [x.len(), grad.len()] {
            if len != self.m.len() {
                return Err(Error::LengthMismatch {
                    expected: self.m.len(),
                    actual: len,
                });
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..x.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            x[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn optimizer_step(state: &mut OptimizerState, params: &mut ModelParams, grad: &[f64]) -> Result<()> {
    let mut flat = params.flatten();
    state.update(&mut flat, grad)?;
    params.assign(&flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_on_scalar_toy() {
        let mut st = OptimizerState::new(1, 0.1);
        let mut x = [1.0];
        let g = 2.0 * x[0];
        st.update(&mut x, &[g]).unwrap();
        let expected = 1.0 - 0.1 * g / (g.abs() + 1e-8);
        assert!((x[0] - expected).abs() < 1e-15);
        assert!((x[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_only_counts() {
        let mut st = OptimizerState::new(3, 0.1);
        let mut x = [1.0, -2.0, 3.0];
        st.update(&mut x, &[0.0; 3]).unwrap();
        assert_eq!(x, [1.0, -2.0, 3.0]);
        assert_eq!(st.step, 1);
        assert!(st.update(&mut x, &[0.0; 2]).is_err());
    }

    #[test]
    fn converges_on_scalar_toy() {
        let mut st = OptimizerState::new(1, 0.1);
        let mut x = [1.0];
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            st.update(&mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 1e-2, "{}", x[0]);
    }
}
