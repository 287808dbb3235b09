//! Bias-corrected Adam over a flat list of parameter matrices.

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::RealScalar;

pub struct AdamState<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u32,
    first: Vec<Mat<T>>,
    second: Vec<Mat<T>>,
}

impl<T: RealScalar> AdamState<T> {
    /// Zero moments shaped after `params`; standard constants.
    pub fn new(params: &[Mat<T>]) -> Self {
        AdamState {
            beta1: T::from_f64(0.9).unwrap(),
            beta2: T::from_f64(0.999).unwrap(),
            eps: T::from_f64(1e-8).unwrap(),
            step: 0,
            first: params
                .iter()
                .map(|p| Mat::zeros(p.rows(), p.cols()))
                .collect(),
            second: params
                .iter()
                .map(|p| Mat::zeros(p.rows(), p.cols()))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }

    /// One bias-corrected update of every parameter in place.
    pub fn step(&mut self, params: &mut [Mat<T>], grads: &[Mat<T>], lr: T) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::DimMismatch(format!(
                "adam state holds {} parameters, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if grads[i].shape() != p.shape() || self.first[i].shape() != p.shape() {
                return Err(Error::DimMismatch(format!(
                    "adam parameter {i}: shapes disagree"
                )));
            }
        }
        self.step += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.step as i32);
        let bc2 = one - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let g = &grads[i];
            let p = &mut params[i];
            for r in 0..p.rows() {
                for c in 0..p.cols() {
                    let gi = g[(r, c)];
                    m[(r, c)] = self.beta1 * m[(r, c)] + (one - self.beta1) * gi;
                    v[(r, c)] = self.beta2 * v[(r, c)] + (one - self.beta2) * gi * gi;
                    let m_hat = m[(r, c)] / bc1;
                    let v_hat = v[(r, c)] / bc2;
                    p[(r, c)] = p[(r, c)] - lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            }
        }
        Ok(())
    }
}
