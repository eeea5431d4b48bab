use crate::error::{shape_err, Result};
use crate::matrix::RealMatrix;

use super::network::Gradients;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<RealMatrix>,
    v: Vec<RealMatrix>,
}

impl AdamState {
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: Vec<&mut RealMatrix>, grads: &Gradients) -> Result<()> {
        if params.len() != grads.0.len() {
            return shape_err(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.0.len()
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| RealMatrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        for (i, (p, g)) in params.iter().zip(&grads.0).enumerate() {
            if p.shape() != g.shape() || self.m[i].shape() != p.shape() {
                return shape_err(format!(
                    "tensor {i}: parameter {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                ));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.into_iter().zip(&grads.0).enumerate() {
            let m = self.m[i].values_mut();
            let v = self.v[i].values_mut();
            for (((pv, &gv), mv), vv) in p.values_mut().iter_mut().zip(g.values()).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
