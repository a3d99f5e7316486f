use super::{MetaParams, OuterOptimizer};
use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Outer optimizer with moment buffers laid out like the registry of `Φ`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OuterOptimizer,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OuterOptimizer, phi: &MetaParams) -> Self {
        let zeros: Vec<Tensor> = phi.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        OptimizerState {
            kind,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Checks that the buffers match the shapes of `phi`.
    pub fn check(&self, phi: &MetaParams) -> Result<()> {
        let n = phi.len();
        if self.m.len() != n || self.v.len() != n {
            return Err(Error::Integrity(format!(
                "optimizer holds {}/{} buffers for {n} tensors",
                self.m.len(),
                self.v.len()
            )));
        }
        for (((name, t), m), v) in phi.iter().zip(&self.m).zip(&self.v) {
            if m.shape() != t.shape() || v.shape() != t.shape() {
                return Err(Error::Integrity(format!("optimizer buffer shape mismatch for {name}")));
            }
        }
        Ok(())
    }

    /// One update of `phi` with learning rate `lr` along `grads`
    /// (registry order).
    pub fn apply(&mut self, phi: &mut MetaParams, grads: &[Tensor], lr: f64) -> Result<()> {
        self.check(phi)?;
        if grads.len() != self.m.len() {
            return Err(Error::Contract(format!("{} gradients for {} tensors", grads.len(), self.m.len())));
        }
        self.step += 1;
        let mut updated: Vec<Tensor> = phi.iter().map(|(_, t)| t.clone()).collect();
        match self.kind {
            OuterOptimizer::Sgd => {
                for (p, g) in updated.iter_mut().zip(grads) {
                    for (p, g) in p.data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * g;
                    }
                }
            }
            OuterOptimizer::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in updated.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for i in 0..p.len() {
                        let gi = g.data()[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        *phi = phi.rebuild(updated).expect("registry layout");
        Ok(())
    }
}
