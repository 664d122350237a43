use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Adam moments per parameter tensor plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    pub fn check_mirrors(&self, params: &[Tensor]) -> Result<()> {
        if self.first.len() != params.len() || self.second.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer holds {}/{} moments for {} parameters",
                self.first.len(),
                self.second.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if self.first[i].shape() != p.shape() || self.second[i].shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("moment {i} does not match parameter shape {:?}", p.shape()),
                ));
            }
            if !self.first[i].is_finite() || !self.second[i].is_finite() {
                return Err(Error::invalid(format!("optimizer moment {i} is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// One bias-corrected update. Parameters and moments are rounded to
    /// `f32` afterwards so that a checkpoint taken between steps resumes
    /// bit-exactly.
    pub fn step(&self, params: &mut [Tensor], grads: &[Tensor], state: &mut OptimizerState, lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        state.check_mirrors(params)?;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("gradient {i} has shape {:?}, parameter {:?}", g.shape(), p.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: "adam gradient".into(),
                    index: i,
                });
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = state.first[i].data_mut();
            let v = state.second[i].data_mut();
            let w = p.data_mut();
            for j in 0..w.len() {
                m[j] = (self.beta1 * m[j] + (1.0 - self.beta1) * g[j]) as f32 as f64;
                v[j] = (self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j]) as f32 as f64;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                w[j] = (w[j] - update) as f32 as f64;
            }
        }
        Ok(())
    }
}
