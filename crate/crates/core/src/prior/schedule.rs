use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// DDPM forward-process schedule; timestep `t` indexes `0..steps()`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over `steps` timesteps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bar = beta
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { beta, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or_else(|| Error::invalid(format!("timestep {t} outside schedule of {} steps", self.steps())))
    }

    /// Timesteps `[floor(lo*T), ceil(hi*T) - 1]` clamped to the schedule.
    pub fn fraction_range(&self, lo: f64, hi: f64) -> Result<(usize, usize)> {
        let n = self.steps() as f64;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::invalid(format!("bad timestep fraction range [{lo}, {hi}]")));
        }
        let a = (lo * n).floor() as usize;
        let b = ((hi * n).ceil() as usize).clamp(a + 1, self.steps()) - 1;
        Ok((a.min(b), b))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// `sqrt(ab) * z0 + sqrt(1 - ab) * eps` for an explicit cumulative alpha.
pub fn q_sample_alpha(z0: &Tensor, alpha_bar: f64, eps: &Tensor) -> Result<Tensor> {
    if z0.shape() != eps.shape() {
        return Err(Error::shape(
            "q_sample",
            format!("z0 {:?} vs eps {:?}", z0.shape(), eps.shape()),
        ));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(z, e)| a * z + b * e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

pub fn q_sample(z0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    q_sample_alpha(z0, sched.alpha_bar(t)?, eps)
}
