use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, LatentCodec};
use super::residual::diffusion_residual_graph;
use super::schedule::NoiseSchedule;
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::trainer::{Adam, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
    /// `(t, eps)` draws averaged per step.
    pub draws_per_step: usize,
    pub t_range: [f64; 2],
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 5e-2,
            draws_per_step: 4,
            t_range: [0.02, 0.98],
            seed: 0,
        }
    }
}

/// Inverted embedding and the per-step loss (mean squared residual).
#[derive(Clone, Debug)]
pub struct Inversion {
    pub embedding: Tensor,
    pub losses: Vec<f64>,
}

/// Optimize the learnable section `init` (`[K*, D]`) so the frozen denoiser
/// best predicts the noise added to `images`. `caption`, when given, is
/// prepended as the frozen section.
pub fn textual_inversion(
    images: &[Image],
    denoiser: &dyn Denoiser,
    codec: &dyn LatentCodec,
    sched: &NoiseSchedule,
    caption: Option<&Tensor>,
    init: &Tensor,
    config: &InversionConfig,
) -> Result<Inversion> {
    if images.is_empty() {
        return Err(Error::invalid("textual inversion needs at least one image"));
    }
    if config.draws_per_step == 0 {
        return Err(Error::invalid("draws_per_step must be positive"));
    }
    let (lo, hi) = sched.fraction_range(config.t_range[0], config.t_range[1])?;
    let latents: Vec<Tensor> = images.iter().map(|x| codec.encode(x)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = vec![init.clone()];
    let mut state = OptimizerState::new(&params);
    let adam = Adam::default();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut g = Graph::new();
        let s = g.param(params[0].clone());
        let cond = match caption {
            Some(c) => {
                let c = g.constant(c.clone());
                g.concat(&[c, s], 0)?
            }
            None => s,
        };
        let mut total = None;
        let mut count = 0;
        for _ in 0..config.draws_per_step {
            let i = rng.random_range(0..images.len());
            let t = rng.random_range(lo..=hi);
            let shape = latents[i].shape().to_vec();
            let eps = Tensor::new(
                shape,
                (0..latents[i].numel()).map(|_| rng.sample(StandardNormal)).collect(),
            )?;
            count += eps.numel();
            let x = g.constant(images[i].to_tensor());
            let r = diffusion_residual_graph(
                &mut g,
                denoiser,
                codec,
                x,
                [images[i].width(), images[i].height()],
                cond,
                t,
                &eps,
                sched,
            )?;
            total = Some(match total {
                None => r,
                Some(a) => g.add(a, r)?,
            });
        }
        let loss = g.scale(total.expect("at least one draw"), 1.0 / count as f64)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("inversion loss is {value}"),
            });
        }
        losses.push(value);
        let grad = g.backward(loss)?.wrt(s)?;
        adam.step(&mut params, &[grad], &mut state, config.lr)?;
    }
    Ok(Inversion {
        embedding: params.pop().expect("embedding"),
        losses,
    })
}
