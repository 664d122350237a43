use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::prior::{check_prediction, diffusion_residual_graph, q_sample, Denoiser, LatentCodec, NoiseSchedule};
use crate::raster::Image;

/// How the diffusion loss reaches the field parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// `w(t) (eps_hat - eps)` applied at the image, denoiser Jacobian omitted.
    #[default]
    Distilled,
    /// Exact gradient of the residual through the denoiser.
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeWeighting {
    #[default]
    OneMinusAlphaBar,
    Constant,
}

impl TimeWeighting {
    pub fn weight(self, alpha_bar: f64) -> f64 {
        match self {
            TimeWeighting::OneMinusAlphaBar => 1.0 - alpha_bar,
            TimeWeighting::Constant => 1.0,
        }
    }
}

/// Image-space distilled direction `w(t) (eps_hat - eps)` pulled back through
/// the codec (`[H*W, 3]`), plus the squared residual.
pub fn distilled_direction(
    denoiser: &dyn Denoiser,
    codec: &dyn LatentCodec,
    x: &Image,
    cond: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
    weighting: TimeWeighting,
) -> Result<(Tensor, f64)> {
    let z0 = codec.encode(x)?;
    let z_t = q_sample(&z0, t, eps, sched)?;
    let eps_hat = denoiser.predict(&z_t, t, cond)?;
    check_prediction(denoiser, &z_t, &eps_hat)?;
    let w = weighting.weight(sched.alpha_bar(t)?);
    let mut residual = 0.0;
    let dz: Vec<f64> = eps_hat
        .data()
        .iter()
        .zip(eps.data())
        .map(|(h, e)| {
            residual += (h - e) * (h - e);
            w * (h - e)
        })
        .collect();
    let dz = Tensor::new(z0.shape().to_vec(), dz)?;
    Ok((codec.pullback(x, &dz)?, residual))
}

/// Recorded novel-view term: `loss` is a scalar whose gradient with respect
/// to the image is the mode's contribution, normalized by the latent size.
#[derive(Clone, Copy, Debug)]
pub struct NovelView {
    pub loss: Var,
    /// Mean squared noise residual, for reporting.
    pub residual: f64,
}

/// `image` is a `[H*W, 3]` variable at the prior's resolution `size`.
#[allow(clippy::too_many_arguments)]
pub fn novel_view_loss_graph(
    g: &mut Graph,
    image: Var,
    size: [usize; 2],
    denoiser: &dyn Denoiser,
    codec: &dyn LatentCodec,
    cond: &Tensor,
    sched: &NoiseSchedule,
    mode: GradientMode,
    weighting: TimeWeighting,
    t: usize,
    eps: &Tensor,
) -> Result<NovelView> {
    let n = eps.numel() as f64;
    match mode {
        GradientMode::Distilled => {
            let x = Image::from_tensor(size[0], size[1], g.value(image))?;
            let (dir, residual) = distilled_direction(denoiser, codec, &x, cond, t, eps, sched, weighting)?;
            if dir.shape() != g.shape(image) {
                return Err(Error::shape(
                    "novel view",
                    format!("direction {:?} vs image {:?}", dir.shape(), g.shape(image)),
                ));
            }
            let d = g.constant(dir.scale(1.0 / n));
            let prod = g.mul(image, d)?;
            Ok(NovelView {
                loss: g.sum(prod)?,
                residual: residual / n,
            })
        }
        GradientMode::Full => {
            let c = g.constant(cond.clone());
            let r = diffusion_residual_graph(g, denoiser, codec, image, size, c, t, eps, sched)?;
            let w = weighting.weight(sched.alpha_bar(t)?);
            let residual = g.value(r).item()? / n;
            Ok(NovelView {
                loss: g.scale(r, w / n)?,
                residual,
            })
        }
    }
}
