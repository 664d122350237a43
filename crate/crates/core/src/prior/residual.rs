use super::denoiser::{Denoiser, LatentCodec};
use super::schedule::{q_sample, NoiseSchedule};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::Image;

/// `||eps - predict(q_sample(encode(x), t, eps), t, cond)||^2`.
pub fn diffusion_residual(
    denoiser: &dyn Denoiser,
    codec: &dyn LatentCodec,
    x: &Image,
    cond: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let z0 = codec.encode(x)?;
    let z_t = q_sample(&z0, t, eps, sched)?;
    let eps_hat = denoiser.predict(&z_t, t, cond)?;
    check_prediction(denoiser, &z_t, &eps_hat)?;
    Ok(eps
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

pub(crate) fn check_prediction(denoiser: &dyn Denoiser, z_t: &Tensor, eps_hat: &Tensor) -> Result<()> {
    if eps_hat.shape() != z_t.shape() {
        return Err(Error::Backend {
            backend: denoiser.name().into(),
            detail: format!(
                "prediction shape {:?} != latent shape {:?}",
                eps_hat.shape(),
                z_t.shape()
            ),
        });
    }
    if !eps_hat.is_finite() {
        return Err(Error::Backend {
            backend: denoiser.name().into(),
            detail: "prediction is not finite".into(),
        });
    }
    Ok(())
}

/// Recorded residual, differentiable through the codec and denoiser with
/// respect to the image `x` (`[H*W, 3]`) and the conditioning `cond`.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_residual_graph(
    g: &mut Graph,
    denoiser: &dyn Denoiser,
    codec: &dyn LatentCodec,
    x: Var,
    size: [usize; 2],
    cond: Var,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let z0 = codec
        .encode_graph(g, x, size[0], size[1])?
        .ok_or_else(|| Error::invalid("codec is not differentiable in process"))?;
    if g.shape(z0) != eps.shape() {
        return Err(Error::shape(
            "diffusion residual",
            format!("latent {:?} vs eps {:?}", g.shape(z0), eps.shape()),
        ));
    }
    let ab = sched.alpha_bar(t)?;
    let scaled = g.scale(z0, ab.sqrt())?;
    let noise = g.constant(eps.scale((1.0 - ab).sqrt()));
    let z_t = g.add(scaled, noise)?;
    let eps_hat = denoiser.predict_graph(g, z_t, t, cond)?.ok_or_else(|| Error::Backend {
        backend: denoiser.name().into(),
        detail: "backend cannot be differentiated in process".into(),
    })?;
    let target = g.constant(eps.clone());
    let diff = g.sub(target, eps_hat)?;
    let sq = g.mul(diff, diff)?;
    g.sum(sq)
}
