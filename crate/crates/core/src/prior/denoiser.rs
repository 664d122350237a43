use super::schedule::NoiseSchedule;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::Image;

/// Conditional noise predictor: `predict(z_t, t, cond)` has the shape of
/// `z_t`. `cond` is the joint guidance `[K, D]`.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    fn schedule(&self) -> &NoiseSchedule;

    fn predict(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor>;

    /// Recorded prediction for backends that can be differentiated in
    /// process; `Ok(None)` otherwise.
    fn predict_graph(&self, _g: &mut Graph, _z_t: Var, _t: usize, _cond: Var) -> Result<Option<Var>> {
        Ok(None)
    }
}

/// Image to latent and back.
pub trait LatentCodec: Send + Sync {
    fn encode(&self, x: &Image) -> Result<Tensor>;

    fn decode(&self, z: &Tensor) -> Result<Image>;

    /// Shape of the latent of a `width x height` image.
    fn latent_shape(&self, width: usize, height: usize) -> Vec<usize>;

    /// Recorded encoding of a `[H*W, 3]` image variable, when differentiable.
    fn encode_graph(&self, _g: &mut Graph, _x: Var, _width: usize, _height: usize) -> Result<Option<Var>> {
        Ok(None)
    }

    /// Pull a latent-space direction back to image space at `x`.
    fn pullback(&self, x: &Image, dz: &Tensor) -> Result<Tensor>;
}

/// Pixel-space codec: the latent of a `W x H` image is the `[H, W, 3]` tensor
/// of its values.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn encode(&self, x: &Image) -> Result<Tensor> {
        Tensor::new(vec![x.height(), x.width(), 3], x.data().to_vec())
    }

    fn decode(&self, z: &Tensor) -> Result<Image> {
        match z.shape() {
            [h, w, 3] => Image::new(*w, *h, z.data().to_vec()),
            s => Err(Error::shape(
                "identity decode",
                format!("expected [H, W, 3], got {s:?}"),
            )),
        }
    }

    fn latent_shape(&self, width: usize, height: usize) -> Vec<usize> {
        vec![height, width, 3]
    }

    fn encode_graph(&self, g: &mut Graph, x: Var, width: usize, height: usize) -> Result<Option<Var>> {
        Ok(Some(g.reshape(x, vec![height, width, 3])?))
    }

    fn pullback(&self, x: &Image, dz: &Tensor) -> Result<Tensor> {
        if dz.numel() != x.num_pixels() * 3 {
            return Err(Error::shape(
                "identity pullback",
                format!("{:?} does not match a {}x{} image", dz.shape(), x.width(), x.height()),
            ));
        }
        dz.reshape(vec![x.num_pixels(), 3])
    }
}

/// `sqrt(1-ab) (z_t - sqrt(ab) mu) / (ab sigma0^2 + 1 - ab)`: the exact
/// noise posterior mean when data are `N(mu, sigma0^2 I)`.
pub fn analytic_gaussian_eps(
    z_t: &Tensor,
    t: usize,
    mu: &Tensor,
    sigma0: f64,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if z_t.shape() != mu.shape() {
        return Err(Error::shape(
            "analytic eps",
            format!("z_t {:?} vs mu {:?}", z_t.shape(), mu.shape()),
        ));
    }
    let ab = sched.alpha_bar(t)?;
    let (gain, shift) = analytic_coefficients(ab, sigma0);
    let data = z_t
        .data()
        .iter()
        .zip(mu.data())
        .map(|(z, m)| gain * (z - shift * m))
        .collect();
    Tensor::new(z_t.shape().to_vec(), data)
}

fn analytic_coefficients(ab: f64, sigma0: f64) -> (f64, f64) {
    ((1.0 - ab).sqrt() / (ab * sigma0 * sigma0 + 1.0 - ab), ab.sqrt())
}

/// Denoiser for an isotropic Gaussian data law; ignores conditioning.
#[derive(Clone, Debug)]
pub struct AnalyticGaussianPrior {
    mu: Tensor,
    sigma0: f64,
    sched: NoiseSchedule,
}

impl AnalyticGaussianPrior {
    pub fn new(mu: Tensor, sigma0: f64, sched: NoiseSchedule) -> Result<Self> {
        if !mu.is_finite() || !(sigma0 >= 0.0) || !sigma0.is_finite() {
            return Err(Error::invalid("analytic prior needs finite mu and sigma0 >= 0"));
        }
        Ok(Self { mu, sigma0, sched })
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }
}

impl Denoiser for AnalyticGaussianPrior {
    fn name(&self) -> &str {
        "analytic"
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn predict(&self, z_t: &Tensor, t: usize, _cond: &Tensor) -> Result<Tensor> {
        analytic_gaussian_eps(z_t, t, &self.mu, self.sigma0, &self.sched)
    }

    fn predict_graph(&self, g: &mut Graph, z_t: Var, t: usize, _cond: Var) -> Result<Option<Var>> {
        if g.shape(z_t) != self.mu.shape() {
            return Err(Error::shape(
                "analytic eps",
                format!("z_t {:?} vs mu {:?}", g.shape(z_t), self.mu.shape()),
            ));
        }
        let (gain, shift) = analytic_coefficients(self.sched.alpha_bar(t)?, self.sigma0);
        let m = g.constant(self.mu.scale(shift));
        let centered = g.sub(z_t, m)?;
        Ok(Some(g.scale(centered, gain)?))
    }
}

/// Test double that always answers with a fixed tensor.
#[derive(Clone, Debug)]
pub struct FixedDenoiser {
    pub output: Tensor,
    pub sched: NoiseSchedule,
}

impl Denoiser for FixedDenoiser {
    fn name(&self) -> &str {
        "fixed"
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn predict(&self, z_t: &Tensor, t: usize, _cond: &Tensor) -> Result<Tensor> {
        self.sched.alpha_bar(t)?;
        if z_t.shape() != self.output.shape() {
            return Err(Error::shape("fixed denoiser", format!("{:?}", z_t.shape())));
        }
        Ok(self.output.clone())
    }
}

/// Shared backend contract: shape echo, determinism, finite output, and
/// rejection of timesteps outside the schedule. Returns the first violation.
pub fn check_denoiser_contract(d: &dyn Denoiser, z_t: &Tensor, cond: &Tensor) -> Result<()> {
    let steps = d.schedule().steps();
    for t in [0, steps / 2, steps - 1] {
        let a = d.predict(z_t, t, cond)?;
        if a.shape() != z_t.shape() {
            return Err(Error::Backend {
                backend: d.name().into(),
                detail: format!("output shape {:?} != input shape {:?}", a.shape(), z_t.shape()),
            });
        }
        if !a.is_finite() {
            return Err(Error::Backend {
                backend: d.name().into(),
                detail: format!("non-finite output at t={t}"),
            });
        }
        let b = d.predict(z_t, t, cond)?;
        if a != b {
            return Err(Error::Backend {
                backend: d.name().into(),
                detail: format!("repeated call at t={t} differs"),
            });
        }
    }
    if d.predict(z_t, steps, cond).is_ok() {
        return Err(Error::Backend {
            backend: d.name().into(),
            detail: format!("timestep {steps} past the schedule was accepted"),
        });
    }
    Ok(())
}
