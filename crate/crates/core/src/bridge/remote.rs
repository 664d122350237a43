use std::sync::Arc;

use super::client::BridgeClient;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::prior::{Denoiser, LatentCodec, NoiseSchedule};
use crate::raster::Image;

/// Denoiser served by a bridge. Not differentiable in process, so only the
/// distilled gradient mode can use it.
pub struct RemoteDenoiser {
    client: Arc<BridgeClient>,
    sched: NoiseSchedule,
}

impl RemoteDenoiser {
    /// Uses the schedule the server advertises.
    pub fn connect(client: Arc<BridgeClient>) -> Result<Self> {
        let sched = client.schedule()?;
        Ok(Self { client, sched })
    }
}

impl Denoiser for RemoteDenoiser {
    fn name(&self) -> &str {
        "remote"
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn predict(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor> {
        self.sched.alpha_bar(t)?;
        let eps = self.client.denoise(z_t, t, cond)?;
        if eps.shape() != z_t.shape() {
            return Err(Error::Backend {
                backend: "remote".into(),
                detail: format!("denoise returned {:?} for input {:?}", eps.shape(), z_t.shape()),
            });
        }
        Ok(eps)
    }
}

/// Autoencoder served by a bridge. The latent of a `W x H` image is
/// `[H/f, W/f, C]`, with `f` and `C` probed once at connection.
pub struct RemoteCodec {
    client: Arc<BridgeClient>,
    factor: usize,
    channels: usize,
}

const PROBE: usize = 16;

impl RemoteCodec {
    pub fn connect(client: Arc<BridgeClient>) -> Result<Self> {
        let probe = Image::filled(PROBE, PROBE, [0.5; 3])?;
        let z = client.encode(&probe)?;
        let (factor, channels) = match *z.shape() {
            [h, w, c] if h == w && h > 0 && PROBE % h == 0 && c > 0 => (PROBE / h, c),
            _ => {
                return Err(Error::Backend {
                    backend: "remote".into(),
                    detail: format!("encode of a {PROBE}x{PROBE} probe gave latent {:?}", z.shape()),
                })
            }
        };
        Ok(Self {
            client,
            factor,
            channels,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

impl LatentCodec for RemoteCodec {
    fn encode(&self, x: &Image) -> Result<Tensor> {
        self.client.encode(x)
    }

    fn decode(&self, z: &Tensor) -> Result<Image> {
        self.client.decode(z)
    }

    fn latent_shape(&self, width: usize, height: usize) -> Vec<usize> {
        vec![height / self.factor, width / self.factor, self.channels]
    }

    /// `decode(z + dz) - decode(z)` at `z = encode(x)`: the decoder's
    /// response to `dz` stands in for the encoder transpose, which the wire
    /// protocol does not expose.
    fn pullback(&self, x: &Image, dz: &Tensor) -> Result<Tensor> {
        let z = self.encode(x)?;
        let moved = z.axpy(1.0, dz)?;
        let base = self.decode(&z)?;
        let pushed = self.decode(&moved)?;
        if !pushed.same_size(x) || !base.same_size(x) {
            return Err(Error::Backend {
                backend: "remote".into(),
                detail: "decode does not return the input size".into(),
            });
        }
        let diff = pushed.data().iter().zip(base.data()).map(|(a, b)| a - b).collect();
        Tensor::new(vec![x.num_pixels(), 3], diff)
    }
}
