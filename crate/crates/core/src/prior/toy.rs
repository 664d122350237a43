use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::Denoiser;
use super::guidance::EmbeddingTable;
use super::schedule::NoiseSchedule;
use crate::autodiff::{Graph, Tensor, Var};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::trainer::{Adam, OptimizerState};

/// Size and training settings of the toy denoiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub image_size: usize,
    pub embed_dim: usize,
    /// Width of the linear projection of the noisy input.
    pub proj_dim: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Training timesteps are drawn from this fraction of the schedule.
    pub t_range: [f64; 2],
    pub seed: u64,
    /// Permute labels before training (conditioning ablation).
    pub shuffle_labels: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            embed_dim: 16,
            proj_dim: 32,
            hidden: 128,
            steps: 1500,
            batch: 16,
            lr: 2e-3,
            t_range: [0.02, 0.98],
            seed: 0,
            shuffle_labels: false,
        }
    }
}

const TIME_FEATURES: usize = 8;
const PARAMS: usize = 8;

/// Learned-mean Gaussian denoiser:
/// `eps = gate * g(t) * (z_t - sqrt(ab) * x0(z_t, t, c))` with
/// `g(t) = sqrt(1-ab) / (ab v + 1 - ab)`. `x0` is the pixel mean plus a
/// one-hidden-layer perceptron over a projection of `z_t`, time features, and
/// the pooled conditioning `c`, plus a linear term `c W_c`. The gate starts
/// at zero, so an untrained model predicts zero noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDenoiser {
    config: ToyConfig,
    sched: NoiseSchedule,
    variance: f64,
    mean: Tensor,
    /// proj, proj bias, w1, b1, w2, b2, gate, W_c.
    params: Vec<Tensor>,
}

/// Class-labelled training images.
#[derive(Clone, Debug)]
pub struct LabeledImages {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub vocabulary: Vec<String>,
}

impl LabeledImages {
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if self.labels.len() != self.images.len() {
            return Err(Error::invalid("one label per image is required"));
        }
        let (w, h) = (self.images[0].width(), self.images[0].height());
        if self.images.iter().any(|i| i.width() != w || i.height() != h) {
            return Err(Error::invalid("training images differ in size"));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.vocabulary.len()) {
            return Err(Error::invalid(format!("label {bad} outside the vocabulary")));
        }
        Ok(())
    }
}

fn time_features(ab: f64, t: usize, steps: usize) -> [f64; TIME_FEATURES] {
    let u = std::f64::consts::PI * t as f64 / steps as f64;
    [
        ab.sqrt(),
        (1.0 - ab).sqrt(),
        u.sin(),
        u.cos(),
        (2.0 * u).sin(),
        (2.0 * u).cos(),
        (3.0 * u).sin(),
        (3.0 * u).cos(),
    ]
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.random_range(-bound..=bound) as f32 as f64).collect(),
    )
}

impl ToyDenoiser {
    /// Fresh model plus a random class table; `mean`/`variance` describe the
    /// training pixels.
    pub fn init(
        config: ToyConfig,
        sched: NoiseSchedule,
        mean: Tensor,
        variance: f64,
        classes: usize,
    ) -> Result<(Self, Tensor)> {
        let n = config.image_size * config.image_size * 3;
        if mean.numel() != n {
            return Err(Error::invalid("mean image does not match image_size"));
        }
        if config.embed_dim == 0 || config.proj_dim == 0 || config.hidden == 0 || classes == 0 {
            return Err(Error::invalid("toy denoiser dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (p, h, d) = (config.proj_dim, config.hidden, config.embed_dim);
        let fan = p + TIME_FEATURES + d;
        let params = vec![
            uniform(&mut rng, vec![n, p], (6.0 / (n + p) as f64).sqrt())?,
            Tensor::zeros(vec![1, p]),
            uniform(&mut rng, vec![fan, h], (6.0 / fan as f64).sqrt())?,
            Tensor::zeros(vec![1, h]),
            uniform(&mut rng, vec![h, n], 0.1 * (6.0 / (h + n) as f64).sqrt())?,
            Tensor::zeros(vec![1, n]),
            Tensor::zeros(vec![1, 1]),
            uniform(&mut rng, vec![d, n], 0.1 * (6.0 / (d + n) as f64).sqrt())?,
        ];
        let table = uniform(&mut rng, vec![classes, d], 1.0)?;
        let mean = Tensor::new(vec![1, n], mean.data().iter().map(|&v| v as f32 as f64).collect())?;
        Ok((
            Self {
                config,
                sched,
                variance: variance as f32 as f64,
                mean,
                params,
            },
            table,
        ))
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn latent_len(&self) -> usize {
        self.config.image_size * self.config.image_size * 3
    }

    /// Record predictions for a batch: `z` is `[B, n]`, `cond` is `[B, D]`.
    fn forward(&self, g: &mut Graph, pv: &[Var], z: Var, ts: &[usize], cond: Var) -> Result<Var> {
        let b = ts.len();
        let steps = self.sched.steps();
        let mut tf = Vec::with_capacity(b * TIME_FEATURES);
        let mut gain = Vec::with_capacity(b);
        let mut shift = Vec::with_capacity(b);
        for &t in ts {
            let ab = self.sched.alpha_bar(t)?;
            tf.extend(time_features(ab, t, steps));
            gain.push((1.0 - ab).sqrt() / (ab * self.variance + 1.0 - ab));
            shift.push(ab.sqrt());
        }
        let zp = g.matmul(z, pv[0])?;
        let h0 = g.add(zp, pv[1])?;
        let tf = g.constant(Tensor::new(vec![b, TIME_FEATURES], tf)?);
        let inp = g.concat(&[h0, tf, cond], 1)?;
        let a1 = g.matmul(inp, pv[2])?;
        let a1 = g.add(a1, pv[3])?;
        let h1 = g.relu(a1)?;
        let o = g.matmul(h1, pv[4])?;
        let o = g.add(o, pv[5])?;
        let lin = g.matmul(cond, pv[7])?;
        let o = g.add(o, lin)?;
        let mean = g.constant(self.mean.clone());
        let x0 = g.add(o, mean)?;
        let shift = g.constant(Tensor::new(vec![b, 1], shift)?);
        let sx0 = g.mul(x0, shift)?;
        let r = g.sub(z, sx0)?;
        let gain = g.constant(Tensor::new(vec![b, 1], gain)?);
        let e = g.mul(r, gain)?;
        g.mul(e, pv[6])
    }

    fn check_latent(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.image_size;
        if shape != [s, s, 3] {
            return Err(Error::shape(
                "toy denoiser",
                format!("expected latent [{s}, {s}, 3], got {shape:?}"),
            ));
        }
        Ok(())
    }

    fn pooled(&self, g: &mut Graph, cond: Var) -> Result<Var> {
        let shape = g.shape(cond).to_vec();
        if shape.len() != 2 || shape[1] != self.config.embed_dim || shape[0] == 0 {
            return Err(Error::shape(
                "toy denoiser",
                format!("conditioning must be [K>0, {}], got {shape:?}", self.config.embed_dim),
            ));
        }
        let m = g.mean_axis(cond, 0)?;
        g.reshape(m, vec![1, self.config.embed_dim])
    }

    pub fn to_bytes(&self, table: &EmbeddingTable) -> Result<Vec<u8>> {
        let header = toml::to_string(&ToyHeader {
            config: self.config.clone(),
            variance: self.variance,
            schedule_steps: self.sched.steps(),
            beta_start: self.sched.beta()[0],
            beta_end: *self.sched.beta().last().expect("non-empty schedule"),
            labels: table.labels().to_vec(),
        })
        .map_err(|e| Error::format(format!("cannot encode toy header: {e}")))?;
        let mut tensors = vec![self.mean.clone()];
        tensors.extend(self.params.iter().cloned());
        tensors.push(table.table().clone());
        Ok(Container::new(TOY_MAGIC, header, tensors).to_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, EmbeddingTable)> {
        let c = Container::from_bytes(bytes, TOY_MAGIC)?;
        let h: ToyHeader = toml::from_str(&c.header).map_err(|e| Error::format(format!("bad toy header: {e}")))?;
        let sched = NoiseSchedule::linear(h.schedule_steps, h.beta_start, h.beta_end)
            .map_err(|e| Error::format(e.to_string()))?;
        let mut tensors = c.tensors;
        if tensors.len() != PARAMS + 2 {
            return Err(Error::format("toy prior holds the wrong number of tensors"));
        }
        let table = tensors.pop().expect("table");
        let mean = tensors.remove(0);
        let (template, _) = Self::init(
            h.config.clone(),
            sched.clone(),
            mean.clone(),
            h.variance,
            h.labels.len().max(1),
        )
        .map_err(|e| Error::format(e.to_string()))?;
        for (a, b) in template.params.iter().zip(&tensors) {
            if a.shape() != b.shape() {
                return Err(Error::format(format!(
                    "toy parameter shape {:?} does not match config ({:?})",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        let table = EmbeddingTable::new(h.labels, table).map_err(|e| Error::format(e.to_string()))?;
        if table.dim() != h.config.embed_dim {
            return Err(Error::format("embedding width does not match config"));
        }
        Ok((
            Self {
                config: h.config,
                sched,
                variance: h.variance,
                mean: template.mean,
                params: tensors,
            },
            table,
        ))
    }

    pub fn save(&self, table: &EmbeddingTable, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes(table)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, EmbeddingTable)> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub const TOY_MAGIC: [u8; 4] = *b"NRDT";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyHeader {
    config: ToyConfig,
    variance: f64,
    schedule_steps: usize,
    beta_start: f64,
    beta_end: f64,
    labels: Vec<String>,
}

impl Denoiser for ToyDenoiser {
    fn name(&self) -> &str {
        "toy"
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    fn predict(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let z = g.constant(z_t.clone());
        let c = g.constant(cond.clone());
        let out = self
            .predict_graph(&mut g, z, t, c)?
            .expect("toy denoiser is differentiable");
        Ok(g.value(out).clone())
    }

    fn predict_graph(&self, g: &mut Graph, z_t: Var, t: usize, cond: Var) -> Result<Option<Var>> {
        self.check_latent(g.shape(z_t))?;
        let shape = g.shape(z_t).to_vec();
        let pv: Vec<Var> = self.params.iter().map(|p| g.constant(p.clone())).collect();
        let z = g.reshape(z_t, vec![1, self.latent_len()])?;
        let c = self.pooled(g, cond)?;
        let e = self.forward(g, &pv, z, &[t], c)?;
        Ok(Some(g.reshape(e, shape)?))
    }
}

/// Outcome of toy training.
#[derive(Clone, Debug)]
pub struct ToyTraining {
    pub denoiser: ToyDenoiser,
    pub embeddings: EmbeddingTable,
    /// Per-step mean squared residual.
    pub losses: Vec<f64>,
}

fn flatten(img: &Image) -> &[f64] {
    img.data()
}

/// Fit the toy denoiser and per-class embeddings to labelled images.
pub fn train_toy_denoiser(data: &LabeledImages, sched: &NoiseSchedule, config: &ToyConfig) -> Result<ToyTraining> {
    data.validate()?;
    let s = config.image_size;
    if data.images[0].width() != s || data.images[0].height() != s {
        return Err(Error::invalid(format!(
            "training images are {}x{}, config expects {s}x{s}",
            data.images[0].width(),
            data.images[0].height()
        )));
    }
    if config.batch == 0 {
        return Err(Error::invalid("batch must be positive"));
    }
    let n = s * s * 3;
    let count = data.images.len() as f64;
    let mut mean = vec![0.0; n];
    for img in &data.images {
        for (m, v) in mean.iter_mut().zip(flatten(img)) {
            *m += v / count;
        }
    }
    let variance = data
        .images
        .iter()
        .flat_map(|img| flatten(img).iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)))
        .sum::<f64>()
        / (count * n as f64);
    let (mut model, table) = ToyDenoiser::init(
        config.clone(),
        sched.clone(),
        Tensor::new(vec![1, n], mean)?,
        variance,
        data.vocabulary.len(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut labels = data.labels.clone();
    if config.shuffle_labels {
        labels.shuffle(&mut rng);
    }
    let (t_lo, t_hi) = sched.fraction_range(config.t_range[0], config.t_range[1])?;

    let mut tensors = model.params.clone();
    tensors.push(table);
    let mut state = OptimizerState::new(&tensors);
    let adam = Adam::default();
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let b = config.batch;
        let mut zdata = Vec::with_capacity(b * n);
        let mut eps = Vec::with_capacity(b * n);
        let mut ts = Vec::with_capacity(b);
        let mut rows = Vec::with_capacity(b);
        for _ in 0..b {
            let i = rng.random_range(0..data.images.len());
            let t = rng.random_range(t_lo..=t_hi);
            let ab = sched.alpha_bar(t)?;
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            for &x in flatten(&data.images[i]) {
                let e: f64 = rng.sample(StandardNormal);
                zdata.push(sa * x + sb * e);
                eps.push(e);
            }
            ts.push(t);
            rows.push(labels[i]);
        }
        let mut g = Graph::new();
        let pv: Vec<Var> = tensors.iter().map(|p| g.param(p.clone())).collect();
        let z = g.constant(Tensor::new(vec![b, n], zdata)?);
        let cond = g.gather(pv[PARAMS], Arc::new(rows))?;
        let e_hat = model.forward(&mut g, &pv, z, &ts, cond)?;
        let target = g.constant(Tensor::new(vec![b, n], eps)?);
        let diff = g.sub(target, e_hat)?;
        let sq = g.mul(diff, diff)?;
        let loss = g.mean(sq)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("toy denoiser loss is {value}"),
            });
        }
        losses.push(value);
        let grads = g.backward(loss)?;
        let grads: Vec<Tensor> = pv.iter().map(|&v| grads.wrt(v)).collect::<Result<_>>()?;
        adam.step(&mut tensors, &grads, &mut state, config.lr)?;
    }
    let table = tensors.pop().expect("table");
    model.params = tensors;
    let embeddings = EmbeddingTable::new(data.vocabulary.clone(), table)?;
    Ok(ToyTraining {
        denoiser: model,
        embeddings,
        losses,
    })
}

/// Fixed validation draws: per image `draws` pairs of timestep and noise.
#[derive(Clone, Debug)]
pub struct ValidationDraws {
    pub draws: Vec<Vec<(usize, Tensor)>>,
}

impl ValidationDraws {
    pub fn new(images: &[Image], sched: &NoiseSchedule, t_range: [f64; 2], draws: usize, seed: u64) -> Result<Self> {
        let (lo, hi) = sched.fraction_range(t_range[0], t_range[1])?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws = images
            .iter()
            .map(|img| {
                (0..draws)
                    .map(|_| {
                        let t = rng.random_range(lo..=hi);
                        let e = (0..img.num_pixels() * 3).map(|_| rng.sample(StandardNormal)).collect();
                        Ok((t, Tensor::new(vec![img.height(), img.width(), 3], e)?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { draws })
    }
}

/// Mean per-element residual of `denoiser` over images with the given
/// per-image conditioning.
pub fn mean_residual(
    denoiser: &dyn Denoiser,
    images: &[Image],
    conds: &[Tensor],
    draws: &ValidationDraws,
) -> Result<f64> {
    let codec = super::denoiser::IdentityCodec;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((img, cond), ds) in images.iter().zip(conds).zip(&draws.draws) {
        for (t, eps) in ds {
            total += super::residual::diffusion_residual(denoiser, &codec, img, cond, *t, eps, denoiser.schedule())?;
            count += eps.numel();
        }
    }
    Ok(total / count as f64)
}
