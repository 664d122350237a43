use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::adam::{Adam, OptimizerState};
use super::config::SynthesisConfig;
use super::views::sample_view;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::{Checkpoint, FieldParams, FieldVars};
use crate::objective::{
    combine, depth_corr_loss_graph, novel_view_loss_graph, recon_loss_graph, LossReport, LossTerms, DEPTH_EPS,
};
use crate::prior::{Denoiser, GuidanceEmbedding, LatentCodec};
use crate::raster::{DepthMap, Image, Resampler};
use crate::render::{
    pixel_to_ray, render_rays_graph, CameraIntrinsics, CameraPose, Ray, RayQuery, RenderConfig, SceneBox,
};

/// Inputs of one synthesis run besides the configuration.
pub struct SynthesisInputs<'a> {
    pub image: &'a Image,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    /// Monocular depth estimate at the input view; required when the depth
    /// weight is positive.
    pub depth: Option<&'a DepthMap>,
    /// Foreground pixels; restricts the depth correlation.
    pub mask: Option<&'a [bool]>,
    pub guidance: &'a GuidanceEmbedding,
    pub denoiser: &'a dyn Denoiser,
    pub codec: &'a dyn LatentCodec,
    /// Start from these parameters (and optimizer state, when present)
    /// instead of a fresh initialization.
    pub warm_start: Option<Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossReport>,
}

/// Per-step seed for a named purpose, derived without touching the step RNG.
fn sub_seed(seed: u64, step: usize, purpose: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(step as u64);
    r.random()
}

fn view_rays(intr: &CameraIntrinsics, pose: &CameraPose, bbox: &SceneBox) -> Result<Vec<Option<Ray>>> {
    let mut rays = Vec::with_capacity(intr.width * intr.height);
    for y in 0..intr.height {
        for x in 0..intr.width {
            rays.push(pixel_to_ray(intr, pose, [x as f64 + 0.5, y as f64 + 0.5], bbox)?);
        }
    }
    Ok(rays)
}

fn grad_norm(g: &Graph, loss: Var, vars: &FieldVars) -> Result<f64> {
    let grads = g.backward(loss)?;
    Ok(vars
        .all()
        .iter()
        .filter_map(|&v| grads.get(v))
        .map(|t| t.data().iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt())
}

struct Run<'a> {
    inputs: &'a SynthesisInputs<'a>,
    cfg: &'a SynthesisConfig,
    input_rays: Vec<Option<Ray>>,
    depth_valid: Vec<bool>,
    cond: Tensor,
    resampler: Option<Resampler>,
    t_bounds: (usize, usize),
    latent_shape: Vec<usize>,
}

enum StepOutcome {
    Updated(LossReport),
    Skipped(LossReport),
}

impl Run<'_> {
    fn step(&self, params: &mut FieldParams, state: &mut OptimizerState, k: usize) -> Result<StepOutcome> {
        let cfg = self.cfg;
        let img = self.inputs.image;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64 + 1);
        let npix = img.num_pixels();
        let picks: Vec<usize> = (0..cfg.recon.rays).map(|_| rng.random_range(0..npix)).collect();
        let (pose, intr) = sample_view(&mut rng, &cfg.novel)?;
        let t = rng.random_range(self.t_bounds.0..=self.t_bounds.1);
        let n_eps: usize = self.latent_shape.iter().product();
        let eps = Tensor::new(
            self.latent_shape.clone(),
            (0..n_eps).map(|_| rng.sample(StandardNormal)).collect(),
        )?;

        let w = &cfg.weights;
        let mut g = Graph::new();
        let vars = params.register(&mut g, true);
        let field_cfg = params.config().clone();
        let mut report = LossReport {
            step: k,
            lr: cfg.learning_rate(k),
            view: Some(k as u64),
            ..Default::default()
        };
        let mut terms = LossTerms::default();

        if w.lambda_rec > 0.0 || w.lambda_depth > 0.0 {
            let rcfg = RenderConfig {
                seed: sub_seed(cfg.seed, k, 1),
                ..cfg.render.clone()
            };
            let queries: Vec<RayQuery> = picks
                .iter()
                .enumerate()
                .map(|(i, &p)| RayQuery {
                    ray: self.input_rays[p],
                    stream: i as u64,
                })
                .collect();
            let rr = render_rays_graph(&mut g, &field_cfg, &vars, &queries, &rcfg)?;
            if w.lambda_rec > 0.0 {
                let target: Vec<f64> = picks
                    .iter()
                    .flat_map(|&p| img.data()[3 * p..3 * p + 3].to_vec())
                    .collect();
                let target = Tensor::new(vec![picks.len(), 3], target)?;
                let l = recon_loss_graph(&mut g, rr.rgb, &target, None)?;
                report.recon = Some(g.value(l).item()?);
                terms.recon = Some(l);
            }
            if w.lambda_depth > 0.0 {
                let est = self.inputs.depth.expect("checked before training");
                let sel: Vec<bool> = picks
                    .iter()
                    .zip(&rr.hit)
                    .map(|(&p, &h)| h && self.depth_valid[p])
                    .collect();
                let d_est: Vec<f64> = picks.iter().map(|&p| est.data()[p]).collect();
                match depth_corr_loss_graph(&mut g, rr.depth, &d_est, Some(&sel)) {
                    Ok(l) => {
                        report.depth = Some(g.value(l).item()?);
                        terms.depth = Some(l);
                    }
                    // too few or flat estimates in this batch: no depth term this step
                    Err(Error::DegenerateDepth(_)) | Err(Error::Invalid(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }

        if w.lambda_diff > 0.0 {
            let rcfg = RenderConfig {
                seed: sub_seed(cfg.seed, k, 2),
                ..cfg.render.clone()
            };
            let rays = view_rays(&intr, &pose, &SceneBox::default())?;
            let queries: Vec<RayQuery> = rays
                .into_iter()
                .enumerate()
                .map(|(i, ray)| RayQuery { ray, stream: i as u64 })
                .collect();
            let rr = render_rays_graph(&mut g, &field_cfg, &vars, &queries, &rcfg)?;
            let x = match &self.resampler {
                Some(r) => r.apply_graph(&mut g, rr.rgb)?,
                None => rr.rgb,
            };
            let size = [cfg.novel.prior_size; 2];
            let nv = novel_view_loss_graph(
                &mut g,
                x,
                size,
                self.inputs.denoiser,
                self.inputs.codec,
                &self.cond,
                self.inputs.denoiser.schedule(),
                cfg.loss.mode,
                cfg.loss.weighting,
                t,
                &eps,
            );
            report.t = Some(t);
            match nv {
                Ok(nv) => {
                    report.diffusion = Some(nv.residual);
                    terms.diffusion = Some(nv.loss);
                }
                Err(e @ Error::Backend { .. }) => {
                    report.skipped = Some(e.to_string());
                    return Ok(StepOutcome::Skipped(report));
                }
                Err(e) => return Err(e),
            }
        }

        let total = combine(&mut g, &terms, w)?;
        report.total = g.value(total).item()?;
        let grads = g.backward(total)?;
        let grads: Vec<Tensor> = vars
            .all()
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
            })
            .collect();
        report.grad_norm = grads
            .iter()
            .map(|t| t.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if cfg.loss.term_grad_norms {
            let mut norms = [0.0; 3];
            for (slot, (term, lambda)) in norms.iter_mut().zip([
                (terms.recon, w.lambda_rec),
                (terms.diffusion, w.lambda_diff),
                (terms.depth, w.lambda_depth),
            ]) {
                if let Some(v) = term {
                    *slot = lambda * grad_norm(&g, v, &vars)?;
                }
            }
            report.term_grad_norms = Some(norms);
        }
        if !report.is_finite() || grads.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged {
                step: k,
                detail: report.to_json_line(),
            });
        }
        let adam = Adam {
            beta1: cfg.optim.beta1,
            beta2: cfg.optim.beta2,
            eps: cfg.optim.eps,
        };
        adam.step(params.tensors_mut(), &grads, state, report.lr)?;
        Ok(StepOutcome::Updated(report))
    }
}

/// Optimize a field so that it reproduces the input view, correlates with
/// the depth estimate there, and looks plausible to the prior from sampled
/// views. Runs until the optimizer has taken `cfg.iterations` steps; a warm
/// start with optimizer state resumes where it stopped.
pub fn synthesize(
    inputs: &SynthesisInputs<'_>,
    cfg: &SynthesisConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Synthesis> {
    cfg.validate()?;
    let img = inputs.image;
    let intr = inputs.intrinsics;
    if intr.width != img.width() || intr.height != img.height() {
        return Err(Error::shape(
            "synthesize",
            format!(
                "camera is {}x{} but the image is {}x{}",
                intr.width,
                intr.height,
                img.width(),
                img.height()
            ),
        ));
    }
    if let Some(m) = inputs.mask {
        if m.len() != img.num_pixels() {
            return Err(Error::shape("synthesize", "mask does not match the image"));
        }
    }
    let mut depth_valid = vec![true; img.num_pixels()];
    if cfg.weights.lambda_depth > 0.0 {
        let d = inputs
            .depth
            .ok_or_else(|| Error::invalid("a depth estimate is required when lambda_depth > 0"))?;
        if d.width() != img.width() || d.height() != img.height() {
            return Err(Error::shape("synthesize", "depth estimate does not match the image"));
        }
        for (i, v) in depth_valid.iter_mut().enumerate() {
            *v = d.data()[i].is_finite() && inputs.mask.is_none_or(|m| m[i]);
        }
        let vals: Vec<f64> = d
            .data()
            .iter()
            .zip(&depth_valid)
            .filter(|(_, &v)| v)
            .map(|(x, _)| *x)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if vals.len() < 2 || !(var > DEPTH_EPS) {
            return Err(Error::DegenerateDepth(format!(
                "estimated depth over {} usable pixels has variance {var:e}",
                vals.len()
            )));
        }
    }

    let (mut params, mut state) = match &inputs.warm_start {
        Some(c) => {
            let state = c
                .optimizer
                .clone()
                .unwrap_or_else(|| OptimizerState::new(c.params.tensors()));
            state.check_mirrors(c.params.tensors())?;
            (c.params.clone(), state)
        }
        None => {
            let p = FieldParams::init(cfg.field.clone(), cfg.seed)?;
            let s = OptimizerState::new(p.tensors());
            (p, s)
        }
    };

    let sched = inputs.denoiser.schedule();
    let n = &cfg.novel;
    let run = Run {
        inputs,
        cfg,
        input_rays: view_rays(&intr, &inputs.pose, &SceneBox::default())?,
        depth_valid,
        cond: inputs.guidance.joint(),
        resampler: (n.render_size != n.prior_size)
            .then(|| Resampler::new([n.render_size; 2], [n.prior_size; 2]))
            .transpose()?,
        t_bounds: sched.fraction_range(cfg.loss.t_range[0], cfg.loss.t_range[1])?,
        latent_shape: inputs.codec.latent_shape(n.prior_size, n.prior_size),
    };

    let mut reports = Vec::new();
    let mut skips = 0;
    let mut k = state.step as usize;
    while k < cfg.iterations {
        let outcome = run.step(&mut params, &mut state, k)?;
        let report = match outcome {
            StepOutcome::Updated(r) => {
                skips = 0;
                r
            }
            StepOutcome::Skipped(r) => {
                skips += 1;
                if skips > cfg.prior.max_skips {
                    return Err(Error::Backend {
                        backend: inputs.denoiser.name().into(),
                        detail: format!(
                            "{skips} consecutive failures, last at step {k}: {}",
                            r.skipped.as_deref().unwrap_or("")
                        ),
                    });
                }
                r
            }
        };
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", report.to_json_line())?;
        }
        reports.push(report);
        k += 1;
        if cfg.checkpoint.every > 0 && k % cfg.checkpoint.every == 0 {
            let dir = cfg.checkpoint.dir.as_ref().expect("validated");
            std::fs::create_dir_all(dir)?;
            Checkpoint::new(params.clone(), Some(state.clone())).save(&dir.join(format!("step_{k:06}.nrdf")))?;
        }
    }
    Ok(Synthesis {
        checkpoint: Checkpoint::new(params, Some(state)),
        log: reports,
    })
}
