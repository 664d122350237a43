use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::{pixel_to_ray, CameraIntrinsics, CameraPose, Ray, SceneBox};
use crate::error::{Error, Result};
use crate::field::{FieldOutput, FieldParams};
use crate::raster::{DepthMap, Image};

/// Anything that maps world points to color and density.
pub trait RadianceField: Sync {
    fn eval_points(&self, points: &[[f64; 3]]) -> Result<Vec<FieldOutput>>;
}

impl RadianceField for FieldParams {
    fn eval_points(&self, points: &[[f64; 3]]) -> Result<Vec<FieldOutput>> {
        self.eval_batch(points)
    }
}

/// Adapts a per-point closure into a field.
pub struct FnField<F>(pub F);

impl<F> RadianceField for FnField<F>
where
    F: Fn([f64; 3]) -> FieldOutput + Sync,
{
    fn eval_points(&self, points: &[[f64; 3]]) -> Result<Vec<FieldOutput>> {
        Ok(points.iter().map(|&p| (self.0)(p)).collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    #[default]
    White,
    Black,
}

impl Background {
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Background::White => [1.0; 3],
            Background::Black => [0.0; 3],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthMode {
    /// Weight-averaged sample position.
    #[default]
    Expected,
    /// Integrated density along the ray.
    Optical,
}

/// Quadrature settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub stratified_jitter: bool,
    pub background: Background,
    pub depth_mode: DepthMode,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 128,
            stratified_jitter: true,
            background: Background::White,
            depth_mode: DepthMode::Expected,
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray < 2 {
            return Err(Error::invalid(format!(
                "samples_per_ray must be at least 2, got {}",
                self.samples_per_ray
            )));
        }
        Ok(())
    }
}

/// Rays with accumulated weight below this count as transparent.
pub const TRANSPARENT_OPACITY: f64 = 1e-6;

/// Sample positions along `ray` and the common segment width. Segment `i`
/// covers `[t_near + i*dt, t_near + (i+1)*dt]`; the sample sits on its left
/// edge, or uniformly inside it with jitter. `stream` selects an independent
/// jitter sequence so results do not depend on evaluation order.
pub fn sample_positions(ray: &Ray, cfg: &RenderConfig, stream: u64) -> (Vec<f64>, f64) {
    let n = cfg.samples_per_ray;
    let dt = (ray.t_far - ray.t_near) / n as f64;
    let mut rng = cfg.stratified_jitter.then(|| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(stream);
        r
    });
    let t = (0..n)
        .map(|i| {
            let u = rng.as_mut().map_or(0.0, |r| r.random::<f64>());
            ray.t_near + (i as f64 + u) * dt
        })
        .collect();
    (t, dt)
}

/// Everything produced by rendering one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayRender {
    pub rgb: [f64; 3],
    pub opacity: f64,
    /// Depth according to the configured mode.
    pub depth: f64,
    pub expected_depth: f64,
    pub optical_depth: f64,
    pub weights: Vec<f64>,
    pub t: Vec<f64>,
    /// Expected depth fell back to `t_far` because the ray is transparent.
    pub transparent: bool,
}

/// Alpha-composite samples with uniform segment width `dt`.
pub fn composite(samples: &[FieldOutput], t: &[f64], dt: f64, t_far: f64, cfg: &RenderConfig) -> RayRender {
    let bg = cfg.background.rgb();
    let mut trans = 1.0;
    let mut weights = Vec::with_capacity(samples.len());
    let mut rgb = [0.0; 3];
    let (mut opacity, mut wt, mut optical) = (0.0, 0.0, 0.0);
    for (s, &ti) in samples.iter().zip(t) {
        let sd = s.sigma * dt;
        let keep = (-sd).exp();
        let w = trans * (1.0 - keep);
        trans *= keep;
        for c in 0..3 {
            rgb[c] += w * s.rgb[c];
        }
        opacity += w;
        wt += w * ti;
        optical += sd;
        weights.push(w);
    }
    for c in 0..3 {
        rgb[c] += (1.0 - opacity) * bg[c];
    }
    let transparent = opacity < TRANSPARENT_OPACITY;
    let expected_depth = if transparent { t_far } else { wt / opacity };
    let depth = match cfg.depth_mode {
        DepthMode::Expected => expected_depth,
        DepthMode::Optical => optical,
    };
    RayRender {
        rgb,
        opacity,
        depth,
        expected_depth,
        optical_depth: optical,
        weights,
        t: t.to_vec(),
        transparent,
    }
}

fn check_samples(samples: &[FieldOutput], ray: usize) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if !s.sigma.is_finite() || !s.rgb.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteSample { ray, sample: i });
        }
    }
    Ok(())
}

pub fn render_ray<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    cfg: &RenderConfig,
    stream: u64,
) -> Result<RayRender> {
    cfg.validate()?;
    let (t, dt) = sample_positions(ray, cfg, stream);
    let pts: Vec<[f64; 3]> = t.iter().map(|&ti| ray.at(ti)).collect();
    let samples = field.eval_points(&pts)?;
    check_samples(&samples, stream as usize)?;
    Ok(composite(&samples, &t, dt, ray.t_far, cfg))
}

/// Per-pixel color, depth and opacity of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub image: Image,
    pub depth: DepthMap,
    pub opacity: DepthMap,
    /// Pixels whose ray hit the box and was not transparent.
    pub depth_valid: Vec<bool>,
}

/// Render every pixel of a view. Rows are distributed over the current rayon
/// pool; each pixel draws jitter from its own stream, so the output does not
/// depend on the number of workers.
pub fn render_image<F: RadianceField + ?Sized>(
    field: &F,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    cfg: &RenderConfig,
    bbox: &SceneBox,
) -> Result<RenderedView> {
    intr.validate()?;
    pose.validate()?;
    cfg.validate()?;
    let (w, h) = (intr.width, intr.height);
    let bg = cfg.background.rgb();
    let rows: Vec<Vec<(RayRender, bool)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut rays = Vec::with_capacity(w);
            for x in 0..w {
                let r = pixel_to_ray(intr, pose, [x as f64 + 0.5, y as f64 + 0.5], bbox)?;
                rays.push(r);
            }
            let mut pts = Vec::new();
            let mut ts = Vec::with_capacity(w);
            for (x, r) in rays.iter().enumerate() {
                if let Some(r) = r {
                    let (t, dt) = sample_positions(r, cfg, (y * w + x) as u64);
                    pts.extend(t.iter().map(|&ti| r.at(ti)));
                    ts.push(Some((t, dt)));
                } else {
                    ts.push(None);
                }
            }
            let samples = field.eval_points(&pts)?;
            let s = cfg.samples_per_ray;
            let mut offset = 0;
            let mut out = Vec::with_capacity(w);
            for (x, (r, tdt)) in rays.iter().zip(ts).enumerate() {
                match (r, tdt) {
                    (Some(r), Some((t, dt))) => {
                        let chunk = &samples[offset..offset + s];
                        offset += s;
                        check_samples(chunk, y * w + x)?;
                        let rr = composite(chunk, &t, dt, r.t_far, cfg);
                        let valid = !rr.transparent;
                        out.push((rr, valid));
                    }
                    _ => out.push((
                        RayRender {
                            rgb: bg,
                            opacity: 0.0,
                            depth: 0.0,
                            expected_depth: 0.0,
                            optical_depth: 0.0,
                            weights: Vec::new(),
                            t: Vec::new(),
                            transparent: true,
                        },
                        false,
                    )),
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut rgb = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    let mut opacity = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (rr, v) in rows.into_iter().flatten() {
        rgb.extend(rr.rgb);
        depth.push(rr.depth);
        opacity.push(rr.opacity);
        valid.push(v);
    }
    Ok(RenderedView {
        image: Image::new(w, h, rgb)?,
        depth: DepthMap::new(w, h, depth)?,
        opacity: DepthMap::new(w, h, opacity)?,
        depth_valid: valid,
    })
}
