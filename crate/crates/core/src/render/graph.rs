use std::sync::Arc;

use super::camera::Ray;
use super::volume::{sample_positions, DepthMode, RenderConfig, TRANSPARENT_OPACITY};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::{eval_graph, FieldConfig, FieldVars, Points};

/// Recorded render of a ray batch: `rgb` is `[R, 3]`, `opacity` and `depth`
/// are `[R, 1]`. Rays that missed the box contribute constants.
#[derive(Clone, Debug)]
pub struct RenderedRays {
    pub rgb: Var,
    pub opacity: Var,
    pub depth: Var,
    pub hit: Vec<bool>,
    pub transparent: Vec<bool>,
}

/// A ray (or a miss) plus the jitter stream it samples from.
#[derive(Clone, Copy, Debug)]
pub struct RayQuery {
    pub ray: Option<Ray>,
    pub stream: u64,
}

/// Record volume rendering of `rays` through the field. Uses the same
/// sample positions and compositing order as the plain renderer.
pub fn render_rays_graph(
    g: &mut Graph,
    config: &FieldConfig,
    vars: &FieldVars,
    rays: &[RayQuery],
    cfg: &RenderConfig,
) -> Result<RenderedRays> {
    cfg.validate()?;
    if rays.is_empty() {
        return Err(Error::invalid("empty ray batch"));
    }
    let s = cfg.samples_per_ray;
    let hits: Vec<&Ray> = rays.iter().filter_map(|q| q.ray.as_ref()).collect();
    let nh = hits.len();
    let bg = cfg.background.rgb();

    let mut pieces = None;
    let mut transparent_hits = Vec::with_capacity(nh);
    if nh > 0 {
        let mut pts = Vec::with_capacity(nh * s);
        let mut ts = Vec::with_capacity(nh * s);
        let mut dts = Vec::with_capacity(nh * s);
        let mut t_far = Vec::with_capacity(nh);
        for q in rays {
            if let Some(r) = &q.ray {
                let (t, dt) = sample_positions(r, cfg, q.stream);
                pts.extend(t.iter().map(|&ti| r.at(ti)));
                ts.extend(t);
                dts.extend(std::iter::repeat_n(dt, s));
                t_far.push(r.t_far);
            }
        }
        let out = eval_graph(g, config, vars, Points::Fixed(&pts))?;
        let sigma = g.reshape(out.sigma, vec![nh, s])?;
        let delta = g.constant(Tensor::new(vec![nh, s], dts)?);
        let sd = g.mul(sigma, delta)?;
        let neg = g.scale(sd, -1.0)?;
        let keep = g.exp(neg)?;
        let one = g.scalar(1.0);
        let alpha = g.sub(one, keep)?;
        let trans = g.cumprod_exclusive(keep)?;
        let w = g.mul(trans, alpha)?;

        let opacity = g.sum_axis(w, 1)?;
        let opacity = g.reshape(opacity, vec![nh, 1])?;
        let w3 = g.reshape(w, vec![nh, s, 1])?;
        let c = g.reshape(out.rgb, vec![nh, s, 3])?;
        let wc = g.mul(w3, c)?;
        let rgb = g.sum_axis(wc, 1)?;
        let rest = g.sub(one, opacity)?;
        let bgc = g.constant(Tensor::new(vec![1, 3], bg.to_vec())?);
        let fill = g.mul(rest, bgc)?;
        let rgb = g.add(rgb, fill)?;

        let depth = match cfg.depth_mode {
            DepthMode::Optical => {
                let d = g.sum_axis(sd, 1)?;
                g.reshape(d, vec![nh, 1])?
            }
            DepthMode::Expected => {
                let ops = g.value(opacity).data().to_vec();
                let mask: Vec<f64> = ops
                    .iter()
                    .map(|&o| if o < TRANSPARENT_OPACITY { 0.0 } else { 1.0 })
                    .collect();
                transparent_hits = mask.iter().map(|&m| m == 0.0).collect();
                let inv_mask: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
                let far: Vec<f64> = t_far.iter().zip(&inv_mask).map(|(t, m)| t * m).collect();
                let tc = g.constant(Tensor::new(vec![nh, s], ts)?);
                let wt = g.mul(w, tc)?;
                let wt = g.sum_axis(wt, 1)?;
                let wt = g.reshape(wt, vec![nh, 1])?;
                let m = g.constant(Tensor::new(vec![nh, 1], mask)?);
                let im = g.constant(Tensor::new(vec![nh, 1], inv_mask)?);
                let om = g.mul(opacity, m)?;
                let denom = g.add(om, im)?;
                let d = g.div(wt, denom)?;
                let d = g.mul(d, m)?;
                let far = g.constant(Tensor::new(vec![nh, 1], far)?);
                g.add(d, far)?
            }
        };
        if transparent_hits.is_empty() {
            let ops = g.value(opacity).data();
            transparent_hits = ops.iter().map(|&o| o < TRANSPARENT_OPACITY).collect();
        }
        pieces = Some((rgb, opacity, depth));
    }

    let hit: Vec<bool> = rays.iter().map(|q| q.ray.is_some()).collect();
    let mut transparent = Vec::with_capacity(rays.len());
    let mut th = transparent_hits.iter();
    for &h in &hit {
        transparent.push(if h { *th.next().expect("one flag per hit") } else { true });
    }

    match pieces {
        Some((rgb, opacity, depth)) if nh == rays.len() => Ok(RenderedRays {
            rgb,
            opacity,
            depth,
            hit,
            transparent,
        }),
        pieces => {
            // append one constant row for misses and gather into ray order
            let mut next = 0;
            let order: Arc<Vec<usize>> = Arc::new(
                hit.iter()
                    .map(|&h| {
                        if h {
                            next += 1;
                            next - 1
                        } else {
                            nh
                        }
                    })
                    .collect(),
            );
            let bg_row = g.constant(Tensor::new(vec![1, 3], bg.to_vec())?);
            let zero_row = g.constant(Tensor::zeros(vec![1, 1]));
            let (rgb, opacity, depth) = match pieces {
                Some((r, o, d)) => (
                    g.concat(&[r, bg_row], 0)?,
                    g.concat(&[o, zero_row], 0)?,
                    g.concat(&[d, zero_row], 0)?,
                ),
                None => (bg_row, zero_row, zero_row),
            };
            Ok(RenderedRays {
                rgb: g.gather(rgb, order.clone())?,
                opacity: g.gather(opacity, order.clone())?,
                depth: g.gather(depth, order)?,
                hit,
                transparent,
            })
        }
    }
}
