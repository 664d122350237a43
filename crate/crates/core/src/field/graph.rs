use std::sync::Arc;

use super::grid::HashGridConfig;
use super::params::{FieldConfig, FieldVars};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Query points for a recorded field evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Points<'a> {
    /// Positions treated as constants (the usual training case).
    Fixed(&'a [[f64; 3]]),
    /// A `[N, 3]` graph variable; interpolation weights become differentiable.
    Variable(Var),
}

/// Recorded field outputs: `rgb` is `[N, 3]`, `sigma` is `[N, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct FieldGraphOutput {
    pub rgb: Var,
    pub sigma: Var,
}

fn point_values(g: &Graph, points: Points<'_>) -> Result<Vec<[f64; 3]>> {
    match points {
        Points::Fixed(p) => Ok(p.to_vec()),
        Points::Variable(v) => {
            let t = g.value(v);
            if t.rank() != 2 || t.shape()[1] != 3 {
                return Err(Error::shape(
                    "encode",
                    format!("points must be [N, 3], got {:?}", t.shape()),
                ));
            }
            Ok(t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
        }
    }
}

/// Record the hash-grid encoding of `points`; result is `[N, levels * features]`.
pub fn encode_graph(g: &mut Graph, grid: &HashGridConfig, tables: &[Var], points: Points<'_>) -> Result<Var> {
    if tables.len() != grid.levels {
        return Err(Error::invalid("one table variable per level is required"));
    }
    let pts = point_values(g, points)?;
    let n = pts.len();
    let f = grid.features_per_level;

    // differentiable normalized coordinates, only when the points are variables
    let unit = match points {
        Points::Fixed(_) => None,
        Points::Variable(p) => {
            let lo = Tensor::new(vec![1, 3], grid.bbox_min.to_vec())?;
            let inv: Vec<f64> = (0..3).map(|a| 1.0 / (grid.bbox_max[a] - grid.bbox_min[a])).collect();
            let lo = g.constant(lo);
            let inv = g.constant(Tensor::new(vec![1, 3], inv)?);
            let shifted = g.sub(p, lo)?;
            let u = g.mul(shifted, inv)?;
            let mut mask = Vec::with_capacity(n * 3);
            let mut fill = Vec::with_capacity(n * 3);
            for &q in &pts {
                let (uq, clamped) = grid.normalize(q);
                for a in 0..3 {
                    mask.push(if clamped[a] { 0.0 } else { 1.0 });
                    fill.push(if clamped[a] { uq[a] } else { 0.0 });
                }
            }
            let mask = g.constant(Tensor::new(vec![n, 3], mask)?);
            let fill = g.constant(Tensor::new(vec![n, 3], fill)?);
            let masked = g.mul(u, mask)?;
            Some(g.add(masked, fill)?)
        }
    };

    let layouts = grid.layouts();
    let normalized: Vec<([f64; 3], [bool; 3])> = pts.iter().map(|&q| grid.normalize(q)).collect();
    let mut per_level = Vec::with_capacity(grid.levels);
    for (level, layout) in layouts.iter().enumerate() {
        let res = layout.res;
        let mut idx = Vec::with_capacity(n * 8);
        let mut weights = Vec::with_capacity(n * 8);
        let mut bases = Vec::with_capacity(n * 3);
        for &(u, clamped) in &normalized {
            let s = grid.sample_unit(layout, u, clamped);
            for c in 0..8 {
                idx.push(grid.row(layout, s.corner(c)));
                weights.push(s.weight(c));
            }
            bases.extend(s.base.iter().map(|&b| b as f64));
        }
        let w = match unit {
            None => {
                per_level.push(g.gather_weighted(tables[level], Arc::new(idx), Arc::new(weights), 8)?);
                continue;
            }
            Some(u) => {
                let pos = g.scale(u, res as f64)?;
                let base = g.constant(Tensor::new(vec![n, 3], bases)?);
                let frac = g.sub(pos, base)?;
                let one = g.scalar(1.0);
                let mut hi = [frac; 3];
                let mut lo = [frac; 3];
                for a in 0..3 {
                    hi[a] = g.slice(frac, 1, a, a + 1)?;
                    lo[a] = g.sub(one, hi[a])?;
                }
                let mut corners = Vec::with_capacity(8);
                for c in 0..8 {
                    let pick = |a: usize| if (c >> a) & 1 == 1 { hi[a] } else { lo[a] };
                    let xy = g.mul(pick(0), pick(1))?;
                    corners.push(g.mul(xy, pick(2))?);
                }
                let w = g.concat(&corners, 1)?;
                g.reshape(w, vec![n * 8, 1])?
            }
        };
        let rows = g.gather(tables[level], Arc::new(idx))?;
        let weighted = g.mul(rows, w)?;
        let grouped = g.reshape(weighted, vec![n, 8, f])?;
        per_level.push(g.sum_axis(grouped, 1)?);
    }
    g.concat(&per_level, 1)
}

/// Record a field evaluation at `points`.
pub fn eval_graph(
    g: &mut Graph,
    config: &FieldConfig,
    vars: &FieldVars,
    points: Points<'_>,
) -> Result<FieldGraphOutput> {
    let mut h = encode_graph(g, &config.grid, vars.tables(), points)?;
    let layers = config.layer_dims().len();
    for li in 0..layers {
        let (w, b) = vars.layer(li);
        let z = g.matmul(h, w)?;
        h = g.add(z, b)?;
        if li + 1 < layers {
            h = g.relu(h)?;
        }
    }
    let color = g.slice(h, 1, 0, 3)?;
    let rgb = g.sigmoid(color)?;
    let density = g.slice(h, 1, 3, 4)?;
    let density = g.add(density, vars.density_bias())?;
    let sigma = g.softplus(density)?;
    Ok(FieldGraphOutput { rgb, sigma })
}
