use std::sync::Arc;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::DepthMap;

/// Variance guard of the Pearson loss.
pub const DEPTH_EPS: f64 = 1e-8;

fn selected(len: usize, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    let idx: Vec<usize> = match mask {
        None => (0..len).collect(),
        Some(m) if m.len() != len => {
            return Err(Error::shape(
                "depth correlation",
                format!("mask has {} entries for {len} pixels", m.len()),
            ))
        }
        Some(m) => (0..len).filter(|&i| m[i]).collect(),
    };
    if idx.len() < 2 {
        return Err(Error::invalid("depth correlation needs at least two pixels"));
    }
    Ok(idx)
}

fn centered(v: &[f64]) -> (Vec<f64>, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let c: Vec<f64> = v.iter().map(|x| x - m).collect();
    let var = c.iter().map(|x| x * x).sum::<f64>() / n;
    (c, var)
}

fn estimate_stats(d_est: &[f64]) -> Result<(Vec<f64>, f64)> {
    let (c, var) = centered(d_est);
    if !var.is_finite() || var <= DEPTH_EPS {
        return Err(Error::DegenerateDepth(format!(
            "estimated depth has variance {var:e} over the selected pixels"
        )));
    }
    Ok((c, var))
}

/// Pearson correlation with the rendered-depth variance floored at
/// [`DEPTH_EPS`]. Errors when the estimate is (nearly) constant.
pub fn pearson(d_hat: &[f64], d_est: &[f64]) -> Result<f64> {
    if d_hat.len() != d_est.len() {
        return Err(Error::shape(
            "depth correlation",
            format!("{} vs {} values", d_hat.len(), d_est.len()),
        ));
    }
    if d_hat.len() < 2 {
        return Err(Error::invalid("depth correlation needs at least two pixels"));
    }
    let (ce, ve) = estimate_stats(d_est)?;
    let (ch, vh) = centered(d_hat);
    let cov = ch.iter().zip(&ce).map(|(a, b)| a * b).sum::<f64>() / d_hat.len() as f64;
    Ok((cov / (vh.max(DEPTH_EPS) * ve).sqrt()).clamp(-1.0, 1.0))
}

/// `1 - rho` over the (masked) pixels; in `[0, 2]`.
pub fn depth_corr_loss(d_hat: &DepthMap, d_est: &DepthMap, mask: Option<&[bool]>) -> Result<f64> {
    if d_hat.width() != d_est.width() || d_hat.height() != d_est.height() {
        return Err(Error::shape("depth correlation", "depth maps differ in size"));
    }
    let idx = selected(d_hat.data().len(), mask)?;
    let a: Vec<f64> = idx.iter().map(|&i| d_hat.data()[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| d_est.data()[i]).collect();
    Ok(1.0 - pearson(&a, &b)?)
}

/// Recorded `1 - rho` between a `[P, 1]` rendered depth and `P` estimates.
pub fn depth_corr_loss_graph(g: &mut Graph, d_hat: Var, d_est: &[f64], mask: Option<&[bool]>) -> Result<Var> {
    let shape = g.shape(d_hat).to_vec();
    if shape != [d_est.len(), 1] {
        return Err(Error::shape(
            "depth correlation",
            format!("rendered depth {shape:?} vs {} estimates", d_est.len()),
        ));
    }
    let idx = selected(d_est.len(), mask)?;
    let n = idx.len();
    let est: Vec<f64> = idx.iter().map(|&i| d_est[i]).collect();
    let (ce, ve) = estimate_stats(&est)?;
    let d = if n == d_est.len() {
        d_hat
    } else {
        g.gather(d_hat, Arc::new(idx))?
    };
    let m = g.mean(d)?;
    let c = g.sub(d, m)?;
    let ce = g.constant(Tensor::new(vec![n, 1], ce)?);
    let cov = g.mul(c, ce)?;
    let cov = g.mean(cov)?;
    let sq = g.mul(c, c)?;
    let vh = g.mean(sq)?;
    let rho = if g.value(vh).item()? >= DEPTH_EPS {
        let inv = g.powf(vh, -0.5)?;
        let r = g.mul(cov, inv)?;
        g.scale(r, 1.0 / ve.sqrt())?
    } else {
        g.scale(cov, 1.0 / (DEPTH_EPS * ve).sqrt())?
    };
    let neg = g.scale(rho, -1.0)?;
    g.add_scalar(neg, 1.0)
}
