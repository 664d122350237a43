use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::raster::Image;

fn mask_count(mask: Option<&[bool]>, pixels: usize) -> Result<usize> {
    match mask {
        None => Ok(pixels),
        Some(m) if m.len() != pixels => Err(Error::shape(
            "recon loss",
            format!("mask has {} entries for {pixels} pixels", m.len()),
        )),
        Some(m) => match m.iter().filter(|&&b| b).count() {
            0 => Err(Error::invalid("reconstruction mask selects no pixels")),
            n => Ok(n),
        },
    }
}

/// Mean squared RGB error over the (masked) pixels.
pub fn recon_loss(render: &Image, target: &Image, mask: Option<&[bool]>) -> Result<f64> {
    if !render.same_size(target) {
        return Err(Error::shape(
            "recon loss",
            format!(
                "{}x{} vs {}x{}",
                render.width(),
                render.height(),
                target.width(),
                target.height()
            ),
        ));
    }
    let count = mask_count(mask, render.num_pixels())?;
    let mut total = 0.0;
    for (i, (a, b)) in render.data().chunks(3).zip(target.data().chunks(3)).enumerate() {
        if mask.is_none_or(|m| m[i]) {
            total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    Ok(total / (3 * count) as f64)
}

/// Recorded [`recon_loss`] of a `[P, 3]` prediction against `[P, 3]` targets.
pub fn recon_loss_graph(g: &mut Graph, pred: Var, target: &Tensor, mask: Option<&[bool]>) -> Result<Var> {
    if g.shape(pred) != target.shape() || target.rank() != 2 || target.shape()[1] != 3 {
        return Err(Error::shape(
            "recon loss",
            format!("prediction {:?} vs target {:?}", g.shape(pred), target.shape()),
        ));
    }
    let p = target.shape()[0];
    let count = mask_count(mask, p)?;
    let t = g.constant(target.clone());
    let d = g.sub(pred, t)?;
    let d = match mask {
        None => d,
        Some(m) => {
            let w = g.constant(Tensor::new(
                vec![p, 1],
                m.iter().map(|&b| f64::from(u8::from(b))).collect(),
            )?);
            g.mul(d, w)?
        }
    };
    let sq = g.mul(d, d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / (3 * count) as f64)
}
