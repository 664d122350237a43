use serde::{Deserialize, Serialize};

use super::metrics::{psnr, ssim};
use crate::error::{Error, Result};
use crate::objective::pearson;
use crate::raster::{DepthMap, Image};

pub const LPIPS_NOTE: &str = "LPIPS not computed: it requires a pretrained perceptual network";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// Pearson correlation of rendered and reference depth at the input view.
    pub input_depth_pearson: Option<f64>,
    pub config_hash: Option<String>,
    pub note: String,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// Pearson correlation over pixels where both depths are finite and the
/// optional mask is set.
pub fn depth_pearson(rendered: &DepthMap, reference: &DepthMap, mask: Option<&[bool]>) -> Result<f64> {
    if rendered.data().len() != reference.data().len() {
        return Err(Error::shape("depth pearson", "maps differ in size"));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, (&x, &y)) in rendered.data().iter().zip(reference.data()).enumerate() {
        if x.is_finite() && y.is_finite() && mask.is_none_or(|m| m[i]) {
            a.push(x);
            b.push(y);
        }
    }
    pearson(&a, &b)
}

/// Score `rendered[i]` against `reference[i]`; `ids` names the views.
pub fn evaluate(rendered: &[Image], reference: &[Image], ids: &[usize]) -> Result<EvalReport> {
    if rendered.len() != reference.len() || rendered.len() != ids.len() || rendered.is_empty() {
        return Err(Error::invalid("evaluation needs one rendered image per reference view"));
    }
    let mut views = Vec::with_capacity(ids.len());
    for ((a, b), &view) in rendered.iter().zip(reference).zip(ids) {
        views.push(ViewScore {
            view,
            psnr: psnr(a, b)?,
            ssim: ssim(a, b)?,
        });
    }
    let (psnr_mean, psnr_std) = mean_std(&views.iter().map(|v| v.psnr).collect::<Vec<_>>());
    let (ssim_mean, ssim_std) = mean_std(&views.iter().map(|v| v.ssim).collect::<Vec<_>>());
    Ok(EvalReport {
        views,
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
        input_depth_pearson: None,
        config_hash: None,
        note: LPIPS_NOTE.to_string(),
    })
}
