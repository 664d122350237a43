//! Image quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn check_same(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height()),
        ));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b, "mse")?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    })
}

/// Window and stabilizing constants of [`ssim`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub luma: [f64; 3],
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            luma: LUMA,
        }
    }
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..window)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn grey(img: &Image, luma: [f64; 3]) -> Vec<f64> {
    img.data()
        .chunks(3)
        .map(|p| luma[0] * p[0] + luma[1] * p[1] + luma[2] * p[2])
        .collect()
}

/// Separable filtering keeping only windows fully inside the image.
fn filter_valid(x: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..n).map(|i| k[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..n).map(|j| k[j] * rows[(y0 + j) * ow + x0]).sum();
        }
    }
    out
}

/// Mean structural similarity of the luma channels over all window
/// positions that fit inside the image.
pub fn ssim_with(a: &Image, b: &Image, p: &SsimParams) -> Result<f64> {
    check_same(a, b, "ssim")?;
    if a.width() < p.window || a.height() < p.window {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {0}x{0}, got {1}x{2}",
            p.window,
            a.width(),
            a.height()
        )));
    }
    let (w, h) = (a.width(), a.height());
    let k = gaussian(p.window, p.sigma);
    let (x, y) = (grey(a, p.luma), grey(b, p.luma));
    let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(a, b)| a * b).collect() };
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let mxx = filter_valid(&prod(&x, &x), w, h, &k);
    let myy = filter_valid(&prod(&y, &y), w, h, &k);
    let mxy = filter_valid(&prod(&x, &y), w, h, &k);
    let (c1, c2) = ((p.k1).powi(2), (p.k2).powi(2));
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = mxx[i] - ux * ux;
        let vy = myy[i] - uy * uy;
        let cxy = mxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, &SsimParams::default())
}
