//! Plain image containers and the resampling used to bring renders to the
//! prior's resolution.

use std::sync::Arc;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Row-major RGB image with interleaved channels, nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "image",
                format!(
                    "{}x{} RGB needs {} values, got {}",
                    width,
                    height,
                    width * height * 3,
                    data.len()
                ),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `[H*W, 3]` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.num_pixels(), 3], self.data.clone()).expect("consistent image")
    }

    pub fn from_tensor(width: usize, height: usize, t: &Tensor) -> Result<Self> {
        if t.numel() != width * height * 3 {
            return Err(Error::shape(
                "image",
                format!("tensor of shape {:?} is not a {width}x{height} RGB image", t.shape()),
            ));
        }
        Self::new(width, height, t.data().to_vec())
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn resize(&self, width: usize, height: usize) -> Result<Image> {
        let r = Resampler::new([self.width, self.height], [width, height])?;
        Image::new(width, height, r.apply(&self.data, 3))
    }

    pub fn clamp01(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Row-major single-channel map (depth, opacity).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("map dimensions must be positive"));
        }
        if data.len() != width * height {
            return Err(Error::shape(
                "depth map",
                format!("{width}x{height} needs {} values, got {}", width * height, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

/// Fixed linear map from one raster size to another. Integer downscales
/// average whole blocks; everything else is bilinear with half-pixel
/// alignment and edge clamping.
#[derive(Clone, Debug)]
pub struct Resampler {
    src: [usize; 2],
    dst: [usize; 2],
    taps: Vec<Vec<(usize, f64)>>,
}

impl Resampler {
    pub fn new(src: [usize; 2], dst: [usize; 2]) -> Result<Self> {
        if src.contains(&0) || dst.contains(&0) {
            return Err(Error::invalid("resample sizes must be positive"));
        }
        let [sw, sh] = src;
        let [dw, dh] = dst;
        let mut taps = Vec::with_capacity(dw * dh);
        if sw % dw == 0 && sh % dh == 0 {
            let (fx, fy) = (sw / dw, sh / dh);
            let w = 1.0 / (fx * fy) as f64;
            for y in 0..dh {
                for x in 0..dw {
                    let mut t = Vec::with_capacity(fx * fy);
                    for j in 0..fy {
                        for i in 0..fx {
                            t.push(((y * fy + j) * sw + x * fx + i, w));
                        }
                    }
                    taps.push(t);
                }
            }
        } else {
            let axis = |d: usize, s: usize, n: usize| -> [(usize, f64); 2] {
                let pos = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(s - 1);
                let f = pos - i0 as f64;
                [(i0, 1.0 - f), (i1, f)]
            };
            for y in 0..dh {
                let ay = axis(y, sh, dh);
                for x in 0..dw {
                    let ax = axis(x, sw, dw);
                    let mut t = Vec::with_capacity(4);
                    for &(yi, wy) in &ay {
                        for &(xi, wx) in &ax {
                            t.push((yi * sw + xi, wy * wx));
                        }
                    }
                    taps.push(t);
                }
            }
        }
        Ok(Self { src, dst, taps })
    }

    pub fn src(&self) -> [usize; 2] {
        self.src
    }

    pub fn dst(&self) -> [usize; 2] {
        self.dst
    }

    /// Resample interleaved `channels`-wide pixels.
    pub fn apply(&self, data: &[f64], channels: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.taps.len() * channels];
        for (o, taps) in out.chunks_mut(channels).zip(&self.taps) {
            for &(src, w) in taps {
                for c in 0..channels {
                    o[c] += w * data[src * channels + c];
                }
            }
        }
        out
    }

    /// Record the resampling of a `[src pixels, C]` variable.
    pub fn apply_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n_src = self.src[0] * self.src[1];
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != n_src {
            return Err(Error::shape(
                "resample",
                format!("expected [{n_src}, C], got {shape:?}"),
            ));
        }
        let k_max = self.taps.iter().map(Vec::len).max().unwrap_or(0);
        let mut acc: Option<Var> = None;
        for k in 0..k_max {
            let mut idx = Vec::with_capacity(self.taps.len());
            let mut w = Vec::with_capacity(self.taps.len());
            for t in &self.taps {
                let (i, wi) = t.get(k).copied().unwrap_or((0, 0.0));
                idx.push(i);
                w.push(wi);
            }
            let rows = g.gather(x, Arc::new(idx))?;
            let w = g.constant(Tensor::new(vec![self.taps.len(), 1], w)?);
            let term = g.mul(rows, w)?;
            acc = Some(match acc {
                None => term,
                Some(a) => g.add(a, term)?,
            });
        }
        acc.ok_or_else(|| Error::invalid("empty resampler"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_average_and_bilinear_preserve_constants() {
        for (src, dst) in [([8, 8], [4, 4]), ([5, 7], [9, 3]), ([4, 4], [8, 8])] {
            let r = Resampler::new(src, dst).unwrap();
            let out = r.apply(&vec![0.37; src[0] * src[1] * 2], 2);
            assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn block_average_of_ramp() {
        let r = Resampler::new([4, 2], [2, 1]).unwrap();
        let src: Vec<f64> = (0..8).map(f64::from).collect();
        assert_eq!(
            r.apply(&src, 1),
            vec![(0.0 + 1.0 + 4.0 + 5.0) / 4.0, (2.0 + 3.0 + 6.0 + 7.0) / 4.0]
        );
    }

    #[test]
    fn graph_matches_plain() {
        let r = Resampler::new([6, 4], [4, 3]).unwrap();
        let src: Vec<f64> = (0..72).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![24, 3], src.clone()).unwrap());
        let y = r.apply_graph(&mut g, x).unwrap();
        let plain = r.apply(&src, 3);
        for (a, b) in g.value(y).data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn image_shape_checks() {
        assert!(Image::new(2, 2, vec![0.0; 11]).is_err());
        assert!(DepthMap::new(0, 2, vec![]).is_err());
        let img = Image::filled(3, 2, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(img.pixel(2, 1), [0.1, 0.2, 0.3]);
    }
}
