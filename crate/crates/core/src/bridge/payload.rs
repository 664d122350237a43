use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::Error;
use crate::raster::{DepthMap, Image};

/// A tensor on the wire: little-endian `f32` values, row-major, base64.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorPayload {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub data: String,
}

/// Why a payload could not be decoded; the bridge answers 400 for
/// `Malformed` and 422 for `Length`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PayloadError {
    Malformed(String),
    Length { expected: usize, actual: usize },
}

impl std::fmt::Display for PayloadError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PayloadError::Malformed(m) => write!(f, "malformed payload: {m}"),
            PayloadError::Length { expected, actual } => {
                write!(f, "payload holds {actual} bytes, shape needs {expected}")
            }
        }
    }
}

impl From<PayloadError> for Error {
    fn from(e: PayloadError) -> Self {
        Error::format(e.to_string())
    }
}

impl TensorPayload {
    /// Values are rounded to `f32`.
    pub fn from_tensor(t: &Tensor) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * 4);
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Self {
            dtype: "f32".into(),
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn from_image(img: &Image) -> Self {
        Self::from_tensor(
            &img.to_tensor()
                .reshape(vec![img.height(), img.width(), 3])
                .expect("image size"),
        )
    }

    /// Expected byte length, or an error when the shape overflows.
    pub fn byte_len(&self) -> std::result::Result<usize, PayloadError> {
        self.shape
            .iter()
            .try_fold(4usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| PayloadError::Malformed(format!("shape {:?} overflows", self.shape)))
    }

    pub fn decode(&self) -> std::result::Result<Tensor, PayloadError> {
        if self.dtype != "f32" {
            return Err(PayloadError::Malformed(format!("unsupported dtype {:?}", self.dtype)));
        }
        let expected = self.byte_len()?;
        let bytes = STANDARD
            .decode(self.data.as_bytes())
            .map_err(|e| PayloadError::Malformed(format!("base64: {e}")))?;
        if bytes.len() != expected {
            return Err(PayloadError::Length {
                expected,
                actual: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Tensor::new(self.shape.clone(), data).map_err(|e| PayloadError::Malformed(e.to_string()))
    }

    /// Decode an `[H, W, 3]` payload.
    pub fn decode_image(&self) -> std::result::Result<Image, PayloadError> {
        let t = self.decode()?;
        match *t.shape() {
            [h, w, 3] => Image::new(w, h, t.into_vec()).map_err(|e| PayloadError::Malformed(e.to_string())),
            _ => Err(PayloadError::Malformed(format!(
                "expected an [H, W, 3] image, got {:?}",
                t.shape()
            ))),
        }
    }

    /// Decode an `[H, W]` payload.
    pub fn decode_depth(&self) -> std::result::Result<DepthMap, PayloadError> {
        let t = self.decode()?;
        match *t.shape() {
            [h, w] => DepthMap::new(w, h, t.into_vec()).map_err(|e| PayloadError::Malformed(e.to_string())),
            _ => Err(PayloadError::Malformed(format!(
                "expected an [H, W] depth map, got {:?}",
                t.shape()
            ))),
        }
    }

    /// Parse the JSON text of a payload object.
    pub fn from_json(text: &str) -> std::result::Result<Tensor, PayloadError> {
        let p: TensorPayload = serde_json::from_str(text).map_err(|e| PayloadError::Malformed(e.to_string()))?;
        p.decode()
    }
}
