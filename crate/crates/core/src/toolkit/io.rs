//! PNG images and portable float map depth files.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, Image};

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write 8-bit RGB. Values are stored as given (already display-encoded),
/// clamped to `[0, 1]` and rounded to the nearest level.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.data().iter().map(|&v| to_u8(v)).collect(),
    )
    .expect("buffer sized from the image");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Read a PNG as RGB in `[0, 1]`. Grey and alpha channels are expanded or
/// dropped; 16-bit samples keep their precision.
pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Image::new(
        w as usize,
        h as usize,
        rgb.into_raw().into_iter().map(f64::from).collect(),
    )
}

/// Decode PNG bytes; see [`load_png`].
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Image::new(
        w as usize,
        h as usize,
        rgb.into_raw().into_iter().map(f64::from).collect(),
    )
}

/// Read a single-channel 16-bit PNG, mapping `[0, 65535]` linearly to `[0, 1]`.
pub fn load_depth_png16(path: &Path) -> Result<DepthMap> {
    let img = image::open(path)?;
    let grey = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => {
            return Err(Error::format(format!(
                "{}: expected a 16-bit greyscale PNG, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = grey.dimensions();
    DepthMap::new(
        w as usize,
        h as usize,
        grey.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect(),
    )
}

/// Write a 16-bit greyscale PNG from values in `[0, 1]`.
pub fn save_depth_png16(depth: &DepthMap, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        depth.width() as u32,
        depth.height() as u32,
        depth
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect(),
    )
    .expect("buffer sized from the map");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Encode a greyscale portable float map (`Pf`, little-endian, rows stored
/// bottom to top). Values are narrowed to `f32`.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(depth.get(x, y) as f32).to_le_bytes());
        }
    }
    out
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("float map header is truncated"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::format("float map header is not text"))
}

/// Decode a portable float map. Only the single-channel `Pf` variant is a
/// depth map; `PF` (three channels) is rejected with a channel-count error.
pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut pos = 0;
    match header_token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => return Err(Error::format("float map has 3 channels, a depth map needs 1")),
        other => return Err(Error::format(format!("not a float map: magic {other:?}"))),
    }
    let parse = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0 && v <= 1 << 16)
            .ok_or_else(|| Error::format(format!("bad float map {what}: {s:?}")))
    };
    let w = parse(header_token(bytes, &mut pos)?, "width")?;
    let h = parse(header_token(bytes, &mut pos)?, "height")?;
    let scale: f64 = header_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| Error::format("bad float map scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("float map scale must be non-zero"));
    }
    // exactly one whitespace byte separates the header from the data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("float map header is truncated"));
    }
    pos += 1;
    let data = &bytes[pos..];
    if data.len() != w * h * 4 {
        return Err(Error::format(format!(
            "float map {w}x{h} needs {} data bytes, found {}",
            w * h * 4,
            data.len()
        )));
    }
    let little = scale < 0.0;
    let mut out = vec![0.0; w * h];
    for (i, c) in data.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, x) = (i / w, i % w);
        out[(h - 1 - row) * w + x] = f64::from(v);
    }
    DepthMap::new(w, h, out)
}

pub fn save_pfm(depth: &DepthMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pfm(depth))?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<DepthMap> {
    decode_pfm(&std::fs::read(path)?).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Load a depth map by extension: `.pfm` as floats, `.png` as 16-bit.
pub fn load_depth(path: &Path) -> Result<DepthMap> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("pfm") => load_pfm(path),
        Some("png") => load_depth_png16(path),
        _ => Err(Error::invalid(format!(
            "{}: depth files must be .pfm or 16-bit .png",
            path.display()
        ))),
    }
}
