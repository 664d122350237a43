//! Dataset directory layout: `cameras.txt`, `rgb/%04d.png`,
//! `depth/%04d.pfm`, `meta.txt`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::io::{load_pfm, load_png, save_pfm, save_png};
use super::oracle::OracleDataset;
use crate::error::{Error, Result};
use crate::render::{format_camera_record, parse_camera_file};

/// Key/value metadata of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub label: String,
    pub spec_hash: String,
    pub views: usize,
}

impl DatasetMeta {
    pub fn to_text(&self) -> String {
        format!(
            "label = {}\nspec_hash = {}\nviews = {}\n",
            self.label, self.spec_hash, self.views
        )
    }

    /// `key = value` lines; `#` starts a comment. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("meta line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !matches!(k, "label" | "spec_hash" | "views") {
                return Err(Error::format(format!("meta line {}: unknown key {k:?}", n + 1)));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::format(format!("meta line {}: duplicate key {k:?}", n + 1)));
            }
        }
        let mut take = |k: &str| {
            kv.remove(k)
                .ok_or_else(|| Error::format(format!("meta is missing {k:?}")))
        };
        let label = take("label")?;
        let spec_hash = take("spec_hash")?;
        let views = take("views")?
            .parse()
            .map_err(|_| Error::format("meta views is not a non-negative integer"))?;
        if label.is_empty() {
            return Err(Error::format("meta label is empty"));
        }
        Ok(Self {
            label,
            spec_hash,
            views,
        })
    }
}

pub fn rgb_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("rgb").join(format!("{i:04}.png"))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("depth").join(format!("{i:04}.pfm"))
}

pub fn save_dataset(data: &OracleDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("rgb"))?;
    std::fs::create_dir_all(dir.join("depth"))?;
    let mut cams = String::new();
    for (intr, pose) in &data.cameras {
        cams.push_str(&format_camera_record(intr, pose));
        cams.push('\n');
    }
    std::fs::write(dir.join("cameras.txt"), cams)?;
    for (i, (img, depth)) in data.images.iter().zip(&data.depths).enumerate() {
        save_png(img, &rgb_path(dir, i))?;
        save_pfm(depth, &depth_path(dir, i))?;
    }
    let meta = DatasetMeta {
        label: data.label.clone(),
        spec_hash: data.spec_hash.clone(),
        views: data.images.len(),
    };
    std::fs::write(dir.join("meta.txt"), meta.to_text())?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<OracleDataset> {
    let meta = DatasetMeta::parse(&std::fs::read_to_string(dir.join("meta.txt"))?)?;
    let cameras = parse_camera_file(&std::fs::read_to_string(dir.join("cameras.txt"))?)?;
    if cameras.len() != meta.views {
        return Err(Error::format(format!(
            "meta lists {} views but cameras.txt has {}",
            meta.views,
            cameras.len()
        )));
    }
    let mut images = Vec::with_capacity(meta.views);
    let mut depths = Vec::with_capacity(meta.views);
    for (i, (intr, _)) in cameras.iter().enumerate() {
        let img = load_png(&rgb_path(dir, i))?;
        let depth = load_pfm(&depth_path(dir, i))?;
        if img.width() != intr.width
            || img.height() != intr.height
            || depth.width() != intr.width
            || depth.height() != intr.height
        {
            return Err(Error::format(format!("view {i}: files do not match the camera size")));
        }
        images.push(img);
        depths.push(depth);
    }
    Ok(OracleDataset {
        label: meta.label,
        spec_hash: meta.spec_hash,
        cameras,
        images,
        depths,
    })
}
