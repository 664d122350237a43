use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-resolution hash-grid layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HashGridConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub per_level_scale: f64,
    pub table_size_log2: u32,
    pub features_per_level: usize,
    pub bbox_min: [f64; 3],
    pub bbox_max: [f64; 3],
    /// Multipliers of the XOR spatial hash, one per axis.
    pub primes: [u32; 3],
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            base_resolution: 16,
            per_level_scale: 1.5,
            table_size_log2: 15,
            features_per_level: 2,
            bbox_min: [-1.0; 3],
            bbox_max: [1.0; 3],
            primes: [1, 2_654_435_761, 805_459_861],
        }
    }
}

/// Cell coordinates and trilinear fractions of a point at one level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelSample {
    pub base: [u32; 3],
    pub frac: [f64; 3],
    /// Axes on which the point lay outside the box and was clamped.
    pub clamped: [bool; 3],
}

impl LevelSample {
    /// Corner `c` (bit 0 = x, bit 1 = y, bit 2 = z) offset from `base`.
    pub fn corner(&self, c: usize) -> [u32; 3] {
        [
            self.base[0] + (c & 1) as u32,
            self.base[1] + ((c >> 1) & 1) as u32,
            self.base[2] + ((c >> 2) & 1) as u32,
        ]
    }

    pub fn weight(&self, c: usize) -> f64 {
        (0..3)
            .map(|a| {
                if (c >> a) & 1 == 1 {
                    self.frac[a]
                } else {
                    1.0 - self.frac[a]
                }
            })
            .product()
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::invalid("hash grid needs at least one level"));
        }
        if self.base_resolution == 0 || self.features_per_level == 0 {
            return Err(Error::invalid(
                "base resolution and features per level must be positive",
            ));
        }
        if !(self.per_level_scale > 1.0) || !self.per_level_scale.is_finite() {
            return Err(Error::invalid(format!(
                "per-level scale must be a finite value > 1, got {}",
                self.per_level_scale
            )));
        }
        if !(1..=30).contains(&self.table_size_log2) {
            return Err(Error::invalid(format!(
                "table_size_log2 must lie in 1..=30, got {}",
                self.table_size_log2
            )));
        }
        let finest = self.base_resolution as f64 * self.per_level_scale.powi(self.levels as i32 - 1);
        if !finest.is_finite() || finest >= u32::MAX as f64 / 2.0 {
            return Err(Error::invalid("finest grid resolution is not representable"));
        }
        for a in 0..3 {
            if !(self.bbox_max[a] > self.bbox_min[a]) {
                return Err(Error::invalid(format!("empty bounding box on axis {a}")));
            }
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_size_log2
    }

    pub fn feature_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    /// Cells per axis at `level`: `floor(base * scale^level)`.
    pub fn resolution(&self, level: usize) -> usize {
        (self.base_resolution as f64 * self.per_level_scale.powi(level as i32)).floor() as usize
    }

    /// Whether `level` stores every vertex directly instead of hashing.
    pub fn is_dense(&self, level: usize) -> bool {
        let side = self.resolution(level) as u128 + 1;
        side * side * side <= self.table_size() as u128
    }

    /// Table row holding the features of vertex `cell` at `level`.
    pub fn hash_index(&self, level: usize, cell: [u32; 3]) -> Result<usize> {
        if level >= self.levels {
            return Err(Error::invalid(format!(
                "level {level} out of range for {} levels",
                self.levels
            )));
        }
        let res = self.resolution(level);
        if cell.iter().any(|&c| c as usize > res) {
            return Err(Error::invalid(format!(
                "cell {cell:?} outside the {res}-cell grid of level {level}"
            )));
        }
        Ok(self.index_unchecked(level, res, cell))
    }

    #[inline]
    pub(crate) fn index_unchecked(&self, level: usize, res: usize, cell: [u32; 3]) -> usize {
        let layout = LevelLayout {
            res,
            dense: self.is_dense(level),
            mask: self.table_size() - 1,
        };
        self.row(&layout, cell)
    }

    /// Map a world point to the unit cube, clamping points outside the box.
    pub fn normalize(&self, p: [f64; 3]) -> ([f64; 3], [bool; 3]) {
        let mut u = [0.0; 3];
        let mut clamped = [false; 3];
        for a in 0..3 {
            let v = (p[a] - self.bbox_min[a]) / (self.bbox_max[a] - self.bbox_min[a]);
            if v < 0.0 {
                u[a] = 0.0;
                clamped[a] = true;
            } else if v > 1.0 {
                u[a] = 1.0;
                clamped[a] = true;
            } else {
                u[a] = v;
            }
        }
        (u, clamped)
    }

    pub fn sample_level(&self, level: usize, p: [f64; 3]) -> LevelSample {
        let (u, clamped) = self.normalize(p);
        let layout = LevelLayout {
            res: self.resolution(level),
            dense: false,
            mask: 0,
        };
        self.sample_unit(&layout, u, clamped)
    }

    /// Trilinearly interpolated features of `p`, coarse level first.
    pub fn encode(&self, tables: &[&[f64]], p: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        self.encode_into(&self.layouts(), tables, p, &mut out);
        out
    }

    /// Per-level resolution and addressing, computed once per batch.
    pub(crate) fn layouts(&self) -> Vec<LevelLayout> {
        (0..self.levels)
            .map(|level| LevelLayout {
                res: self.resolution(level),
                dense: self.is_dense(level),
                mask: self.table_size() - 1,
            })
            .collect()
    }

    #[inline]
    pub(crate) fn row(&self, layout: &LevelLayout, cell: [u32; 3]) -> usize {
        if layout.dense {
            let side = layout.res + 1;
            cell[0] as usize + cell[1] as usize * side + cell[2] as usize * side * side
        } else {
            let h = cell[0].wrapping_mul(self.primes[0])
                ^ cell[1].wrapping_mul(self.primes[1])
                ^ cell[2].wrapping_mul(self.primes[2]);
            (h as usize) & layout.mask
        }
    }

    /// Cell and fractions of an already normalized point.
    #[inline]
    pub(crate) fn sample_unit(&self, layout: &LevelLayout, u: [f64; 3], clamped: [bool; 3]) -> LevelSample {
        let res = layout.res;
        let mut base = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let pos = u[a] * res as f64;
            let b = (pos.floor() as usize).min(res - 1);
            base[a] = b as u32;
            frac[a] = pos - b as f64;
        }
        LevelSample { base, frac, clamped }
    }

    pub(crate) fn encode_into(&self, layouts: &[LevelLayout], tables: &[&[f64]], p: [f64; 3], out: &mut [f64]) {
        let f = self.features_per_level;
        let (u, clamped) = self.normalize(p);
        out.fill(0.0);
        for (level, layout) in layouts.iter().enumerate() {
            let s = self.sample_unit(layout, u, clamped);
            let table = tables[level];
            let dst = &mut out[level * f..(level + 1) * f];
            for c in 0..8 {
                let w = s.weight(c);
                if w == 0.0 {
                    continue;
                }
                let row = self.row(layout, s.corner(c));
                for (o, v) in dst.iter_mut().zip(&table[row * f..(row + 1) * f]) {
                    *o += w * v;
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LevelLayout {
    pub res: usize,
    pub dense: bool,
    pub mask: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_cell_hashes_to_zero() {
        let cfg = HashGridConfig::default();
        for level in 0..cfg.levels {
            assert_eq!(cfg.hash_index(level, [0, 0, 0]).unwrap(), 0);
        }
    }

    #[test]
    fn dense_level_uses_row_major_index() {
        let cfg = HashGridConfig {
            levels: 1,
            base_resolution: 4,
            table_size_log2: 10,
            ..Default::default()
        };
        assert!(cfg.is_dense(0));
        assert_eq!(cfg.hash_index(0, [1, 2, 3]).unwrap(), 86);
    }

    #[test]
    fn hashed_level_matches_independent_formula() {
        let cfg = HashGridConfig::default();
        let level = cfg.levels - 1;
        assert!(!cfg.is_dense(level));
        // reimplemented with 64-bit arithmetic and explicit truncation
        let mut h: u64 = 0;
        for (c, p) in [7u64, 1, 9].iter().zip(cfg.primes) {
            h ^= (c * p as u64) & 0xffff_ffff;
        }
        let expected = (h % (1u64 << cfg.table_size_log2)) as usize;
        assert_eq!(cfg.hash_index(level, [7, 1, 9]).unwrap(), expected);
    }

    #[test]
    fn level_and_cell_range_errors() {
        let cfg = HashGridConfig::default();
        assert!(cfg.hash_index(cfg.levels, [0, 0, 0]).is_err());
        let res = cfg.resolution(0) as u32;
        assert!(cfg.hash_index(0, [res, res, res]).is_ok());
        assert!(cfg.hash_index(0, [res + 1, 0, 0]).is_err());
    }

    #[test]
    fn default_resolutions() {
        let cfg = HashGridConfig::default();
        let res: Vec<_> = (0..cfg.levels).map(|l| cfg.resolution(l)).collect();
        assert_eq!(res, vec![16, 24, 36, 54, 81, 121, 182, 273]);
    }

    #[test]
    fn validate_rejects_bad_configs() {
        assert!(HashGridConfig {
            levels: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HashGridConfig {
            per_level_scale: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HashGridConfig {
            bbox_max: [-1.0, 1.0, 1.0],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(HashGridConfig::default().validate().is_ok());
    }
}
