//! Procedural scenes with known geometry, used as ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::FieldOutput;
use crate::prior::LabeledImages;
use crate::raster::{DepthMap, Image};
use crate::render::{
    pixel_to_ray, render_image, Background, CameraIntrinsics, CameraPose, RadianceField, RenderConfig, SceneBox,
};
use crate::trainer::{orbit_camera, sample_view, NovelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extent: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Texture {
    Constant {
        rgb: [f64; 3],
    },
    /// 3D checkerboard with cells of side `cell`.
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        cell: f64,
    },
}

impl Texture {
    pub fn at(&self, p: [f64; 3]) -> [f64; 3] {
        match self {
            Texture::Constant { rgb } => *rgb,
            Texture::Checker { a, b, cell } => {
                let s: i64 = p.iter().map(|v| (v / cell).floor() as i64).sum();
                if s.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
        }
    }

    fn colors(&self) -> Vec<[f64; 3]> {
        match self {
            Texture::Constant { rgb } => vec![*rgb],
            Texture::Checker { a, b, .. } => vec![*a, *b],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub texture: Texture,
    /// Density inside the primitive.
    pub density: f64,
}

impl Primitive {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        match &self.shape {
            Shape::Sphere { radius } => d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius,
            Shape::Box { half_extent } => (0..3).all(|k| d[k].abs() <= half_extent[k]),
        }
    }

    /// Ray parameter where the ray enters the primitive, if it does at
    /// `t >= 0`. Origins inside the primitive report `0`.
    pub fn entry(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let o = [
            origin[0] - self.center[0],
            origin[1] - self.center[1],
            origin[2] - self.center[2],
        ];
        let (t0, t1) = match &self.shape {
            Shape::Sphere { radius } => {
                let b = o[0] * dir[0] + o[1] * dir[1] + o[2] * dir[2];
                let c = o[0] * o[0] + o[1] * o[1] + o[2] * o[2] - radius * radius;
                let a = dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2];
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                ((-b - s) / a, (-b + s) / a)
            }
            Shape::Box { half_extent } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if dir[k] == 0.0 {
                        if o[k].abs() > half_extent[k] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extent[k] - o[k]) / dir[k];
                    let b = (half_extent[k] - o[k]) / dir[k];
                    lo = lo.max(a.min(b));
                    hi = hi.min(a.max(b));
                }
                if lo > hi {
                    return None;
                }
                (lo, hi)
            }
        };
        if t1 < 0.0 {
            None
        } else {
            Some(t0.max(0.0))
        }
    }

    fn extent(&self) -> ([f64; 3], [f64; 3]) {
        let h = match &self.shape {
            Shape::Sphere { radius } => [*radius; 3],
            Shape::Box { half_extent } => *half_extent,
        };
        (
            [self.center[0] - h[0], self.center[1] - h[1], self.center[2] - h[2]],
            [self.center[0] + h[0], self.center[1] + h[1], self.center[2] + h[2]],
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSceneSpec {
    /// Class name of the object.
    pub label: String,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub seed: u64,
}

impl OracleSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.label.trim().is_empty() || self.label.contains(char::is_whitespace) {
            return Err(Error::invalid("scene label must be a single non-empty word"));
        }
        if self.primitives.is_empty() {
            return Err(Error::invalid("scene has no primitives"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::invalid("scene seed must fit in a signed 64-bit integer"));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.density >= 0.0) || !p.density.is_finite() {
                return Err(Error::invalid(format!(
                    "primitive {i} has invalid density {}",
                    p.density
                )));
            }
            let size_ok = match &p.shape {
                Shape::Sphere { radius } => *radius > 0.0,
                Shape::Box { half_extent } => half_extent.iter().all(|&v| v > 0.0),
            };
            if !size_ok {
                return Err(Error::invalid(format!("primitive {i} has a non-positive size")));
            }
            if let Texture::Checker { cell, .. } = p.texture {
                if !(cell > 0.0) {
                    return Err(Error::invalid(format!("primitive {i} has a non-positive checker cell")));
                }
            }
            if p.texture.colors().iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid(format!("primitive {i} has colors outside [0, 1]")));
            }
            let (lo, hi) = p.extent();
            if lo.iter().chain(&hi).any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("primitive {i} leaves the [-1, 1] cube")));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::format(format!("bad scene spec: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    /// Panics on a seed above `i64::MAX`, which `validate` rejects.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Hex SHA-256 of the serialized spec.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Distance along a unit-direction ray to the first surface.
    pub fn depth_along(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        self.primitives
            .iter()
            .filter(|p| p.density > 0.0)
            .filter_map(|p| p.entry(origin, dir))
            .min_by(f64::total_cmp)
    }

    /// Per-pixel surface distance along the pixel-center rays; infinite
    /// where nothing is hit.
    pub fn depth_map(&self, intr: &CameraIntrinsics, pose: &CameraPose) -> Result<DepthMap> {
        let mut out = Vec::with_capacity(intr.width * intr.height);
        let unbounded = SceneBox {
            min: [-1e6; 3],
            max: [1e6; 3],
        };
        for y in 0..intr.height {
            for x in 0..intr.width {
                let ray = pixel_to_ray(intr, pose, [x as f64 + 0.5, y as f64 + 0.5], &unbounded)?;
                let d = ray.and_then(|r| self.depth_along(r.origin, r.direction));
                out.push(d.unwrap_or(f64::INFINITY));
            }
        }
        DepthMap::new(intr.width, intr.height, out)
    }
}

impl RadianceField for OracleSceneSpec {
    fn eval_points(&self, points: &[[f64; 3]]) -> Result<Vec<FieldOutput>> {
        Ok(points
            .iter()
            .map(|&p| {
                let mut sigma = 0.0;
                let mut rgb = None;
                for prim in &self.primitives {
                    if prim.contains(p) {
                        sigma += prim.density;
                        rgb.get_or_insert_with(|| prim.texture.at(p));
                    }
                }
                FieldOutput {
                    rgb: rgb.unwrap_or([0.5; 3]),
                    sigma,
                }
            })
            .collect())
    }
}

/// Cameras of an oracle dataset: evenly spaced azimuths on one orbit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleViews {
    pub radius: f64,
    /// Cycled over the views.
    pub elevations: Vec<f64>,
    /// Azimuth of view 0, degrees.
    pub azimuth_offset: f64,
    pub vfov: f64,
    pub render: RenderConfig,
}

impl Default for OracleViews {
    fn default() -> Self {
        Self {
            radius: 2.5,
            elevations: vec![15.0, 30.0, 0.0],
            azimuth_offset: 180.0,
            vfov: 50.0,
            render: RenderConfig {
                samples_per_ray: 512,
                stratified_jitter: false,
                ..Default::default()
            },
        }
    }
}

impl OracleViews {
    pub fn poses(&self, n: usize) -> Result<Vec<CameraPose>> {
        if self.elevations.is_empty() {
            return Err(Error::invalid("at least one elevation is required"));
        }
        (0..n)
            .map(|i| {
                let az = self.azimuth_offset + 360.0 * i as f64 / n as f64;
                orbit_camera(self.radius, self.elevations[i % self.elevations.len()], az)
            })
            .collect()
    }
}

/// Rendered views of an oracle scene with their exact depth maps. View 0 is
/// the designated input view.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleDataset {
    pub label: String,
    pub spec_hash: String,
    pub cameras: Vec<(CameraIntrinsics, CameraPose)>,
    pub images: Vec<Image>,
    pub depths: Vec<DepthMap>,
}

pub fn make_oracle_scene(
    spec: &OracleSceneSpec,
    n_views: usize,
    width: usize,
    height: usize,
    views: &OracleViews,
) -> Result<OracleDataset> {
    spec.validate()?;
    if n_views == 0 {
        return Err(Error::invalid("need at least one view"));
    }
    let intr = CameraIntrinsics::from_fov(width, height, views.vfov)?;
    let render = RenderConfig {
        background: spec.background,
        seed: spec.seed,
        ..views.render.clone()
    };
    let mut out = OracleDataset {
        label: spec.label.clone(),
        spec_hash: spec.hash(),
        cameras: Vec::with_capacity(n_views),
        images: Vec::with_capacity(n_views),
        depths: Vec::with_capacity(n_views),
    };
    for pose in views.poses(n_views)? {
        let view = render_image(spec, &intr, &pose, &render, &SceneBox::default())?;
        out.images.push(view.image);
        out.depths.push(spec.depth_map(&intr, &pose)?);
        out.cameras.push((intr, pose));
    }
    Ok(out)
}

/// Affine distortion plus Gaussian noise, mimicking a monocular estimate
/// known only up to scale and shift. Non-finite entries are kept.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthNoise {
    pub scale: f64,
    pub shift: f64,
    pub std: f64,
    pub seed: u64,
}

pub fn distort_depth(depth: &DepthMap, noise: &DepthNoise) -> Result<DepthMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let data = depth
        .data()
        .iter()
        .map(|&d| {
            let e: f64 = rng.sample(StandardNormal);
            if d.is_finite() {
                noise.scale * d + noise.shift + noise.std * e
            } else {
                d
            }
        })
        .collect();
    DepthMap::new(depth.width(), depth.height(), data)
}

/// Object families of the procedural vocabulary. Each family has its own
/// silhouette and palette; instances vary in size, placement and tint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneClass {
    Ball,
    Crate,
    Snowman,
    Pillar,
    Dumbbell,
}

pub const SCENE_CLASSES: [SceneClass; 5] = [
    SceneClass::Ball,
    SceneClass::Crate,
    SceneClass::Snowman,
    SceneClass::Pillar,
    SceneClass::Dumbbell,
];

fn tint<R: Rng + ?Sized>(rng: &mut R, base: [f64; 3]) -> [f64; 3] {
    base.map(|c| (c + rng.random_range(-0.08..0.08)).clamp(0.0, 1.0))
}

impl SceneClass {
    pub fn name(self) -> &'static str {
        match self {
            SceneClass::Ball => "ball",
            SceneClass::Crate => "crate",
            SceneClass::Snowman => "snowman",
            SceneClass::Pillar => "pillar",
            SceneClass::Dumbbell => "dumbbell",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        SCENE_CLASSES.iter().copied().find(|c| c.name() == name)
    }

    /// A random member of the family.
    pub fn instance<R: Rng + ?Sized>(self, rng: &mut R, density: f64) -> OracleSceneSpec {
        let prim = |shape, center, texture| Primitive {
            shape,
            center,
            texture,
            density,
        };
        let primitives = match self {
            SceneClass::Ball => {
                let r = rng.random_range(0.45..0.65);
                vec![prim(
                    Shape::Sphere { radius: r },
                    [0.0, 0.0, 0.0],
                    Texture::Constant {
                        rgb: tint(rng, [0.85, 0.2, 0.15]),
                    },
                )]
            }
            SceneClass::Crate => {
                let h = rng.random_range(0.35..0.5);
                vec![prim(
                    Shape::Box { half_extent: [h; 3] },
                    [0.0, 0.0, 0.0],
                    Texture::Checker {
                        a: tint(rng, [0.2, 0.35, 0.85]),
                        b: tint(rng, [0.1, 0.15, 0.45]),
                        cell: h,
                    },
                )]
            }
            SceneClass::Snowman => {
                let r0 = rng.random_range(0.35..0.42);
                let r1 = rng.random_range(0.22..0.28);
                let body = tint(rng, [0.92, 0.92, 0.95]);
                vec![
                    prim(
                        Shape::Sphere { radius: r0 },
                        [0.0, -0.25, 0.0],
                        Texture::Constant { rgb: body },
                    ),
                    prim(
                        Shape::Sphere { radius: r1 },
                        [0.0, -0.25 + r0 + 0.8 * r1, 0.0],
                        Texture::Constant {
                            rgb: tint(rng, [0.75, 0.75, 0.8]),
                        },
                    ),
                ]
            }
            SceneClass::Pillar => {
                let w = rng.random_range(0.15..0.22);
                let h = rng.random_range(0.65..0.8);
                vec![prim(
                    Shape::Box { half_extent: [w, h, w] },
                    [0.0, 0.0, 0.0],
                    Texture::Constant {
                        rgb: tint(rng, [0.2, 0.7, 0.25]),
                    },
                )]
            }
            SceneClass::Dumbbell => {
                let r = rng.random_range(0.22..0.3);
                let x = rng.random_range(0.5..0.62);
                let c = tint(rng, [0.9, 0.8, 0.15]);
                vec![
                    prim(
                        Shape::Sphere { radius: r },
                        [-x, 0.0, 0.0],
                        Texture::Constant { rgb: c },
                    ),
                    prim(Shape::Sphere { radius: r }, [x, 0.0, 0.0], Texture::Constant { rgb: c }),
                    prim(
                        Shape::Box {
                            half_extent: [x, 0.06, 0.06],
                        },
                        [0.0, 0.0, 0.0],
                        Texture::Constant {
                            rgb: tint(rng, [0.35, 0.35, 0.35]),
                        },
                    ),
                ]
            }
        };
        OracleSceneSpec {
            label: self.name().to_string(),
            primitives,
            background: Background::White,
            seed: rng.random::<u32>() as u64,
        }
    }
}

/// Labeled renders of random family members from random orbit views, the
/// training set of the toy prior.
pub fn render_sprites(
    classes: &[SceneClass],
    per_class: usize,
    views: &NovelConfig,
    samples_per_ray: usize,
    seed: u64,
) -> Result<LabeledImages> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(classes.len() * per_class);
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    let render = RenderConfig {
        samples_per_ray,
        stratified_jitter: false,
        ..Default::default()
    };
    let sprite_views = NovelConfig {
        render_size: views.prior_size,
        ..views.clone()
    };
    for _ in 0..per_class {
        for (label, class) in classes.iter().enumerate() {
            let spec = class.instance(&mut rng, 40.0);
            let (pose, intr) = sample_view(&mut rng, &sprite_views)?;
            let view = render_image(&spec, &intr, &pose, &render, &SceneBox::default())?;
            images.push(view.image);
            labels.push(label);
        }
    }
    Ok(LabeledImages {
        images,
        labels,
        vocabulary: classes.iter().map(|c| c.name().to_string()).collect(),
    })
}
