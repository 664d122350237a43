use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

pub(crate) fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Pinhole intrinsics in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Square pixels, centered principal point, given vertical field of view.
    pub fn from_fov(width: usize, height: usize, vfov_deg: f64) -> Result<Self> {
        if !(vfov_deg > 0.0 && vfov_deg < 180.0) {
            return Err(Error::invalid(format!("field of view {vfov_deg} outside (0, 180)")));
        }
        let f = 0.5 * height as f64 / (0.5 * vfov_deg.to_radians()).tan();
        let k = Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Same field of view at another resolution.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Camera-to-world rigid transform. Camera axes: x right, y down, z forward.
/// The columns of `rotation` are those axes expressed in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: [f64; 3],
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: [f64; 3]) -> Result<Self> {
        let p = Self { rotation, translation };
        p.validate()?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if !r.iter().flatten().chain(&self.translation).all(|v| v.is_finite()) {
            return Err(Error::invalid("camera pose is not finite"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (rtr - want).abs() > 1e-9 {
                    return Err(Error::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        if (det(r) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("camera rotation has determinant != +1"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, image-up aligned with `up`.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Result<Self> {
        let fwd = [target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]];
        if norm(fwd) < 1e-12 {
            return Err(Error::invalid("look-at eye and target coincide"));
        }
        let z = normalize(fwd);
        let side = cross(z, up);
        if norm(side) < 1e-9 {
            return Err(Error::invalid("look-at direction is parallel to the up vector"));
        }
        let x = normalize(side);
        let y = cross(z, x);
        Ok(Self {
            rotation: [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]],
            translation: eye,
        })
    }

    pub fn axis(&self, k: usize) -> [f64; 3] {
        [self.rotation[0][k], self.rotation[1][k], self.rotation[2][k]]
    }

    /// Apply the world-space rigid motion `x -> rotation * x + translation`.
    pub fn transformed(&self, rotation: &Mat3, translation: [f64; 3]) -> Self {
        let t = mat_vec(rotation, self.translation);
        Self {
            rotation: mat_mul(rotation, &self.rotation),
            translation: [t[0] + translation[0], t[1] + translation[1], t[2] + translation[2]],
        }
    }
}

/// Axis-aligned box bounding the scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for SceneBox {
    fn default() -> Self {
        Self {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }
}

/// `r(t) = origin + t * direction` for `t` in `[t_near, t_far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub direction: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: [f64; 3], direction: [f64; 3], t_near: f64, t_far: f64) -> Result<Self> {
        if (norm(direction) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("ray direction must be unit length"));
        }
        if !(0.0 <= t_near && t_near < t_far) || !t_far.is_finite() {
            return Err(Error::invalid(format!("bad ray interval [{t_near}, {t_far}]")));
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.direction[0],
            self.origin[1] + t * self.direction[1],
            self.origin[2] + t * self.direction[2],
        ]
    }
}

/// Smallest near bound handed out for cameras inside the box.
pub const MIN_NEAR: f64 = 1e-3;

/// Slab intersection; `None` when the line misses the box or the box lies
/// behind the origin.
pub fn intersect_box(origin: [f64; 3], direction: [f64; 3], bbox: &SceneBox) -> Option<(f64, f64)> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for a in 0..3 {
        if direction[a] == 0.0 {
            if origin[a] < bbox.min[a] || origin[a] > bbox.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / direction[a];
        let (t0, t1) = ((bbox.min[a] - origin[a]) * inv, (bbox.max[a] - origin[a]) * inv);
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    let lo = lo.max(MIN_NEAR);
    (hi > lo).then_some((lo, hi))
}

/// Ray through continuous pixel position `px` (pixel `(i, j)` has its center
/// at `(i + 0.5, j + 0.5)`). `Ok(None)` flags a ray that misses the box.
pub fn pixel_to_ray(intr: &CameraIntrinsics, pose: &CameraPose, px: [f64; 2], bbox: &SceneBox) -> Result<Option<Ray>> {
    if !(0.0..=intr.width as f64).contains(&px[0]) || !(0.0..=intr.height as f64).contains(&px[1]) {
        return Err(Error::invalid(format!(
            "pixel {px:?} outside the {}x{} image",
            intr.width, intr.height
        )));
    }
    let d_cam = [(px[0] - intr.cx) / intr.fx, (px[1] - intr.cy) / intr.fy, 1.0];
    let direction = normalize(mat_vec(&pose.rotation, d_cam));
    Ok(
        intersect_box(pose.translation, direction, bbox).map(|(t_near, t_far)| Ray {
            origin: pose.translation,
            direction,
            t_near,
            t_far,
        }),
    )
}

/// Convention tag written into camera records.
pub const CONVENTION: &str = "x-right,y-down,z-forward";

/// One-line `key=value` record:
/// `fx= fy= cx= cy= width= height= R=<9 row-major> t=<3> conv=<tag>`.
pub fn format_camera_record(intr: &CameraIntrinsics, pose: &CameraPose) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
    format!(
        "fx={:?} fy={:?} cx={:?} cy={:?} width={} height={} R={} t={} conv={CONVENTION}",
        intr.fx,
        intr.fy,
        intr.cx,
        intr.cy,
        intr.width,
        intr.height,
        join(&pose.rotation.concat()),
        join(&pose.translation),
    )
}

pub fn parse_camera_record(line: &str) -> Result<(CameraIntrinsics, CameraPose)> {
    let mut fields: [Option<&str>; 9] = [None; 9];
    const KEYS: [&str; 9] = ["fx", "fy", "cx", "cy", "width", "height", "R", "t", "conv"];
    for tok in line.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::format(format!("camera token `{tok}` is not key=value")))?;
        let slot = KEYS
            .iter()
            .position(|&key| key == k)
            .ok_or_else(|| Error::format(format!("unknown camera key `{k}`")))?;
        if fields[slot].replace(v).is_some() {
            return Err(Error::format(format!("duplicate camera key `{k}`")));
        }
    }
    let get = |i: usize| fields[i].ok_or_else(|| Error::format(format!("camera record lacks `{}`", KEYS[i])));
    let real = |i: usize| -> Result<f64> {
        let s = get(i)?;
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::format(format!("camera `{}` is not a finite number: `{s}`", KEYS[i])))
    };
    let count = |i: usize| -> Result<usize> {
        let s = get(i)?;
        s.parse::<usize>()
            .map_err(|_| Error::format(format!("camera `{}` is not a count: `{s}`", KEYS[i])))
    };
    let list = |i: usize, n: usize| -> Result<Vec<f64>> {
        let s = get(i)?;
        let v: Vec<f64> = s
            .split(',')
            .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::format(format!("camera `{}` has a bad number: `{s}`", KEYS[i])))?;
        if v.len() != n {
            return Err(Error::format(format!(
                "camera `{}` needs {n} values, got {}",
                KEYS[i],
                v.len()
            )));
        }
        Ok(v)
    };
    if get(8)? != CONVENTION {
        return Err(Error::format(format!(
            "unsupported camera convention `{}` (expected `{CONVENTION}`)",
            get(8)?
        )));
    }
    let intr = CameraIntrinsics {
        fx: real(0)?,
        fy: real(1)?,
        cx: real(2)?,
        cy: real(3)?,
        width: count(4)?,
        height: count(5)?,
    };
    intr.validate()?;
    let r = list(6, 9)?;
    let t = list(7, 3)?;
    let pose = CameraPose::new(
        [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
        [t[0], t[1], t[2]],
    )?;
    Ok((intr, pose))
}

/// Parse a camera file: one record per non-empty line, `#` starts a comment.
pub fn parse_camera_file(text: &str) -> Result<Vec<(CameraIntrinsics, CameraPose)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .map(|(i, l)| parse_camera_record(l).map_err(|e| Error::format(format!("line {}: {e}", i + 1))))
        .collect()
}
