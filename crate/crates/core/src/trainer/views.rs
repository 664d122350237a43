use rand::Rng;

use super::config::NovelConfig;
use crate::error::Result;
use crate::render::{CameraIntrinsics, CameraPose};

/// World up for sampled and canonical cameras.
pub const WORLD_UP: [f64; 3] = [0.0, 1.0, 0.0];

/// Distance and field of view assumed for an input image without a camera.
pub const CANONICAL_DISTANCE: f64 = 2.5;
pub const CANONICAL_VFOV: f64 = 50.0;

/// Point at `radius` from the origin; elevation above the xz-plane and
/// azimuth measured from +z towards +x, both in degrees.
pub fn orbit_position(radius: f64, elevation_deg: f64, azimuth_deg: f64) -> [f64; 3] {
    let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
    [
        radius * el.cos() * az.sin(),
        radius * el.sin(),
        radius * el.cos() * az.cos(),
    ]
}

/// Camera on the orbit looking at the origin with image-up along +y.
pub fn orbit_camera(radius: f64, elevation_deg: f64, azimuth_deg: f64) -> Result<CameraPose> {
    CameraPose::look_at(orbit_position(radius, elevation_deg, azimuth_deg), [0.0; 3], WORLD_UP)
}

/// Random camera for the novel-view loss: radius and elevation uniform in
/// their intervals, azimuth uniform on the full circle.
pub fn sample_view<R: Rng + ?Sized>(rng: &mut R, cfg: &NovelConfig) -> Result<(CameraPose, CameraIntrinsics)> {
    let radius = rng.random_range(cfg.radius[0]..=cfg.radius[1]);
    let elevation = rng.random_range(cfg.elevation[0]..=cfg.elevation[1]);
    let azimuth = rng.random_range(0.0..360.0);
    let pose = orbit_camera(radius, elevation, azimuth)?;
    let intr = CameraIntrinsics::from_fov(cfg.render_size, cfg.render_size, cfg.vfov)?;
    Ok((pose, intr))
}

/// Default camera for an input image of the given size: on the -z axis at
/// [`CANONICAL_DISTANCE`], looking at the origin, up along +y.
pub fn canonical_camera(width: usize, height: usize) -> Result<(CameraIntrinsics, CameraPose)> {
    let intr = CameraIntrinsics::from_fov(width, height, CANONICAL_VFOV)?;
    let pose = CameraPose::look_at([0.0, 0.0, -CANONICAL_DISTANCE], [0.0; 3], WORLD_UP)?;
    Ok((intr, pose))
}
