//! Pinhole cameras, ray generation, and volume rendering of color, opacity
//! and depth, both as plain numbers and as recorded graph operations.

mod camera;
mod graph;
mod volume;

pub use camera::{
    format_camera_record, intersect_box, parse_camera_file, parse_camera_record, pixel_to_ray, CameraIntrinsics,
    CameraPose, Mat3, Ray, SceneBox, CONVENTION, MIN_NEAR,
};
pub use graph::{render_rays_graph, RayQuery, RenderedRays};
pub use volume::{
    composite, render_image, render_ray, sample_positions, Background, DepthMode, FnField, RadianceField, RayRender,
    RenderConfig, RenderedView, TRANSPARENT_OPACITY,
};

#[allow(unused_imports)]
pub(crate) use camera::{cross, dot, mat_vec, norm, normalize};
