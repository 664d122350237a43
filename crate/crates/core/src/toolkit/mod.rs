//! Image and depth files, metrics, oracle scenes and datasets.

mod cli;
mod dataset;
mod eval;
mod io;
mod metrics;
mod oracle;

pub use cli::run;
pub use dataset::{depth_path, load_dataset, rgb_path, save_dataset, DatasetMeta};
pub use eval::{depth_pearson, evaluate, EvalReport, ViewScore, LPIPS_NOTE};
pub use io::{
    decode_pfm, decode_png, encode_pfm, load_depth, load_depth_png16, load_pfm, load_png, save_depth_png16, save_pfm,
    save_png,
};
pub use metrics::{mse, psnr, ssim, ssim_with, SsimParams, LUMA, PSNR_CAP};
pub use oracle::{
    distort_depth, make_oracle_scene, render_sprites, DepthNoise, OracleDataset, OracleSceneSpec, OracleViews,
    Primitive, SceneClass, Shape, Texture, SCENE_CLASSES,
};
