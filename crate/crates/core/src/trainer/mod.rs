//! The outer optimization: view sampling, Adam updates, learning-rate
//! schedule, logging and checkpoints.

mod adam;
mod config;
mod synth;
mod views;

pub use adam::{Adam, OptimizerState};
pub use config::{
    CheckpointConfig, LossConfig, NovelConfig, OptimConfig, PriorBackend, PriorConfig, ReconConfig, SynthesisConfig,
};
pub use synth::{synthesize, Synthesis, SynthesisInputs};
pub use views::{
    canonical_camera, orbit_camera, orbit_position, sample_view, CANONICAL_DISTANCE, CANONICAL_VFOV, WORLD_UP,
};
