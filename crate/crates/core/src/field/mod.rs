//! The Lambertian radiance field: a multi-resolution hash-grid encoding
//! followed by a small perceptron, mapping a 3D point to color and density.
//! There is no view-direction input.

mod checkpoint;
mod graph;
mod grid;
mod params;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use graph::{encode_graph, eval_graph, FieldGraphOutput, Points};
pub use grid::{HashGridConfig, LevelSample};
pub use params::{FieldConfig, FieldOutput, FieldParams, FieldVars};
